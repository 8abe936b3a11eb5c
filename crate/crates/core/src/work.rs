//! The two-measurement protocol read out by guardian photons.
//!
//! A realization starts in an energy eigenstate drawn from the Gibbs
//! distribution (the state certified by the last photon exchanged before the
//! drive), runs the drive window while counting photons as heat, and is then
//! measured by the first photon exchanged after the drive: an emitted photon
//! certifies |e⟩, an absorbed one certifies |g⟩. Work follows from
//! W = U_f − U_i + Q, in integer multiples of ħω₀.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DriveProtocol, Eigenstate, ModelParams, PureState};
use crate::ode::Integrator;
use crate::quadrature::{QuadratureError, Simpson};
use crate::rng::RngStream;
use crate::trajectory::{
    check_step_size, choose_jump_kind, mc_step, JumpEvent, JumpKind, StepError, StepOutcome, TimeGrid, Trajectory,
    WindowPropagator,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("no guardian photon within {horizon} time units after the drive")]
    GuardianTimeout { horizon: f64 },
    #[error("guardian measurement needs a bath: both rates are zero")]
    NoBath,
    #[error("invalid ensemble setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// One realization of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkRecord {
    pub index: u64,
    pub initial: Eigenstate,
    #[serde(rename = "final")]
    pub final_state: Eigenstate,
    pub n_emissions: u32,
    pub n_absorptions: u32,
    /// Q/ħω₀: photons released to the bath during the drive.
    pub heat_quanta: i64,
    /// W/ħω₀ = U_f − U_i + Q.
    pub work_quanta: i64,
}

impl WorkRecord {
    pub fn from_counts(index: u64, initial: Eigenstate, final_state: Eigenstate, n_emissions: u32, n_absorptions: u32) -> Self {
        let heat_quanta = i64::from(n_emissions) - i64::from(n_absorptions);
        let work_quanta = final_state.energy_quanta() - initial.energy_quanta() + heat_quanta;
        Self { index, initial, final_state, n_emissions, n_absorptions, heat_quanta, work_quanta }
    }

    pub fn n_jumps_during_drive(&self) -> u32 {
        self.n_emissions + self.n_absorptions
    }

    pub fn delta_u_quanta(&self) -> i64 {
        self.final_state.energy_quanta() - self.initial.energy_quanta()
    }
}

/// Bernoulli draw of the pre-drive eigenstate.
pub fn sample_initial_state<R: Rng + ?Sized>(p_g: f64, rng: &mut R) -> Eigenstate {
    if rng.random::<f64>() < p_g {
        Eigenstate::Ground
    } else {
        Eigenstate::Excited
    }
}

/// Q/ħω₀ from the jumps with time in `[0, duration]`.
pub fn heat_from_jumps(jumps: &[JumpEvent<f64>], duration: f64) -> i64 {
    jumps
        .iter()
        .filter(|j| (0.0..=duration).contains(&j.time))
        .map(|j| j.kind.heat_quanta())
        .sum()
}

/// Excited population during the undriven period after the drive:
/// p_e(t) = 1/(1 + r e^{ΔΓ(t−T)}), r = (1 − p_e(T))/p_e(T).
pub fn relaxation_pe(pe_t: f64, delta_gamma: f64, elapsed: f64) -> f64 {
    if pe_t <= 0.0 || pe_t >= 1.0 {
        return pe_t;
    }
    let r = (1.0 - pe_t) / pe_t;
    1.0 / (1.0 + r * (delta_gamma * elapsed).exp())
}

/// ∫₀^s p_e(u) du for the relaxation law above.
fn integrated_pe(pe_t: f64, delta_gamma: f64, s: f64) -> f64 {
    if pe_t <= 0.0 {
        return 0.0;
    }
    if pe_t >= 1.0 {
        return s;
    }
    if delta_gamma == 0.0 {
        return pe_t * s;
    }
    let r = (1.0 - pe_t) / pe_t;
    // ln((1 + r e^{ΔΓ s})/(1 + r)) evaluated without overflow
    let x = delta_gamma * s;
    let log_ratio = if x > 0.0 {
        x + (r + (-x).exp()).ln() - r.ln_1p()
    } else {
        (r * x.exp()).ln_1p() - r.ln_1p()
    };
    s - log_ratio / delta_gamma
}

/// Probability that the guardian photon is an emission, i.e. that the
/// measurement certifies |e⟩:
///
/// P_E = ∫_T^∞ dt Γ↓ p_e(t) exp(−∫_T^t [Γ↑ p_g + Γ↓ p_e] dt'),
///
/// computed by adaptive quadrature; it equals p_e(T) for any rates.
pub fn guardian_excited_probability(pe_t: f64, params: &ModelParams<f64>) -> Result<f64, WorkError> {
    if params.is_isolated() {
        return Err(WorkError::NoBath);
    }
    if pe_t <= 0.0 || params.gamma_down == 0.0 {
        return Ok(0.0);
    }
    let dg = params.delta_gamma();
    let (gu, gd) = (params.gamma_up, params.gamma_down);
    let integrand = |s: f64| {
        let exponent = gu * s + dg * integrated_pe(pe_t, dg, s);
        gd * relaxation_pe(pe_t, dg, s) * (-exponent).exp()
    };
    // The integrand is bounded by Γ↓ e^{-Γ↓ s}; the tail beyond 40/Γ↓ is below 1e-17.
    let upper = 40.0 / gd;
    let r = Simpson { abs_tol: 1e-10, initial_panels: 64, max_depth: 40 }.integrate_scalar(integrand, 0.0, upper)?;
    Ok(r.value)
}

/// Settings for the post-drive guardian measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardianSettings {
    /// Timeout horizon after the drive, in units of 1/min(positive rate).
    pub horizon_times_min_rate: f64,
}

impl Default for GuardianSettings {
    fn default() -> Self {
        Self { horizon_times_min_rate: 50.0 }
    }
}

impl GuardianSettings {
    pub fn horizon(&self, params: &ModelParams<f64>) -> f64 {
        let slowest = [params.gamma_down, params.gamma_up]
            .into_iter()
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min);
        self.horizon_times_min_rate / slowest
    }
}

/// Outcome of a guardian measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardianReading {
    pub measured: Eigenstate,
    /// Time from the end of the drive to the guardian photon.
    pub wait: f64,
}

/// Integrated jump hazard Λ(s) = ∫₀^s [Γ↑ p_g + Γ↓ p_e] du after the drive.
fn guardian_hazard(pe0: f64, params: &ModelParams<f64>, s: f64) -> f64 {
    params.gamma_up * s + params.delta_gamma() * integrated_pe(pe0, params.delta_gamma(), s)
}

/// Wait for the first photon after the drive and read the measured state.
///
/// With the drive off the no-jump population follows the relaxation law in
/// closed form, and so does the no-jump probability e^{−Λ(s)}. The photon
/// time is drawn by inverting it (the continuum limit of the per-step ε test)
/// and the photon is an emission with probability Γ↓p_e/(Γ↑p_g + Γ↓p_e) at
/// that time.
pub fn measure_by_guardian<R: Rng + ?Sized>(
    post_drive: PureState<f64>,
    params: &ModelParams<f64>,
    settings: &GuardianSettings,
    rng: &mut R,
) -> Result<GuardianReading, WorkError> {
    if params.is_isolated() {
        return Err(WorkError::NoBath);
    }
    let horizon = settings.horizon(params);
    let pe0 = post_drive.pop_e() / post_drive.norm_sqr();
    // 1 − u lies in (0, 1], so the target is finite
    let target = -(1.0 - rng.random::<f64>()).ln();
    if !(guardian_hazard(pe0, params, horizon) > target) {
        return Err(WorkError::GuardianTimeout { horizon });
    }
    // Λ is strictly increasing: safeguarded Newton inside a shrinking bracket.
    let (mut lo, mut hi) = (0.0, horizon);
    let mut s = (target / params.jump_rate(pe0).max(f64::MIN_POSITIVE)).clamp(lo, hi);
    for _ in 0..200 {
        let f = guardian_hazard(pe0, params, s) - target;
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let rate = params.jump_rate(relaxation_pe(pe0, params.delta_gamma(), s));
        let newton = s - f / rate;
        let next = if rate > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - s).abs() <= 1e-13 * s.max(1.0) || hi - lo <= 1e-13 * hi.max(1.0) {
            s = next;
            break;
        }
        s = next;
    }
    let pe = relaxation_pe(pe0, params.delta_gamma(), s);
    let measured = match choose_jump_kind(pe, params, rng) {
        JumpKind::Emission => Eigenstate::Excited,
        JumpKind::Absorption => Eigenstate::Ground,
    };
    Ok(GuardianReading { measured, wait: s })
}

/// Born-rule readout, used when the qubit is isolated.
pub fn measure_by_born_rule<R: Rng + ?Sized>(state: PureState<f64>, rng: &mut R) -> Eigenstate {
    let pe = state.pop_e() / state.norm_sqr();
    if rng.random::<f64>() < pe {
        Eigenstate::Excited
    } else {
        Eigenstate::Ground
    }
}

/// Ensemble settings besides the physics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSettings {
    pub n_trajectories: u64,
    pub master_seed: u64,
    /// Drive-window steps per drive period.
    pub dt_per_cycle: u32,
    pub integrator: Integrator,
    pub guardian: GuardianSettings,
}

impl EnsembleSettings {
    pub fn new(n_trajectories: u64, master_seed: u64) -> Self {
        Self {
            n_trajectories,
            master_seed,
            dt_per_cycle: 1000,
            integrator: Integrator::default(),
            guardian: GuardianSettings::default(),
        }
    }

    /// Grid of the drive window `[0, T]`: the smallest number of equal steps
    /// no longer than one `dt_per_cycle`-th of a period.
    pub fn drive_grid(&self, protocol: &DriveProtocol<f64>) -> Result<TimeGrid<f64>, WorkError> {
        if self.dt_per_cycle == 0 {
            return Err(WorkError::InvalidSetting("dt_per_cycle must be at least 1".into()));
        }
        Ok(TimeGrid::covering(0.0, protocol.duration, protocol.period() / f64::from(self.dt_per_cycle))?)
    }
}

/// How the final state was read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    GuardianPhoton,
    /// Isolated qubit: Born sampling of |b(T)|².
    BornRule,
}

/// Records of an ensemble, in index order, with the discarded indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub records: Vec<WorkRecord>,
    pub timeouts: Vec<u64>,
    pub readout: Readout,
}

/// Realizations of the protocol sharing one precomputed drive window.
pub struct ProtocolSampler {
    params: ModelParams<f64>,
    window: WindowPropagator<f64>,
    settings: EnsembleSettings,
    readout: Readout,
}

impl ProtocolSampler {
    pub fn new(params: ModelParams<f64>, protocol: &DriveProtocol<f64>, settings: EnsembleSettings) -> Result<Self, WorkError> {
        let grid = settings.drive_grid(protocol)?;
        let window = WindowPropagator::new(params, protocol, grid, settings.integrator, true)?;
        let readout = if params.is_isolated() { Readout::BornRule } else { Readout::GuardianPhoton };
        Ok(Self { params, window, settings, readout })
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    /// Realization `index`; a pure function of `(master_seed, index)`.
    pub fn sample(&self, index: u64) -> Result<WorkRecord, WorkError> {
        let mut rng = RngStream::new(self.settings.master_seed, index).generator();
        let (p_g, _) = self.params.gibbs();
        let initial = sample_initial_state(p_g, &mut rng);
        let run = self.window.run(initial, &mut rng, |_, _, _| {})?;
        let n_emissions = run.jumps.iter().filter(|j| j.kind == JumpKind::Emission).count() as u32;
        let n_absorptions = run.jumps.len() as u32 - n_emissions;
        let final_state = match self.readout {
            Readout::BornRule => measure_by_born_rule(run.final_state, &mut rng),
            Readout::GuardianPhoton => {
                measure_by_guardian(run.final_state, &self.params, &self.settings.guardian, &mut rng)?.measured
            }
        };
        Ok(WorkRecord::from_counts(index, initial, final_state, n_emissions, n_absorptions))
    }

    /// All realizations, in parallel on the current rayon pool. Output order
    /// and content do not depend on the number of workers.
    pub fn run(&self) -> Result<EnsembleRun, WorkError> {
        self.run_range(0..self.settings.n_trajectories)
    }

    pub fn run_range(&self, range: std::ops::Range<u64>) -> Result<EnsembleRun, WorkError> {
        let outcomes: Vec<Result<WorkRecord, WorkError>> = range.clone().into_par_iter().map(|i| self.sample(i)).collect();
        let mut records = Vec::with_capacity(outcomes.len());
        let mut timeouts = Vec::new();
        for (i, outcome) in range.zip(outcomes) {
            match outcome {
                Ok(r) => records.push(r),
                Err(WorkError::GuardianTimeout { .. }) => timeouts.push(i),
                Err(e) => return Err(e),
            }
        }
        Ok(EnsembleRun { records, timeouts, readout: self.readout })
    }
}

/// Run `settings.n_trajectories` realizations of the protocol.
pub fn run_protocol_ensemble(
    params: &ModelParams<f64>,
    protocol: &DriveProtocol<f64>,
    settings: &EnsembleSettings,
) -> Result<EnsembleRun, WorkError> {
    if settings.n_trajectories == 0 {
        return Err(WorkError::InvalidSetting("n_trajectories must be at least 1".into()));
    }
    ProtocolSampler::new(*params, protocol, *settings)?.run()
}

/// A single realization traced through an undriven prelude, the drive and
/// the guardian tail, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolTrace {
    pub trajectory: Trajectory<f64>,
    /// `None` when no guardian photon arrived within the tail.
    pub record: Option<WorkRecord>,
    pub drive_start: f64,
    pub drive_end: f64,
}

/// Trace one realization: the prelude `[−prelude, 0]` starts from a Gibbs
/// draw, the last photon before the drive fixes the initial eigenstate, and
/// the tail runs until the first photon after the drive plus `tail_margin`,
/// at most `max_tail`.
pub fn trace_protocol(
    params: &ModelParams<f64>,
    protocol: &DriveProtocol<f64>,
    dt_per_cycle: u32,
    prelude: f64,
    tail_margin: f64,
    max_tail: f64,
    stream: RngStream,
) -> Result<ProtocolTrace, WorkError> {
    if dt_per_cycle == 0 {
        return Err(WorkError::InvalidSetting("dt_per_cycle must be at least 1".into()));
    }
    let dt = protocol.period() / f64::from(dt_per_cycle);
    check_step_size(params, dt)?;
    let mut rng = stream.generator();
    let (p_g, _) = params.gibbs();
    let start = sample_initial_state(p_g, &mut rng);
    let mut seg = Segment { samples: Vec::new(), jumps: Vec::new(), params, protocol };

    let (mut state, _) = if prelude > 0.0 {
        seg.run(TimeGrid::covering(-prelude, 0.0, dt)?, PureState::eigen(start), None, &mut rng)?
    } else {
        seg.samples.push((0.0, PureState::<f64>::eigen(start).pop_e()));
        (PureState::eigen(start), None)
    };
    let initial = if state.pop_e() > 0.5 { Eigenstate::Excited } else { Eigenstate::Ground };
    let n_before = seg.jumps.len();
    state = seg.run(TimeGrid::covering(0.0, protocol.duration, dt)?, state, None, &mut rng)?.0;
    let drive_jumps = &seg.jumps[n_before..];
    let n_emissions = drive_jumps.iter().filter(|j| j.kind == JumpKind::Emission).count() as u32;
    let n_absorptions = drive_jumps.len() as u32 - n_emissions;
    let n_before_tail = seg.jumps.len();
    let tail_grid = TimeGrid::covering(protocol.duration, protocol.duration + max_tail, dt)?;
    let (final_state, _) = seg.run(tail_grid, state, Some(tail_margin), &mut rng)?;
    let record = seg.jumps.get(n_before_tail).map(|guardian| {
        let measured = match guardian.kind {
            JumpKind::Emission => Eigenstate::Excited,
            JumpKind::Absorption => Eigenstate::Ground,
        };
        WorkRecord::from_counts(stream.stream_index, initial, measured, n_emissions, n_absorptions)
    });
    Ok(ProtocolTrace {
        trajectory: Trajectory { jumps: seg.jumps, samples: seg.samples, final_state },
        record,
        drive_start: 0.0,
        drive_end: protocol.duration,
    })
}

struct Segment<'a> {
    samples: Vec<(f64, f64)>,
    jumps: Vec<JumpEvent<f64>>,
    params: &'a ModelParams<f64>,
    protocol: &'a DriveProtocol<f64>,
}

impl Segment<'_> {
    /// Step over `grid`, one step at a time so that the tail can stop
    /// `stop_after` time units past its first photon.
    fn run<R: Rng + ?Sized>(
        &mut self,
        grid: TimeGrid<f64>,
        from: PureState<f64>,
        stop_after: Option<f64>,
        rng: &mut R,
    ) -> Result<(PureState<f64>, Option<f64>), WorkError> {
        let mut state = from;
        let mut first_jump = None;
        if self.samples.is_empty() {
            self.samples.push((grid.t_start, state.pop_e()));
        }
        for k in 0..grid.n_steps {
            let t = grid.time(k);
            if let (Some(margin), Some(tj)) = (stop_after, first_jump) {
                if t >= tj + margin {
                    break;
                }
            }
            match mc_step(state, t, grid.dt, self.params, self.protocol, Integrator::RungeKutta4, rng)? {
                StepOutcome::NoJump(next) => state = next,
                StepOutcome::Jump(ev) => {
                    state = PureState::eigen(ev.kind.target());
                    self.jumps.push(ev);
                    first_jump.get_or_insert(ev.time);
                }
            }
            self.samples.push((grid.time(k + 1), state.pop_e()));
        }
        Ok((state, first_jump))
    }
}
