//! Quantum-jump Monte Carlo evolution of a single qubit trajectory.
//!
//! Between jumps the state follows the normalized no-jump equations
//! ([`crate::ode`]). Each step of length Δt draws ε ~ U(0,1); if ε < Δp with
//! Δp = Δt[|a|²Γ↑ + |b|²Γ↓] a photon is exchanged and a second draw selects
//! emission (probability |b|²Γ↓/(Δp/Δt)) or absorption. Jumps are placed at
//! the end of the step and consume the remainder of it.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DriveProtocol, Eigenstate, ModelParams, PureState};
use crate::ode::{advance, amplitude_rates, Advance, Integrator};
use crate::scalar::{Cplx, Real};

/// Largest jump probability accepted for a single step.
pub const MAX_STEP_JUMP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(
        "time step too large at t = {t}: jump probability {delta_p} ≥ {limit}; \
         reduce dt (increase dt_per_cycle) so that dt·max(Γ↑, Γ↓) < {limit}",
        limit = MAX_STEP_JUMP_PROBABILITY
    )]
    StepTooLarge { t: f64, delta_p: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("window [{start}, {end}] is not an integer number of steps of {dt}")]
    IncommensurateWindow { start: f64, end: f64, dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpKind {
    /// e → g, photon released into the bath.
    Emission,
    /// g → e, photon taken from the bath.
    Absorption,
}

impl JumpKind {
    /// Eigenstate the qubit is projected onto.
    pub fn target(self) -> Eigenstate {
        match self {
            JumpKind::Emission => Eigenstate::Ground,
            JumpKind::Absorption => Eigenstate::Excited,
        }
    }

    /// Heat released to the bath, in quanta of ħω₀.
    pub fn heat_quanta(self) -> i64 {
        match self {
            JumpKind::Emission => 1,
            JumpKind::Absorption => -1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            JumpKind::Emission => "emission",
            JumpKind::Absorption => "absorption",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent<T> {
    pub time: T,
    pub kind: JumpKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome<T> {
    NoJump(PureState<T>),
    Jump(JumpEvent<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub jumps: Vec<JumpEvent<T>>,
    /// `(t, |b(t)|²)` on the output grid.
    pub samples: Vec<(T, T)>,
    pub final_state: PureState<T>,
}

/// Uniform grid `t_k = t_start + k·dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    pub t_start: T,
    pub dt: T,
    pub n_steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_start: T, dt: T, n_steps: usize) -> Result<Self, StepError> {
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(StepError::InvalidStep(dt.to_f64_lossy()));
        }
        Ok(Self { t_start, dt, n_steps })
    }

    /// Grid over `[t_start, t_end]`; `dt` must divide the window.
    pub fn spanning(t_start: T, t_end: T, dt: T) -> Result<Self, StepError> {
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(StepError::InvalidStep(dt.to_f64_lossy()));
        }
        let steps = (t_end - t_start) / dt;
        let n = steps.round();
        if n < T::zero() || (steps - n).abs() > T::lit(1e-6) {
            return Err(StepError::IncommensurateWindow {
                start: t_start.to_f64_lossy(),
                end: t_end.to_f64_lossy(),
                dt: dt.to_f64_lossy(),
            });
        }
        Ok(Self { t_start, dt: (t_end - t_start) / n.max(T::one()), n_steps: n.to_usize().unwrap_or(0) })
    }

    /// Grid over `[t_start, t_end]` with the smallest number of equal steps no
    /// longer than `max_dt`.
    pub fn covering(t_start: T, t_end: T, max_dt: T) -> Result<Self, StepError> {
        if !(max_dt.is_finite() && max_dt > T::zero()) {
            return Err(StepError::InvalidStep(max_dt.to_f64_lossy()));
        }
        let span = (t_end - t_start).max(T::zero());
        let n = (span / max_dt - T::lit(1e-9)).ceil().max(T::one()).to_usize().unwrap_or(1);
        Ok(Self { t_start, dt: span / T::from_usize_lossy(n), n_steps: n })
    }

    #[inline]
    pub fn time(&self, k: usize) -> T {
        self.t_start + self.dt * T::from_usize_lossy(k)
    }

    pub fn t_end(&self) -> T {
        self.time(self.n_steps)
    }
}

fn check_guard<T: Real>(t: T, delta_p: T) -> Result<(), StepError> {
    if delta_p >= T::lit(MAX_STEP_JUMP_PROBABILITY) || !delta_p.is_finite() {
        return Err(StepError::StepTooLarge { t: t.to_f64_lossy(), delta_p: delta_p.to_f64_lossy() });
    }
    Ok(())
}

/// Up-front guard: Δp never exceeds dt·max(Γ↑, Γ↓).
pub fn check_step_size<T: Real>(params: &ModelParams<T>, dt: T) -> Result<(), StepError> {
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(StepError::InvalidStep(dt.to_f64_lossy()));
    }
    check_guard(T::zero(), dt * params.gamma_down.max(params.gamma_up))
}

/// Time derivatives `(ȧ, ḃ)` of the no-jump equations at time `t`.
pub fn no_jump_derivatives<T: Real>(
    state: PureState<T>,
    t: T,
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
) -> (Cplx<T>, Cplx<T>) {
    let r = amplitude_rates(state, protocol.coupling(t, params.omega0), params.delta_gamma());
    (r.a, r.b)
}

/// Advance `state` by `dt` assuming no photon is exchanged. Returns the
/// normalized state and the jump probability Δp of the step.
pub fn step_no_jump<T: Real>(
    state: PureState<T>,
    t: T,
    dt: T,
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    integrator: Integrator,
) -> Result<(PureState<T>, T), StepError> {
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(StepError::InvalidStep(dt.to_f64_lossy()));
    }
    let w0 = params.omega0;
    let c = [
        protocol.coupling(t, w0),
        protocol.coupling(t + dt * T::half(), w0),
        protocol.coupling(t + dt, w0),
    ];
    let f0 = amplitude_rates(state, c[0], params.delta_gamma());
    let Advance { state, delta_p, .. } = advance(state, f0, c, dt, params, integrator);
    check_guard(t, delta_p)?;
    Ok((state, delta_p))
}

/// Choose emission vs absorption given that a jump fired in a state with
/// excited population `pop_e`.
pub fn choose_jump_kind<T: Real, R: Rng + ?Sized>(pop_e: T, params: &ModelParams<T>, rng: &mut R) -> JumpKind {
    let emit = params.gamma_down * pop_e;
    let total = params.jump_rate(pop_e);
    let u = T::lit(rng.random::<f64>());
    if u * total < emit {
        JumpKind::Emission
    } else {
        JumpKind::Absorption
    }
}

/// The ε test of one step: `true` when a jump fires.
#[inline]
fn jump_fires<T: Real, R: Rng + ?Sized>(delta_p: T, rng: &mut R) -> bool {
    T::lit(rng.random::<f64>()) < delta_p
}

/// Jump-population used for the branch choice: the midpoint population the
/// step's Δp was built from.
#[inline]
fn branch_population<T: Real>(delta_p: T, dt: T, params: &ModelParams<T>, fallback: T) -> T {
    let dg = params.delta_gamma();
    if dg == T::zero() {
        return fallback;
    }
    // Δp/dt = Γ↑ + ΔΓ·pop_e
    ((delta_p / dt - params.gamma_up) / dg).max(T::zero()).min(T::one())
}

/// One Monte Carlo step: no-jump evolution or a jump at `t + dt`.
pub fn mc_step<T: Real, R: Rng + ?Sized>(
    state: PureState<T>,
    t: T,
    dt: T,
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    integrator: Integrator,
    rng: &mut R,
) -> Result<StepOutcome<T>, StepError> {
    let (next, delta_p) = step_no_jump(state, t, dt, params, protocol, integrator)?;
    if jump_fires(delta_p, rng) {
        let pop = branch_population(delta_p, dt, params, state.pop_e());
        let kind = choose_jump_kind(pop, params, rng);
        Ok(StepOutcome::Jump(JumpEvent { time: t + dt, kind }))
    } else {
        Ok(StepOutcome::NoJump(next))
    }
}

/// Precomputed deterministic no-jump path from an eigenstate at the start of
/// a window. Every trajectory that has not jumped yet follows it exactly.
#[derive(Debug, Clone)]
struct NoJumpPath<T> {
    states: Vec<PureState<T>>,
    delta_p: Vec<T>,
    /// `survival[k]` = ∏_{j<k} (1 − Δp_j), accumulated as in the stepping loop.
    survival: Vec<T>,
}

/// Monte Carlo propagator over a fixed grid, with the drive tabulated at
/// half steps and optional cached no-jump paths from both eigenstates.
#[derive(Debug, Clone)]
pub struct WindowPropagator<T> {
    params: ModelParams<T>,
    integrator: Integrator,
    grid: TimeGrid<T>,
    couplings: Vec<Cplx<T>>,
    cached: Option<[NoJumpPath<T>; 2]>,
}

/// Outcome of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRun<T> {
    pub jumps: Vec<JumpEvent<T>>,
    pub final_state: PureState<T>,
}

impl<T: Real> WindowPropagator<T> {
    pub fn new(
        params: ModelParams<T>,
        protocol: &DriveProtocol<T>,
        grid: TimeGrid<T>,
        integrator: Integrator,
        cache_paths: bool,
    ) -> Result<Self, StepError> {
        check_step_size(&params, grid.dt)?;
        let half = grid.dt * T::half();
        let couplings = (0..=2 * grid.n_steps)
            .map(|j| protocol.coupling(grid.t_start + half * T::from_usize_lossy(j), params.omega0))
            .collect();
        let mut prop = Self { params, integrator, grid, couplings, cached: None };
        if cache_paths {
            prop.cached = Some([prop.trace_no_jump(Eigenstate::Ground)?, prop.trace_no_jump(Eigenstate::Excited)?]);
        }
        Ok(prop)
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    #[inline]
    fn step(&self, k: usize, state: PureState<T>, start_rates: PureState<T>) -> Result<Advance<T>, StepError> {
        let c = [self.couplings[2 * k], self.couplings[2 * k + 1], self.couplings[2 * k + 2]];
        let adv = advance(state, start_rates, c, self.grid.dt, &self.params, self.integrator);
        check_guard(self.grid.time(k), adv.delta_p)?;
        Ok(adv)
    }

    #[inline]
    fn rates_at(&self, k: usize, state: PureState<T>) -> PureState<T> {
        amplitude_rates(state, self.couplings[2 * k], self.params.delta_gamma())
    }

    fn trace_no_jump(&self, from: Eigenstate) -> Result<NoJumpPath<T>, StepError> {
        let n = self.grid.n_steps;
        let mut states = Vec::with_capacity(n + 1);
        let mut delta_p = Vec::with_capacity(n);
        let mut state = PureState::eigen(from);
        let mut rates = self.rates_at(0, state);
        states.push(state);
        for k in 0..n {
            let adv = self.step(k, state, rates)?;
            state = adv.state;
            rates = adv.end_rates;
            states.push(state);
            delta_p.push(adv.delta_p);
        }
        let mut survival = Vec::with_capacity(n + 1);
        let mut s = T::one();
        survival.push(s);
        for &p in &delta_p {
            s *= T::one() - p;
            survival.push(s);
        }
        Ok(NoJumpPath { states, delta_p, survival })
    }

    /// Run one trajectory over the window starting from an eigenstate.
    ///
    /// Jumps are drawn by inversion: one uniform `u` per inter-jump stretch,
    /// and the jump fires in the first step whose cumulative no-jump
    /// probability ∏(1 − Δp) falls below `u`. This has the same law as an
    /// independent Bernoulli(Δp) draw per step.
    ///
    /// `observe(k, pop_e, jumped)` is called for the initial point (`k = 0`)
    /// and after every step `k = 1..=n_steps` with the post-step state.
    pub fn run<R: Rng + ?Sized>(
        &self,
        initial: Eigenstate,
        rng: &mut R,
        mut observe: impl FnMut(usize, T, Option<JumpKind>),
    ) -> Result<WindowRun<T>, StepError> {
        let n = self.grid.n_steps;
        let dt = self.grid.dt;
        let mut jumps = Vec::new();
        let mut state = PureState::eigen(initial);
        observe(0, state.pop_e(), None);

        let mut k = 0;
        let mut u = T::lit(rng.random::<f64>());
        // Follow the shared path until the first jump.
        if let Some(paths) = &self.cached {
            let path = &paths[initial as usize];
            // survival[j] is non-increasing, so the jump step is a partition point
            let fire = path.survival[1..].partition_point(|&s| s >= u);
            for j in 1..=fire.min(n) {
                observe(j, path.states[j].pop_e(), None);
            }
            if fire < n {
                let delta_p = path.delta_p[fire];
                let pop = branch_population(delta_p, dt, &self.params, path.states[fire].pop_e());
                let kind = choose_jump_kind(pop, &self.params, rng);
                jumps.push(JumpEvent { time: self.grid.time(fire + 1), kind });
                state = PureState::eigen(kind.target());
                k = fire + 1;
                observe(k, state.pop_e(), Some(kind));
                u = T::lit(rng.random::<f64>());
            } else {
                k = n;
                state = path.states[n];
            }
        }

        let mut survival = T::one();
        let mut rates = self.rates_at(k, state);
        while k < n {
            let adv = self.step(k, state, rates)?;
            survival *= T::one() - adv.delta_p;
            if survival < u {
                let pop = branch_population(adv.delta_p, dt, &self.params, state.pop_e());
                let kind = choose_jump_kind(pop, &self.params, rng);
                jumps.push(JumpEvent { time: self.grid.time(k + 1), kind });
                state = PureState::eigen(kind.target());
                k += 1;
                rates = self.rates_at(k, state);
                observe(k, state.pop_e(), Some(kind));
                survival = T::one();
                u = T::lit(rng.random::<f64>());
            } else {
                state = adv.state;
                rates = adv.end_rates;
                k += 1;
                observe(k, state.pop_e(), None);
            }
        }
        Ok(WindowRun { jumps, final_state: state })
    }
}

/// How often [`run_trajectory`] records `(t, |b|²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    None,
    /// Every n-th grid point, plus the end point and every jump.
    Every(usize),
}

/// Simulate one trajectory over `grid` from an eigenstate.
pub fn run_trajectory<T: Real, R: Rng + ?Sized>(
    initial: Eigenstate,
    grid: TimeGrid<T>,
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    integrator: Integrator,
    sampling: Sampling,
    rng: &mut R,
) -> Result<Trajectory<T>, StepError> {
    let prop = WindowPropagator::new(*params, protocol, grid, integrator, false)?;
    let mut samples = Vec::new();
    let n = grid.n_steps;
    let run = prop.run(initial, rng, |k, pop, jump| {
        if let Sampling::Every(every) = sampling {
            if k % every.max(1) == 0 || k == n || jump.is_some() {
                samples.push((grid.time(k), pop));
            }
        }
    })?;
    Ok(Trajectory { jumps: run.jumps, samples, final_state: run.final_state })
}

/// Step from `state` at `t0` until the first jump, for at most `max_steps`
/// steps of `dt`. Returns `None` if no photon was exchanged.
#[allow(clippy::too_many_arguments)]
pub fn evolve_until_jump<T: Real, R: Rng + ?Sized>(
    state: PureState<T>,
    t0: T,
    dt: T,
    max_steps: usize,
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    integrator: Integrator,
    rng: &mut R,
) -> Result<Option<JumpEvent<T>>, StepError> {
    check_step_size(params, dt)?;
    let w0 = params.omega0;
    let half = dt * T::half();
    let mut state = state;
    let mut rates = amplitude_rates(state, protocol.coupling(t0, w0), params.delta_gamma());
    for k in 0..max_steps {
        let t = t0 + dt * T::from_usize_lossy(k);
        let c = [protocol.coupling(t, w0), protocol.coupling(t + half, w0), protocol.coupling(t + dt, w0)];
        let adv = advance(state, rates, c, dt, params, integrator);
        check_guard(t, adv.delta_p)?;
        if jump_fires(adv.delta_p, rng) {
            let pop = branch_population(adv.delta_p, dt, params, state.pop_e());
            let kind = choose_jump_kind(pop, params, rng);
            return Ok(Some(JumpEvent { time: t + dt, kind }));
        }
        state = adv.state;
        rates = adv.end_rates;
    }
    Ok(None)
}
