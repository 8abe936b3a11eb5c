//! Trajectory classes resolved by the number of photons exchanged during
//! the drive.
//!
//! A branch of the Cayley tree is weighted by products of no-jump
//! amplitudes and Poisson factors. Starting from eigenstate `i` at `t₁`, the
//! normalized no-jump amplitudes `(a_i, b_i)` and the exponent
//!
//! ```text
//! π_i(t, t₁) = ∫_{t₁}^{t} [Γ↑ |a_i|² + Γ↓ |b_i|²] dt'
//! ```
//!
//! give the probability `|a_i|² e^{−π_i}` (resp. `|b_i|²e^{−π_i}`) of no photon
//! in `[t₁, t]` followed by a projective readout in |g⟩ (resp. |e⟩). With
//! these, the zero- and one-photon probabilities and their work moments are
//! finite sums and a single integral over the jump time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DriveProtocol, Eigenstate, ModelError, ModelParams, PureState};
use crate::ode::{amplitude_rates, rk4_step, OdeState};
use crate::quadrature::{QuadratureError, Simpson};
use crate::scalar::{Cplx, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CayleyError {
    #[error("closed forms need a resonant sinusoidal drive (ω = {omega}, ω₀ = {omega0})")]
    NotResonant { omega: f64, omega0: f64 },
    #[error("moment ratio undefined: ⟨W⟩ = {0:e}")]
    DegenerateDenominator(f64),
    #[error("propagation window [{0}, {1}] is empty or reversed")]
    InvalidWindow(f64, f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Numerical settings for the propagators and the jump-time quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CayleySettings {
    /// RK4 steps per drive period.
    pub steps_per_cycle: u32,
    pub abs_tol: f64,
    /// Initial quadrature panels per drive period.
    pub panels_per_cycle: u32,
}

impl Default for CayleySettings {
    fn default() -> Self {
        Self { steps_per_cycle: 1000, abs_tol: 1e-9, panels_per_cycle: 8 }
    }
}

/// Amplitudes and Poisson exponent at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitudes<T> {
    pub state: PureState<T>,
    pub pi: T,
}

impl<T: Real> Amplitudes<T> {
    /// Probability of no photon and a readout in `f`.
    pub fn no_photon_probability(&self, f: Eigenstate) -> T {
        let norm = self.state.norm_sqr();
        let pop = match f {
            Eigenstate::Ground => self.state.pop_g(),
            Eigenstate::Excited => self.state.pop_e(),
        };
        pop / norm * (-self.pi).exp()
    }
}

#[derive(Debug, Clone, Copy)]
struct Node<T> {
    amp: Amplitudes<T>,
    d_state: PureState<T>,
    d_pi: T,
}

/// No-jump amplitudes and Poisson exponent from an eigenstate at `t₁`,
/// tabulated on a uniform grid up to `t_end` and interpolated by cubic
/// Hermite polynomials in between.
#[derive(Debug, Clone)]
pub struct AmplitudePropagator<T> {
    pub initial: Eigenstate,
    pub t1: T,
    pub dt: T,
    nodes: Vec<Node<T>>,
}

type Augmented<T> = (PureState<T>, T);

struct Rhs<'a, T> {
    params: &'a ModelParams<T>,
    protocol: &'a DriveProtocol<T>,
}

impl<T: Real> Rhs<'_, T> {
    #[inline]
    fn eval(&self, t: T, y: Augmented<T>) -> Augmented<T> {
        let (psi, _) = y;
        let c = self.protocol.coupling(t, self.params.omega0);
        let rates = amplitude_rates(psi, c, self.params.delta_gamma());
        let pop_e = psi.pop_e() / psi.norm_sqr();
        (rates, self.params.jump_rate(pop_e))
    }

    #[inline]
    fn eval_with(&self, c: Cplx<T>, y: Augmented<T>) -> Augmented<T> {
        let (psi, _) = y;
        let rates = amplitude_rates(psi, c, self.params.delta_gamma());
        let pop_e = psi.pop_e() / psi.norm_sqr();
        (rates, self.params.jump_rate(pop_e))
    }

    #[inline]
    fn step(&self, t: T, y: Augmented<T>, h: T) -> Augmented<T> {
        let (psi, pi) = rk4_step(|t, y| self.eval(t, y), t, y, h);
        (psi.normalized(), pi)
    }

    /// RK4 step with the couplings at the start, middle and end supplied.
    #[inline]
    fn step_with(&self, c: [Cplx<T>; 3], y: Augmented<T>, h: T) -> Augmented<T> {
        let half = h * T::half();
        let k1 = self.eval_with(c[0], y);
        let k2 = self.eval_with(c[1], y.axpy(half, k1));
        let k3 = self.eval_with(c[1], y.axpy(half, k2));
        let k4 = self.eval_with(c[2], y.axpy(h, k3));
        let sixth = h / T::lit(6.0);
        let (psi, pi) = y.axpy(sixth, k1).axpy(sixth * T::two(), k2).axpy(sixth * T::two(), k3).axpy(sixth, k4);
        (psi.normalized(), pi)
    }
}

/// Propagators restarted at arbitrary times inside `[0, T]`. A restart at `t`
/// takes one partial step to the next point of the uniform grid and then
/// follows the grid, whose couplings are tabulated once. Restarted values
/// are therefore smooth in `t` up to the local truncation error.
struct RestartTable<'a, T> {
    rhs: Rhs<'a, T>,
    dt: T,
    n: usize,
    couplings: Vec<Cplx<T>>,
}

impl<'a, T: Real> RestartTable<'a, T> {
    fn new(params: &'a ModelParams<T>, protocol: &'a DriveProtocol<T>, max_dt: T) -> Self {
        let n = step_count(T::zero(), protocol.duration, max_dt);
        let dt = protocol.duration / T::from_usize_lossy(n);
        let half = dt * T::half();
        let couplings = (0..=2 * n)
            .map(|j| protocol.coupling(half * T::from_usize_lossy(j), params.omega0))
            .collect();
        Self { rhs: Rhs { params, protocol }, dt, n, couplings }
    }

    /// Amplitudes at `T` for both eigenstates restarted at `t`.
    fn restart(&self, t: T) -> [Amplitudes<T>; 2] {
        let mut ys = EIGENSTATES.map(|i| (PureState::eigen(i), T::zero()));
        let x = t / self.dt;
        let mut k = x.ceil().max(T::zero()).to_usize().unwrap_or(0).min(self.n);
        let t_k = self.dt * T::from_usize_lossy(k);
        let gap = t_k - t;
        if gap > self.dt * T::lit(1e-9) {
            let w0 = self.rhs.params.omega0;
            let p = self.rhs.protocol;
            let c = [p.coupling(t, w0), p.coupling(t + gap * T::half(), w0), p.coupling(t_k, w0)];
            for y in &mut ys {
                *y = self.rhs.step_with(c, *y, gap);
            }
        } else if gap < -self.dt * T::lit(1e-9) {
            k = self.n;
        }
        while k < self.n {
            let c = [self.couplings[2 * k], self.couplings[2 * k + 1], self.couplings[2 * k + 2]];
            for y in &mut ys {
                *y = self.rhs.step_with(c, *y, self.dt);
            }
            k += 1;
        }
        ys.map(|(state, pi)| Amplitudes { state, pi })
    }
}

fn step_count<T: Real>(t1: T, t_end: T, max_dt: T) -> usize {
    let span = t_end - t1;
    (span / max_dt - T::lit(1e-9)).ceil().max(T::one()).to_usize().unwrap_or(1)
}

/// Tabulate the propagator from `initial` at `t1` to `t_end`.
pub fn propagate_amplitudes<T: Real>(
    initial: Eigenstate,
    t1: T,
    t_end: T,
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    max_dt: T,
) -> Result<AmplitudePropagator<T>, CayleyError> {
    if !(t_end > t1) || !(max_dt > T::zero()) {
        return Err(CayleyError::InvalidWindow(t1.to_f64_lossy(), t_end.to_f64_lossy()));
    }
    let rhs = Rhs { params, protocol };
    let n = step_count(t1, t_end, max_dt);
    let dt = (t_end - t1) / T::from_usize_lossy(n);
    let mut nodes = Vec::with_capacity(n + 1);
    let mut y = (PureState::eigen(initial), T::zero());
    for k in 0..=n {
        let t = t1 + dt * T::from_usize_lossy(k);
        let (d_state, d_pi) = rhs.eval(t, y);
        nodes.push(Node { amp: Amplitudes { state: y.0, pi: y.1 }, d_state, d_pi });
        if k < n {
            y = rhs.step(t, y, dt);
        }
    }
    Ok(AmplitudePropagator { initial, t1, dt, nodes })
}

/// Amplitudes at `t_end` only, without tabulation.
pub fn propagate_to_end<T: Real>(
    initial: Eigenstate,
    t1: T,
    t_end: T,
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    max_dt: T,
) -> Amplitudes<T> {
    let mut y = (PureState::eigen(initial), T::zero());
    if t_end > t1 {
        let rhs = Rhs { params, protocol };
        let n = step_count(t1, t_end, max_dt);
        let dt = (t_end - t1) / T::from_usize_lossy(n);
        for k in 0..n {
            y = rhs.step(t1 + dt * T::from_usize_lossy(k), y, dt);
        }
    }
    Amplitudes { state: y.0, pi: y.1 }
}

impl<T: Real> AmplitudePropagator<T> {
    pub fn t_end(&self) -> T {
        self.t1 + self.dt * T::from_usize_lossy(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tabulated value at grid index `k`.
    pub fn node(&self, k: usize) -> Amplitudes<T> {
        self.nodes[k].amp
    }

    pub fn end(&self) -> Amplitudes<T> {
        self.nodes[self.nodes.len() - 1].amp
    }

    /// Cubic Hermite interpolation at `t ∈ [t₁, t_end]` (clamped).
    pub fn at(&self, t: T) -> Amplitudes<T> {
        let last = self.nodes.len() - 1;
        let x = ((t - self.t1) / self.dt).max(T::zero());
        let k = x.floor().to_usize().unwrap_or(0).min(last.saturating_sub(1));
        if last == 0 {
            return self.nodes[0].amp;
        }
        let s = (x - T::from_usize_lossy(k)).min(T::one());
        let (n0, n1) = (&self.nodes[k], &self.nodes[k + 1]);
        let h = self.dt;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::two();
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        let state = n0
            .amp
            .state
            .scale(h00)
            .axpy(h10 * h, n0.d_state)
            .axpy(h01, n1.amp.state)
            .axpy(h11 * h, n1.d_state);
        let pi = h00 * n0.amp.pi + h10 * h * n0.d_pi + h01 * n1.amp.pi + h11 * h * n1.d_pi;
        Amplitudes { state, pi }
    }
}

trait Scale<T> {
    fn scale(self, s: T) -> Self;
}

impl<T: Real> Scale<T> for PureState<T> {
    fn scale(self, s: T) -> Self {
        PureState { a: self.a * s, b: self.b * s }
    }
}

/// Probability and work moments of one photon-number class, all weighted by
/// the class probability.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotonSector<T> {
    /// P_n
    pub probability: T,
    /// P_n⟨W⟩_n, in units of ħω₀.
    pub weighted_w: T,
    /// P_n⟨W²⟩_n
    pub weighted_w2: T,
    /// P_n⟨e^{−βW}⟩_n
    pub jarzynski_term: T,
}

impl<T: Real> PhotonSector<T> {
    fn from_array(v: [T; 4]) -> Self {
        Self { probability: v[0], weighted_w: v[1], weighted_w2: v[2], jarzynski_term: v[3] }
    }

    /// ⟨W⟩_n
    pub fn mean_w(&self) -> T {
        self.weighted_w / self.probability
    }

    /// ⟨W²⟩_n
    pub fn mean_w2(&self) -> T {
        self.weighted_w2 / self.probability
    }

    /// ⟨W²⟩_n/⟨W⟩_n
    pub fn moment_ratio(&self) -> Result<T, CayleyError> {
        ratio(self.weighted_w2, self.weighted_w)
    }
}

fn ratio<T: Real>(num: T, den: T) -> Result<T, CayleyError> {
    if den.abs() <= T::lit(1e-300) || !den.is_finite() {
        return Err(CayleyError::DegenerateDenominator(den.to_f64_lossy()));
    }
    Ok(num / den)
}

/// Contribution `weight·(1, W, W², e^{−βW})`, skipping exactly-zero weights
/// so that β = ∞ never forms 0·∞.
#[inline]
fn moments<T: Real>(weight: T, w: i64, beta: T) -> [T; 4] {
    if weight == T::zero() {
        return [T::zero(); 4];
    }
    let wf = T::lit(w as f64);
    [weight, weight * wf, weight * wf * wf, weight * (-beta * wf).exp()]
}

#[inline]
fn add4<T: Real>(acc: &mut [T; 4], x: [T; 4]) {
    for i in 0..4 {
        acc[i] += x[i];
    }
}

fn max_step<T: Real>(protocol: &DriveProtocol<T>, settings: &CayleySettings) -> T {
    protocol.period() / T::lit(f64::from(settings.steps_per_cycle.max(1)))
}

const EIGENSTATES: [Eigenstate; 2] = [Eigenstate::Ground, Eigenstate::Excited];

fn populations<T: Real>(params: &ModelParams<T>) -> [T; 2] {
    let (pg, pe) = params.gibbs();
    [pg, pe]
}

/// Zero-photon class: no photon exchanged during `[0, T]`.
pub fn p0_statistics<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    settings: &CayleySettings,
) -> PhotonSector<T> {
    p0_with_populations(params, protocol, settings, populations(params))
}

fn p0_with_populations<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    settings: &CayleySettings,
    pops: [T; 2],
) -> PhotonSector<T> {
    let h = max_step(protocol, settings);
    let beta = params.beta_hbar_omega0;
    let mut acc = [T::zero(); 4];
    for (i, p_i) in EIGENSTATES.into_iter().zip(pops) {
        let end = propagate_to_end(i, T::zero(), protocol.duration, params, protocol, h);
        for f in EIGENSTATES {
            let w = f.energy_quanta() - i.energy_quanta();
            add4(&mut acc, moments(p_i * end.no_photon_probability(f), w, beta));
        }
    }
    PhotonSector::from_array(acc)
}

/// One-photon class: exactly one photon exchanged during `[0, T]`,
/// integrated over its time with restarted propagators.
pub fn p1_statistics<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    settings: &CayleySettings,
) -> Result<PhotonSector<T>, CayleyError> {
    p1_with_populations(params, protocol, settings, populations(params))
}

fn p1_with_populations<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    settings: &CayleySettings,
    pops: [T; 2],
) -> Result<PhotonSector<T>, CayleyError> {
    let duration = protocol.duration;
    if params.is_isolated() || duration == T::zero() {
        return Ok(PhotonSector::default());
    }
    let h = max_step(protocol, settings);
    let first_leg = [
        propagate_amplitudes(Eigenstate::Ground, T::zero(), duration, params, protocol, h)?,
        propagate_amplitudes(Eigenstate::Excited, T::zero(), duration, params, protocol, h)?,
    ];
    let restarts = RestartTable::new(params, protocol, h);
    let beta = params.beta_hbar_omega0;
    let integrand = |t: T| -> [T; 4] {
        let [after_emission, after_absorption] = restarts.restart(t);
        let mut acc = [T::zero(); 4];
        for (leg, p_i) in first_leg.iter().zip(pops) {
            let amp = leg.at(t);
            let norm = amp.state.norm_sqr();
            let survive = p_i * (-amp.pi).exp() / norm;
            let branches = [
                (params.gamma_down * amp.state.pop_e(), &after_emission, 1i64),
                (params.gamma_up * amp.state.pop_g(), &after_absorption, -1i64),
            ];
            for (density, second, q) in branches {
                let weight = survive * density;
                for f in EIGENSTATES {
                    let w = f.energy_quanta() - leg.initial.energy_quanta() + q;
                    add4(&mut acc, moments(weight * second.no_photon_probability(f), w, beta));
                }
            }
        }
        acc
    };
    let cycles = (duration / protocol.period()).ceil().max(T::one()).to_usize().unwrap_or(1);
    let panels = cycles * settings.panels_per_cycle.max(1) as usize;
    let simpson = Simpson { abs_tol: settings.abs_tol, initial_panels: panels, max_depth: 30 };
    let r = simpson.integrate(integrand, T::zero(), duration)?;
    Ok(PhotonSector::from_array(r.value))
}

/// How the reverse process is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReverseConvention {
    /// Reversed drive λ(T − t) with the same physical rates. Along a reversed
    /// trajectory every emission becomes an absorption and vice versa; the
    /// rates themselves are unchanged.
    #[default]
    SameRates,
    /// Reversed drive with ΔΓ → −ΔΓ, i.e. Γ↑ and Γ↓ swapped in the reverse
    /// dynamics. Kept for comparison; it does not satisfy the identities.
    SwappedRates,
}

impl ReverseConvention {
    pub fn reverse_params<T: Real>(&self, params: &ModelParams<T>) -> ModelParams<T> {
        match self {
            ReverseConvention::SameRates => *params,
            ReverseConvention::SwappedRates => ModelParams {
                gamma_down: params.gamma_up,
                gamma_up: params.gamma_down,
                ..*params
            },
        }
    }
}

/// P₀, P₁ with their moments for the forward protocol and the reverse-process
/// probabilities P_{R,0}, P_{R,1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CayleyResult<T> {
    pub zero: PhotonSector<T>,
    pub one: PhotonSector<T>,
    pub reverse_zero: T,
    pub reverse_one: T,
    /// Upper bound (Γ_ΣT)²/2 on the probability of two or more photons.
    pub multi_photon_bound: T,
}

impl<T: Real> CayleyResult<T> {
    pub fn sector(&self, n: usize) -> &PhotonSector<T> {
        if n == 0 {
            &self.zero
        } else {
            &self.one
        }
    }

    pub fn reverse_probability(&self, n: usize) -> T {
        if n == 0 {
            self.reverse_zero
        } else {
            self.reverse_one
        }
    }

    /// (P₀⟨W⟩₀ + P₁⟨W⟩₁)/(P₀ + P₁)
    pub fn mean_w(&self) -> T {
        (self.zero.weighted_w + self.one.weighted_w) / (self.zero.probability + self.one.probability)
    }

    pub fn mean_w2(&self) -> T {
        (self.zero.weighted_w2 + self.one.weighted_w2) / (self.zero.probability + self.one.probability)
    }

    pub fn jarzynski_lhs(&self) -> T {
        self.zero.jarzynski_term + self.one.jarzynski_term
    }

    pub fn jarzynski_rhs(&self) -> T {
        self.reverse_zero + self.reverse_one
    }
}

pub fn multi_photon_bound<T: Real>(params: &ModelParams<T>, protocol: &DriveProtocol<T>) -> T {
    let x = params.gamma_sum() * protocol.duration;
    x * x * T::half()
}

/// Forward zero- and one-photon statistics plus the reverse probabilities.
pub fn analyze<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    settings: &CayleySettings,
    convention: ReverseConvention,
) -> Result<CayleyResult<T>, CayleyError> {
    let pops = populations(params);
    let zero = p0_with_populations(params, protocol, settings, pops);
    let one = p1_with_populations(params, protocol, settings, pops)?;
    let rev_params = convention.reverse_params(params);
    let rev = protocol.reversed();
    let reverse_zero = p0_with_populations(&rev_params, &rev, settings, pops).probability;
    let reverse_one = p1_with_populations(&rev_params, &rev, settings, pops)?.probability;
    Ok(CayleyResult { zero, one, reverse_zero, reverse_one, multi_photon_bound: multi_photon_bound(params, protocol) })
}

/// (P₀⟨W²⟩₀ + P₁⟨W²⟩₁)/(P₀⟨W⟩₀ + P₁⟨W⟩₁), in units of ħω₀.
pub fn combined_moment_ratio<T: Real>(zero: &PhotonSector<T>, one: &PhotonSector<T>) -> Result<T, CayleyError> {
    ratio(zero.weighted_w2 + one.weighted_w2, zero.weighted_w + one.weighted_w)
}

/// Per-photon-number reverse identity P_n⟨e^{−βW}⟩_n = P_{R,n}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseIdentity<T> {
    pub n: usize,
    pub lhs: T,
    pub rhs: T,
}

impl<T: Real> ReverseIdentity<T> {
    pub fn discrepancy(&self) -> T {
        (self.lhs - self.rhs).abs()
    }
}

pub fn reverse_identity_check<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    settings: &CayleySettings,
    convention: ReverseConvention,
) -> Result<[ReverseIdentity<T>; 2], CayleyError> {
    let r = analyze(params, protocol, settings, convention)?;
    Ok([0, 1].map(|n| ReverseIdentity { n, lhs: r.sector(n).jarzynski_term, rhs: r.reverse_probability(n) }))
}

/// Largest violation of the propagator relations between the forward
/// process on `[t_a, t_b]` and the reverse process on `[T − t_b, T − t_a]`:
///
/// ```text
/// |a_g|²e^{−π_g} ↔ |a_{R,g}|²e^{−π_{R,g}}     |b_e|²e^{−π_e} ↔ |b_{R,e}|²e^{−π_{R,e}}
/// |b_g|²e^{−π_g} ↔ |a_{R,e}|²e^{−π_{R,e}}     |a_e|²e^{−π_e} ↔ |b_{R,g}|²e^{−π_{R,g}}
/// ```
pub fn amplitude_relation_residual<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
    t_a: T,
    t_b: T,
    settings: &CayleySettings,
    convention: ReverseConvention,
) -> T {
    let h = max_step(protocol, settings);
    let rev = protocol.reversed();
    let rev_params = convention.reverse_params(params);
    let big_t = protocol.duration;
    let fwd = |i| propagate_to_end(i, t_a, t_b, params, protocol, h);
    let bwd = |i| propagate_to_end(i, big_t - t_b, big_t - t_a, &rev_params, &rev, h);
    let (g, e, rg, re) = (fwd(Eigenstate::Ground), fwd(Eigenstate::Excited), bwd(Eigenstate::Ground), bwd(Eigenstate::Excited));
    use Eigenstate::{Excited as E, Ground as G};
    [
        (g.no_photon_probability(G), rg.no_photon_probability(G)),
        (e.no_photon_probability(E), re.no_photon_probability(E)),
        (g.no_photon_probability(E), re.no_photon_probability(G)),
        (e.no_photon_probability(G), rg.no_photon_probability(E)),
    ]
    .into_iter()
    .map(|(x, y)| (x - y).abs())
    .fold(T::zero(), T::max)
}

/// First-order closed forms for a resonant drive λ₀ sin(ω₀t) lasting T,
/// with x = λ₀T:
///
/// ```text
/// π_{g,e}  = Γ_ΣT/2 ∓ ΔΓ sin x/(2λ₀)
/// P₀       = 1 − Γ_ΣT/2 + (p_g − p_e) ΔΓ sin x/(2λ₀),   P₁ = 1 − P₀
/// P₀⟨W⟩₀   = (p_g − p_e)(1 − Γ_ΣT/2) sin²(x/2)
/// P₀⟨W²⟩₀  = (1 − Γ_ΣT/2) sin²(x/2)
/// P₁⟨W⟩₁   = ΔΓ A + 2(p_gΓ↓ − p_eΓ↑) B
/// P₁⟨W²⟩₁  = Γ_Σ A + 4(p_gΓ↓ + p_eΓ↑) B
/// A = T/4 − T cos x/8 − sin x/(8λ₀),   B = T/4 + T cos x/8 − 3 sin x/(8λ₀)
/// ```
///
/// The Jarzynski terms equal P₀ and P₁ at this order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeResult<T> {
    pub zero: PhotonSector<T>,
    pub one: PhotonSector<T>,
    pub pi_g: T,
    pub pi_e: T,
}

pub fn perturbative_statistics<T: Real>(
    params: &ModelParams<T>,
    protocol: &DriveProtocol<T>,
) -> Result<PerturbativeResult<T>, CayleyError> {
    if !protocol.is_resonant(params.omega0) || protocol.direction != crate::model::Direction::Forward {
        return Err(CayleyError::NotResonant {
            omega: protocol.omega.to_f64_lossy(),
            omega0: params.omega0.to_f64_lossy(),
        });
    }
    let lambda0 = protocol.lambda0;
    if lambda0 == T::zero() {
        return Err(CayleyError::Model(ModelError::InvalidDrive { name: "lambda0", value: 0.0 }));
    }
    let big_t = protocol.duration;
    let (pg, pe) = params.gibbs();
    let (gd, gu) = (params.gamma_down, params.gamma_up);
    let (dg, gs) = (params.delta_gamma(), params.gamma_sum());
    let x = lambda0 * big_t;
    let (sin_x, cos_x) = x.sin_cos();
    let half = T::half();
    let eighth = T::lit(0.125);
    let sin2_half = (x * half).sin().powi(2);
    let survive = T::one() - gs * big_t * half;
    let shift = dg * sin_x / (T::two() * lambda0);

    let p0 = survive + (pg - pe) * shift;
    let zero = PhotonSector {
        probability: p0,
        weighted_w: (pg - pe) * survive * sin2_half,
        weighted_w2: survive * sin2_half,
        jarzynski_term: p0,
    };
    let a = big_t * T::lit(0.25) - big_t * cos_x * eighth - sin_x * eighth / lambda0;
    let b = big_t * T::lit(0.25) + big_t * cos_x * eighth - T::lit(3.0) * sin_x * eighth / lambda0;
    let p1 = T::one() - p0;
    let one = PhotonSector {
        probability: p1,
        weighted_w: dg * a + T::two() * (pg * gd - pe * gu) * b,
        weighted_w2: gs * a + T::lit(4.0) * (pg * gd + pe * gu) * b,
        jarzynski_term: p1,
    };
    let base = gs * big_t * half;
    Ok(PerturbativeResult { zero, one, pi_g: base - shift, pi_e: base + shift })
}

/// One row of a (λ₀, Γ↓) sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda0: f64,
    pub gamma_down: f64,
    pub p0: f64,
    pub p1: f64,
    pub w1_mean: f64,
    pub w2_mean: f64,
    pub ratio: f64,
    pub jarzynski_lhs: f64,
    pub jarzynski_rhs: f64,
}

impl SweepRow {
    pub fn from_cayley(lambda0: f64, gamma_down: f64, r: &CayleyResult<f64>) -> Self {
        Self {
            lambda0,
            gamma_down,
            p0: r.zero.probability,
            p1: r.one.probability,
            w1_mean: r.mean_w(),
            w2_mean: r.mean_w2(),
            ratio: combined_moment_ratio(&r.zero, &r.one).unwrap_or(f64::NAN),
            jarzynski_lhs: r.jarzynski_lhs(),
            jarzynski_rhs: r.jarzynski_rhs(),
        }
    }

    /// Perturbative row; the reverse side equals the forward side at this order.
    pub fn from_perturbative(lambda0: f64, gamma_down: f64, r: &PerturbativeResult<f64>) -> Self {
        let p = r.zero.probability + r.one.probability;
        let lhs = r.zero.jarzynski_term + r.one.jarzynski_term;
        Self {
            lambda0,
            gamma_down,
            p0: r.zero.probability,
            p1: r.one.probability,
            w1_mean: (r.zero.weighted_w + r.one.weighted_w) / p,
            w2_mean: (r.zero.weighted_w2 + r.one.weighted_w2) / p,
            ratio: combined_moment_ratio(&r.zero, &r.one).unwrap_or(f64::NAN),
            jarzynski_lhs: lhs,
            jarzynski_rhs: lhs,
        }
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::model::Direction;

    fn cold_drive(gamma_down: f64, lambda0: f64) -> (ModelParams<f64>, DriveProtocol<f64>) {
        (ModelParams::detailed_balance(2.0, gamma_down).unwrap(), DriveProtocol::resonant(lambda0, 10.0).unwrap())
    }

    #[test]
    fn undriven_propagators_are_trivial() {
        let p = ModelParams::<f64>::with_rates(1.0, 0.1, 0.03).unwrap();
        let drive = DriveProtocol::resonant(0.0, 2.0).unwrap();
        let g = propagate_amplitudes(Eigenstate::Ground, 1.0, 9.0, &p, &drive, 0.01).unwrap();
        let e = propagate_amplitudes(Eigenstate::Excited, 1.0, 9.0, &p, &drive, 0.01).unwrap();
        for t in [1.0, 2.5, 7.123, 9.0] {
            let ag = g.at(t);
            assert_eq!(ag.state, PureState::ground());
            assert!((ag.pi - 0.03 * (t - 1.0)).abs() < 1e-12);
            assert!((e.at(t).pi - 0.1 * (t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn propagator_invariants() {
        let (p, drive) = cold_drive(0.02, 0.1);
        let prop = propagate_amplitudes(Eigenstate::Ground, 3.0, drive.duration, &p, &drive, drive.period() / 1000.0).unwrap();
        assert_eq!(prop.node(0).pi, 0.0);
        let mut last = -1.0;
        for k in 0..prop.len() {
            let a = prop.node(k);
            assert!((a.state.norm_sqr() - 1.0).abs() < 1e-9);
            assert!(a.pi >= last);
            last = a.pi;
        }
    }

    #[test]
    fn interpolation_reproduces_direct_propagation() {
        let (p, drive) = cold_drive(0.02, 0.1);
        let h = drive.period() / 1000.0;
        let prop = propagate_amplitudes(Eigenstate::Excited, 0.0, drive.duration, &p, &drive, h).unwrap();
        for t in [0.0017, 5.4321, 33.3, drive.duration] {
            let direct = propagate_to_end(Eigenstate::Excited, 0.0, t, &p, &drive, h);
            let interp = prop.at(t);
            for f in EIGENSTATES {
                assert!((direct.no_photon_probability(f) - interp.no_photon_probability(f)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn isolated_qubit_has_no_one_photon_class() {
        let p = ModelParams::<f64>::isolated(1.0).unwrap();
        let drive = DriveProtocol::pi_pulse(0.05).unwrap();
        let s = p1_statistics(&p, &drive, &CayleySettings::default()).unwrap();
        assert_eq!(s, PhotonSector::default());
        let z = p0_statistics(&p, &drive, &CayleySettings::default());
        assert!((z.probability - 1.0).abs() < 1e-12);
        // Without the rotating-wave approximation a π-pulse is not a perfect
        // flip: the ratio ⟨W²⟩₀/⟨W⟩₀ is still exact, the moments are not.
        assert!((z.weighted_w2 - 1.0).abs() < 2e-3);
        assert!((z.moment_ratio().unwrap() - 1.0 / (1.0f64 / 2.0).tanh()).abs() < 1e-9);
    }

    #[test]
    fn zero_photon_ratio_is_drive_independent() {
        let target = 1.0 / 1.0f64.tanh();
        for lambda0 in [0.01, 0.05, 0.1, 0.2] {
            let (p, drive) = cold_drive(0.01, lambda0);
            let r = p0_statistics(&p, &drive, &CayleySettings::default()).moment_ratio().unwrap();
            assert!((r - target).abs() < 1e-9, "λ₀ = {lambda0}: {r}");
        }
    }

    #[test]
    fn combined_ratio_rejects_zero_work() {
        let (p, _) = cold_drive(0.01, 0.0);
        let drive = DriveProtocol::resonant(0.0, 10.0).unwrap();
        let s = CayleySettings::default();
        let err = combined_moment_ratio(&p0_statistics(&p, &drive, &s), &p1_statistics(&p, &drive, &s).unwrap());
        assert!(matches!(err, Err(CayleyError::DegenerateDenominator(_))));
    }

    #[test]
    fn perturbative_symmetric_populations() {
        let p = ModelParams::<f64>::detailed_balance(0.0, 0.01).unwrap();
        let drive = DriveProtocol::resonant(0.05, 10.0).unwrap();
        let r = perturbative_statistics(&p, &drive).unwrap();
        assert!((r.zero.probability - (1.0 - p.gamma_sum() * drive.duration / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn perturbative_poisson_exponents() {
        let (p, drive) = cold_drive(0.01, 0.05);
        let r = perturbative_statistics(&p, &drive).unwrap();
        let x = 0.05 * drive.duration;
        assert!((r.pi_g - r.pi_e + p.delta_gamma() / 0.05 * x.sin()).abs() < 1e-15);
    }

    #[test]
    fn perturbative_rejects_other_drives() {
        let p = ModelParams::detailed_balance(2.0, 0.01).unwrap();
        let off = DriveProtocol::cycles(0.05, 1.1, 10.0).unwrap();
        assert!(matches!(perturbative_statistics(&p, &off), Err(CayleyError::NotResonant { .. })));
        let mut rev = DriveProtocol::resonant(0.05, 10.0).unwrap();
        rev.direction = Direction::Reversed;
        assert!(perturbative_statistics(&p, &rev).is_err());
    }

    #[test]
    fn reverse_identity_is_trivial_without_drive() {
        let (p, _) = cold_drive(0.02, 0.0);
        let drive = DriveProtocol::resonant(0.0, 10.0).unwrap();
        let s = CayleySettings::default();
        let checks = reverse_identity_check(&p, &drive, &s, ReverseConvention::SameRates).unwrap();
        let p0 = p0_statistics(&p, &drive, &s).probability;
        assert!((checks[0].lhs - p0).abs() < 1e-14 && (checks[0].rhs - p0).abs() < 1e-14);
    }

    #[test]
    fn amplitude_relations_hold_for_a_fractional_drive() {
        // A non-integer number of cycles makes the reversed drive differ from
        // the forward one, so the relations are not satisfied by symmetry.
        let p = ModelParams::detailed_balance(2.0, 0.02).unwrap();
        let drive = DriveProtocol::resonant(0.1, 7.3).unwrap();
        let s = CayleySettings::default();
        for (ta, tb) in [(0.0, drive.duration), (3.1, 17.9), (12.0, 40.5)] {
            let r = amplitude_relation_residual(&p, &drive, ta, tb, &s, ReverseConvention::SameRates);
            assert!(r < 1e-8, "({ta}, {tb}): {r}");
        }
        let bad = amplitude_relation_residual(&p, &drive, 0.0, drive.duration, &s, ReverseConvention::SwappedRates);
        assert!(bad > 1e-4, "{bad}");
    }

    /// Independent route: the linear (unnormalized) non-Hermitian propagator
    /// U(t, 0) tabulated on a fine grid, U(T, t) = U(T, 0) U(t, 0)⁻¹, and
    /// composite Simpson over the grid for the jump time. |U_fi|² is the
    /// no-photon probability from i to f, which the engine computes instead
    /// from normalized amplitudes and Poisson exponents.
    mod oracle {
        use num_complex::Complex64 as C;

        pub struct Moments {
            pub zero: [f64; 4],
            pub one: [f64; 4],
        }

        type M = [[C; 2]; 2];

        fn mul(x: &M, y: &M) -> M {
            let mut r = [[C::new(0.0, 0.0); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
                }
            }
            r
        }

        fn inv(x: &M) -> M {
            let det = x[0][0] * x[1][1] - x[0][1] * x[1][0];
            [[x[1][1] / det, -x[0][1] / det], [-x[1][0] / det, x[0][0] / det]]
        }

        pub fn moments(beta: f64, gd: f64, gu: f64, lambda0: f64, cycles: f64, reversed: bool, n: usize) -> Moments {
            let big_t = std::f64::consts::TAU * cycles;
            let lam = |t: f64| if reversed { lambda0 * (big_t - t).sin() } else { lambda0 * t.sin() };
            let rhs = |t: f64, u: &M| -> M {
                let c = C::from_polar(lam(t), t);
                let i = C::new(0.0, 1.0);
                let h: M = [[C::new(0.0, -0.5 * gu), c.conj()], [c, C::new(0.0, -0.5 * gd)]];
                let hu = mul(&h, u);
                [[-i * hu[0][0], -i * hu[0][1]], [-i * hu[1][0], -i * hu[1][1]]]
            };
            let h = big_t / n as f64;
            let axpy = |u: &M, s: f64, k: &M| -> M {
                let mut r = *u;
                for i in 0..2 {
                    for j in 0..2 {
                        r[i][j] += k[i][j] * s;
                    }
                }
                r
            };
            let one = C::new(1.0, 0.0);
            let zero = C::new(0.0, 0.0);
            let mut us: Vec<M> = vec![[[one, zero], [zero, one]]];
            for k in 0..n {
                let t = k as f64 * h;
                let u = us[k];
                let k1 = rhs(t, &u);
                let k2 = rhs(t + h / 2.0, &axpy(&u, h / 2.0, &k1));
                let k3 = rhs(t + h / 2.0, &axpy(&u, h / 2.0, &k2));
                let k4 = rhs(t + h, &axpy(&u, h, &k3));
                let mut next = u;
                for i in 0..2 {
                    for j in 0..2 {
                        next[i][j] += (k1[i][j] + k2[i][j] * 2.0 + k3[i][j] * 2.0 + k4[i][j]) * (h / 6.0);
                    }
                }
                us.push(next);
            }
            let pg = 1.0 / (1.0 + (-beta).exp());
            let pops = [pg, 1.0 - pg];
            let f = |w: f64| [1.0, w, w * w, (-beta * w).exp()];
            let ut = us[n];
            let mut z0 = [0.0; 4];
            for i in 0..2 {
                for fin in 0..2 {
                    let w = fin as f64 - i as f64;
                    let p = pops[i] * ut[fin][i].norm_sqr();
                    for m in 0..4 {
                        z0[m] += p * f(w)[m];
                    }
                }
            }
            let mut integrand = vec![[0.0; 4]; n + 1];
            for (k, row) in integrand.iter_mut().enumerate() {
                let u = &us[k];
                let rest = mul(&ut, &inv(u));
                for i in 0..2 {
                    // (source component, rate, heat, post-jump state)
                    for (src, rate, q, post) in [(0usize, gu, -1.0, 1usize), (1, gd, 1.0, 0)] {
                        let w0 = pops[i] * rate * u[src][i].norm_sqr();
                        for fin in 0..2 {
                            let w = fin as f64 - i as f64 + q;
                            let p = w0 * rest[fin][post].norm_sqr();
                            for m in 0..4 {
                                row[m] += p * f(w)[m];
                            }
                        }
                    }
                }
            }
            let mut z1 = [0.0; 4];
            for (k, row) in integrand.iter().enumerate() {
                let c = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                for m in 0..4 {
                    z1[m] += c * row[m] * h / 3.0;
                }
            }
            Moments { zero: z0, one: z1 }
        }
    }

    fn as_array(s: &PhotonSector<f64>) -> [f64; 4] {
        [s.probability, s.weighted_w, s.weighted_w2, s.jarzynski_term]
    }

    #[test]
    fn matches_linear_propagator_oracle() {
        let (p, drive) = cold_drive(0.02, 0.05);
        let r = analyze(&p, &drive, &CayleySettings::default(), ReverseConvention::SameRates).unwrap();
        let o = oracle::moments(2.0, 0.02, p.gamma_up, 0.05, 10.0, false, 20_000);
        for (x, y) in as_array(&r.zero).iter().zip(o.zero) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        for (x, y) in as_array(&r.one).iter().zip(o.one) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn matches_frozen_reference_values() {
        // Linear-propagator route with an 8th-order adaptive integrator,
        // converged to ~1e-15, at βħω₀ = 2, Γ↓ = 0.02, λ₀ = 0.05, 10 cycles.
        let (p, drive) = cold_drive(0.02, 0.05);
        let r = analyze(&p, &drive, &CayleySettings::default(), ReverseConvention::SameRates).unwrap();
        let expect = [
            (r.zero.probability, 0.5233552874173554),
            (r.one.probability, 0.3922351242921097),
            (r.zero.weighted_w, 0.3839145318079556),
            (r.one.weighted_w, 0.3644925274604865),
            (r.zero.weighted_w2, 0.5040933268798014),
            (r.one.weighted_w2, 0.5814638549333967),
        ];
        for (got, want) in expect {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn reverse_probabilities_match_oracle_on_fractional_drive() {
        let p = ModelParams::detailed_balance(2.0, 0.02).unwrap();
        let drive = DriveProtocol::resonant(0.1, 7.3).unwrap();
        let r = analyze(&p, &drive, &CayleySettings::default(), ReverseConvention::SameRates).unwrap();
        let o = oracle::moments(2.0, 0.02, p.gamma_up, 0.1, 7.3, true, 20_000);
        assert!((r.reverse_zero - o.zero[0]).abs() < 1e-8);
        assert!((r.reverse_one - o.one[0]).abs() < 1e-8);
        assert!((r.zero.jarzynski_term - r.reverse_zero).abs() < 1e-8);
        assert!((r.one.jarzynski_term - r.reverse_one).abs() < 1e-8);
    }
}
