//! Fixed-step integration of the no-jump amplitude equations.
//!
//! In the interaction picture, with the coupling c(t) = λ(t) e^{iω₀t}, the
//! normalized no-jump dynamics read
//!
//! ```text
//! ȧ = −i c̄ b + ΔΓ |b|² a / 2
//! ḃ = −i c a − ΔΓ |a|² b / 2
//! ```
//!
//! and conserve |a|² + |b|² exactly. The unnormalized (linear) form replaces
//! the nonlinear terms by −Γ↑a/2 and −Γ↓b/2.

use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, PureState};
use crate::scalar::{Cplx, Real};

/// Vector-space operations needed by the Runge–Kutta stepper.
pub trait OdeState<T>: Copy {
    /// `self + h·k`
    fn axpy(self, h: T, k: Self) -> Self;
}

impl<T: Real> OdeState<T> for PureState<T> {
    #[inline]
    fn axpy(self, h: T, k: Self) -> Self {
        PureState { a: self.a + k.a * h, b: self.b + k.b * h }
    }
}

impl<T: Real> OdeState<T> for T {
    #[inline]
    fn axpy(self, h: T, k: Self) -> Self {
        self + h * k
    }
}

impl<T: Real, U: OdeState<T>, V: OdeState<T>> OdeState<T> for (U, V) {
    #[inline]
    fn axpy(self, h: T, k: Self) -> Self {
        (self.0.axpy(h, k.0), self.1.axpy(h, k.1))
    }
}

/// One classical fourth-order Runge–Kutta step.
#[inline]
pub fn rk4_step<T, S, F>(mut f: F, t: T, y: S, h: T) -> S
where
    T: Real,
    S: OdeState<T>,
    F: FnMut(T, S) -> S,
{
    let half = h * T::half();
    let k1 = f(t, y);
    let k2 = f(t + half, y.axpy(half, k1));
    let k3 = f(t + half, y.axpy(half, k2));
    let k4 = f(t + h, y.axpy(h, k3));
    let sixth = h / T::lit(6.0);
    y.axpy(sixth, k1).axpy(sixth * T::two(), k2).axpy(sixth * T::two(), k3).axpy(sixth, k4)
}

/// Integrate with steps no longer than `max_step` from `t0` to `t1`.
pub fn rk4_integrate<T, S, F>(mut f: F, t0: T, t1: T, y0: S, max_step: T) -> S
where
    T: Real,
    S: OdeState<T>,
    F: FnMut(T, S) -> S,
{
    let span = t1 - t0;
    if span <= T::zero() {
        return y0;
    }
    let n = (span / max_step).ceil().to_usize().unwrap_or(1).max(1);
    let h = span / T::from_usize_lossy(n);
    let mut y = y0;
    for k in 0..n {
        let t = t0 + h * T::from_usize_lossy(k);
        y = rk4_step(&mut f, t, y, h);
    }
    y
}

/// Time derivative of the normalized no-jump amplitudes for a given coupling
/// c = λ(t) e^{iω₀t}.
#[inline]
pub fn amplitude_rates<T: Real>(state: PureState<T>, coupling: Cplx<T>, delta_gamma: T) -> PureState<T> {
    let i = Cplx::new(T::zero(), T::one());
    let pop_g = state.a.norm_sqr();
    let pop_e = state.b.norm_sqr();
    let g = delta_gamma * T::half();
    PureState {
        a: -i * coupling.conj() * state.b + state.a * (g * pop_e),
        b: -i * coupling * state.a - state.b * (g * pop_g),
    }
}

/// Time derivative of the unnormalized (linear, non-Hermitian) amplitudes.
#[inline]
pub fn linear_amplitude_rates<T: Real>(state: PureState<T>, coupling: Cplx<T>, params: &ModelParams<T>) -> PureState<T> {
    let i = Cplx::new(T::zero(), T::one());
    PureState {
        a: -i * coupling.conj() * state.b - state.a * (params.gamma_up * T::half()),
        b: -i * coupling * state.a - state.b * (params.gamma_down * T::half()),
    }
}

/// No-jump update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Classical RK4 on the normalized nonlinear equations, jump probability
    /// from midpoint populations.
    #[default]
    RungeKutta4,
    /// Literal first-order update |ψ⟩ ← (1 − iΔt H)|ψ⟩ followed by
    /// renormalization, jump probability from the left endpoint.
    FirstOrder,
}

/// Result of advancing one step without a jump.
#[derive(Debug, Clone, Copy)]
pub struct Advance<T> {
    pub state: PureState<T>,
    /// Derivative at the (normalized) end state; the next step's first stage.
    pub end_rates: PureState<T>,
    pub delta_p: T,
}

/// Advance one step given couplings at the start, midpoint and end of the
/// step and the derivative at the start (`start_rates`).
#[inline]
pub fn advance<T: Real>(
    state: PureState<T>,
    start_rates: PureState<T>,
    couplings: [Cplx<T>; 3],
    h: T,
    params: &ModelParams<T>,
    integrator: Integrator,
) -> Advance<T> {
    let dg = params.delta_gamma();
    match integrator {
        Integrator::RungeKutta4 => {
            let half = h * T::half();
            let k1 = start_rates;
            let k2 = amplitude_rates(state.axpy(half, k1), couplings[1], dg);
            let k3 = amplitude_rates(state.axpy(half, k2), couplings[1], dg);
            let k4 = amplitude_rates(state.axpy(h, k3), couplings[2], dg);
            let sixth = h / T::lit(6.0);
            let raw = state
                .axpy(sixth, k1)
                .axpy(sixth * T::two(), k2)
                .axpy(sixth * T::two(), k3)
                .axpy(sixth, k4);
            let end = raw.normalized();
            let end_rates = amplitude_rates(end, couplings[2], dg);
            // cubic Hermite midpoint: (y0 + y1)/2 + h (f0 − f1)/8
            let eighth = h * T::lit(0.125);
            let mid = PureState {
                a: (state.a + end.a) * T::half() + (k1.a - end_rates.a) * eighth,
                b: (state.b + end.b) * T::half() + (k1.b - end_rates.b) * eighth,
            };
            let mid_e = mid.pop_e() / mid.norm_sqr();
            Advance { state: end, end_rates, delta_p: h * params.jump_rate(mid_e) }
        }
        Integrator::FirstOrder => {
            let delta_p = h * params.jump_rate(state.pop_e());
            let lin = linear_amplitude_rates(state, couplings[0], params);
            let end = state.axpy(h, lin).normalized();
            Advance { state: end, end_rates: amplitude_rates(end, couplings[2], dg), delta_p }
        }
    }
}
