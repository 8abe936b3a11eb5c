//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the crate's integrators: the oracles re-derive what
//! they need from the model equations directly.

#![allow(dead_code)]

use num_complex::Complex64 as C;

/// Linear (unnormalized) no-jump evolution
///   ȧ = −i c̄ b − Γ↑ a/2,  ḃ = −i c a − Γ↓ b/2,  c = λ₀ sin(ωt) e^{it},
/// integrated with `n` classical RK4 steps on [t0, t1].
#[allow(clippy::too_many_arguments)]
pub fn linear_amplitudes(
    lambda0: f64,
    omega: f64,
    gamma_up: f64,
    gamma_down: f64,
    (a0, b0): (C, C),
    t0: f64,
    t1: f64,
    n: usize,
) -> (C, C) {
    let i = C::new(0.0, 1.0);
    let f = |t: f64, a: C, b: C| {
        let c = C::from_polar(lambda0 * (omega * t).sin(), t);
        (-i * c.conj() * b - a * (0.5 * gamma_up), -i * c * a - b * (0.5 * gamma_down))
    };
    let h = (t1 - t0) / n as f64;
    let (mut a, mut b) = (a0, b0);
    for k in 0..n {
        let t = t0 + h * k as f64;
        let (ka1, kb1) = f(t, a, b);
        let (ka2, kb2) = f(t + h / 2.0, a + ka1 * (h / 2.0), b + kb1 * (h / 2.0));
        let (ka3, kb3) = f(t + h / 2.0, a + ka2 * (h / 2.0), b + kb2 * (h / 2.0));
        let (ka4, kb4) = f(t + h, a + ka3 * h, b + kb3 * h);
        a += (ka1 + ka2 * 2.0 + ka3 * 2.0 + ka4) * (h / 6.0);
        b += (kb1 + kb2 * 2.0 + kb3 * 2.0 + kb4) * (h / 6.0);
    }
    (a, b)
}

/// Excited population after evolving from |g⟩ (or |e⟩) with the linear
/// equations and renormalizing.
pub fn normalized_pop_e(lambda0: f64, gamma_up: f64, gamma_down: f64, from_excited: bool, t1: f64, n: usize) -> f64 {
    let init = if from_excited { (C::new(0.0, 0.0), C::new(1.0, 0.0)) } else { (C::new(1.0, 0.0), C::new(0.0, 0.0)) };
    let (a, b) = linear_amplitudes(lambda0, 1.0, gamma_up, gamma_down, init, 0.0, t1, n);
    b.norm_sqr() / (a.norm_sqr() + b.norm_sqr())
}

/// Kolmogorov–Smirnov statistic of `samples` against Exp(rate).
pub fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let cdf = 1.0 - (-rate * x).exp();
            (cdf - k as f64 / n).abs().max(((k + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// coth(x) written out, to avoid reusing anything from the crate.
pub fn coth(x: f64) -> f64 {
    (x.exp() + (-x).exp()) / (x.exp() - (-x).exp())
}

/// Gibbs ground population from the Boltzmann factor.
pub fn p_ground(beta: f64) -> f64 {
    1.0 / (1.0 + (-beta).exp())
}
