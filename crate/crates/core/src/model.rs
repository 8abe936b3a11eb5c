//! Physical parameters, drive protocols and state representation.
//!
//! Natural units throughout: ħ = 1 and ω₀ = 1, so times are in units of
//! 1/ω₀, rates in units of ω₀ and energies in units of ħω₀.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Cplx, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("inverse temperature must be non-negative, got {0}")]
    NegativeTemperature(f64),
    #[error("rate `{name}` must be finite and non-negative, got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("drive parameter `{name}` is invalid: {value}")]
    InvalidDrive { name: &'static str, value: f64 },
}

/// Energy eigenstate of the undriven qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eigenstate {
    Ground,
    Excited,
}

impl Eigenstate {
    /// Internal energy in units of ħω₀ (E_g = 0).
    pub fn energy_quanta(self) -> i64 {
        match self {
            Eigenstate::Ground => 0,
            Eigenstate::Excited => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Eigenstate::Ground => "g",
            Eigenstate::Excited => "e",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Eigenstate::Ground => Eigenstate::Excited,
            Eigenstate::Excited => Eigenstate::Ground,
        }
    }
}

/// Equilibrium occupation probabilities `(p_g, p_e)` at inverse temperature
/// `βħω₀`. `f64::INFINITY` is zero temperature.
pub fn gibbs_populations<T: Real>(beta_hbar_omega0: T) -> Result<(T, T), ModelError> {
    if beta_hbar_omega0.is_nan() || beta_hbar_omega0 < T::zero() {
        return Err(ModelError::NegativeTemperature(beta_hbar_omega0.to_f64_lossy()));
    }
    let boltzmann = (-beta_hbar_omega0).exp();
    let p_g = T::one() / (T::one() + boltzmann);
    Ok((p_g, T::one() - p_g))
}

/// Absorption rate implied by detailed balance, Γ↑ = Γ↓ e^{−βħω₀}.
pub fn rates_from_detailed_balance<T: Real>(
    gamma_down: T,
    beta_hbar_omega0: T,
) -> Result<T, ModelError> {
    check_rate("gamma_down", gamma_down)?;
    if beta_hbar_omega0.is_nan() || beta_hbar_omega0 < T::zero() {
        return Err(ModelError::NegativeTemperature(beta_hbar_omega0.to_f64_lossy()));
    }
    if gamma_down == T::zero() {
        return Ok(T::zero());
    }
    Ok(gamma_down * (-beta_hbar_omega0).exp())
}

fn check_rate<T: Real>(name: &'static str, value: T) -> Result<(), ModelError> {
    if !value.is_finite() || value < T::zero() {
        return Err(ModelError::InvalidRate { name, value: value.to_f64_lossy() });
    }
    Ok(())
}

/// Qubit and bath parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    /// Level splitting; 1 in natural units.
    pub omega0: T,
    /// Dimensionless inverse temperature βħω₀.
    pub beta_hbar_omega0: T,
    /// Emission rate Γ↓.
    pub gamma_down: T,
    /// Absorption rate Γ↑.
    pub gamma_up: T,
}

impl<T: Real> ModelParams<T> {
    /// Rates tied by detailed balance at the bath temperature.
    pub fn detailed_balance(beta_hbar_omega0: T, gamma_down: T) -> Result<Self, ModelError> {
        let gamma_up = rates_from_detailed_balance(gamma_down, beta_hbar_omega0)?;
        Ok(Self { omega0: T::one(), beta_hbar_omega0, gamma_down, gamma_up })
    }

    /// Independent rates; used for negative controls that break detailed balance.
    pub fn with_rates(beta_hbar_omega0: T, gamma_down: T, gamma_up: T) -> Result<Self, ModelError> {
        if beta_hbar_omega0.is_nan() || beta_hbar_omega0 < T::zero() {
            return Err(ModelError::NegativeTemperature(beta_hbar_omega0.to_f64_lossy()));
        }
        check_rate("gamma_down", gamma_down)?;
        check_rate("gamma_up", gamma_up)?;
        Ok(Self { omega0: T::one(), beta_hbar_omega0, gamma_down, gamma_up })
    }

    /// No bath coupling at all.
    pub fn isolated(beta_hbar_omega0: T) -> Result<Self, ModelError> {
        Self::with_rates(beta_hbar_omega0, T::zero(), T::zero())
    }

    /// ΔΓ = Γ↓ − Γ↑
    pub fn delta_gamma(&self) -> T {
        self.gamma_down - self.gamma_up
    }

    /// Γ_Σ = Γ↓ + Γ↑
    pub fn gamma_sum(&self) -> T {
        self.gamma_down + self.gamma_up
    }

    pub fn gibbs(&self) -> (T, T) {
        gibbs_populations(self.beta_hbar_omega0).expect("validated at construction")
    }

    pub fn is_isolated(&self) -> bool {
        self.gamma_sum() == T::zero()
    }

    /// Total jump rate out of a state with excited population `pop_e`.
    #[inline]
    pub fn jump_rate(&self, pop_e: T) -> T {
        self.gamma_up * (T::one() - pop_e) + self.gamma_down * pop_e
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            omega0: U::lit(self.omega0.to_f64_lossy()),
            beta_hbar_omega0: U::lit(self.beta_hbar_omega0.to_f64_lossy()),
            gamma_down: U::lit(self.gamma_down.to_f64_lossy()),
            gamma_up: U::lit(self.gamma_up.to_f64_lossy()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reversed,
}

/// Sinusoidal drive λ(t) = λ₀ sin(ωt) switched on over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveProtocol<T> {
    pub lambda0: T,
    pub omega: T,
    pub duration: T,
    pub direction: Direction,
}

impl<T: Real> DriveProtocol<T> {
    pub fn new(lambda0: T, omega: T, duration: T) -> Result<Self, ModelError> {
        if !lambda0.is_finite() {
            return Err(ModelError::InvalidDrive { name: "lambda0", value: lambda0.to_f64_lossy() });
        }
        if !(omega.is_finite() && omega > T::zero()) {
            return Err(ModelError::InvalidDrive { name: "omega", value: omega.to_f64_lossy() });
        }
        if !(duration.is_finite() && duration >= T::zero()) {
            return Err(ModelError::InvalidDrive { name: "duration", value: duration.to_f64_lossy() });
        }
        Ok(Self { lambda0, omega, duration, direction: Direction::Forward })
    }

    /// Drive at angular frequency `omega` lasting `n_cycles` periods.
    pub fn cycles(lambda0: T, omega: T, n_cycles: T) -> Result<Self, ModelError> {
        if !(n_cycles.is_finite() && n_cycles >= T::zero()) {
            return Err(ModelError::InvalidDrive { name: "n_cycles", value: n_cycles.to_f64_lossy() });
        }
        if !(omega.is_finite() && omega > T::zero()) {
            return Err(ModelError::InvalidDrive { name: "omega", value: omega.to_f64_lossy() });
        }
        Self::new(lambda0, omega, n_cycles * T::tau() / omega)
    }

    /// Resonant drive (ω = ω₀) lasting `n_cycles` periods.
    pub fn resonant(lambda0: T, n_cycles: T) -> Result<Self, ModelError> {
        Self::cycles(lambda0, T::one(), n_cycles)
    }

    /// Resonant π-pulse: T = πħ/λ₀.
    pub fn pi_pulse(lambda0: T) -> Result<Self, ModelError> {
        if !(lambda0.is_finite() && lambda0 > T::zero()) {
            return Err(ModelError::InvalidDrive { name: "lambda0", value: lambda0.to_f64_lossy() });
        }
        Self::new(lambda0, T::one(), T::PI() / lambda0)
    }

    /// The time-reversed protocol λ_R(t) = λ(T − t).
    pub fn reversed(&self) -> Self {
        let direction = match self.direction {
            Direction::Forward => Direction::Reversed,
            Direction::Reversed => Direction::Forward,
        };
        Self { direction, ..*self }
    }

    pub fn period(&self) -> T {
        T::tau() / self.omega
    }

    pub fn n_cycles(&self) -> T {
        self.duration / self.period()
    }

    pub fn is_resonant(&self, omega0: T) -> bool {
        (self.omega - omega0).abs() <= T::lit(1e-12) * omega0
    }

    /// λ(t); zero outside `[0, T]`.
    #[inline]
    pub fn value(&self, t: T) -> T {
        if t < T::zero() || t > self.duration {
            return T::zero();
        }
        let s = match self.direction {
            Direction::Forward => t,
            Direction::Reversed => self.duration - t,
        };
        self.lambda0 * (self.omega * s).sin()
    }

    /// Interaction-picture coupling λ(t) e^{iω₀t}.
    #[inline]
    pub fn coupling(&self, t: T, omega0: T) -> Cplx<T> {
        let lambda = self.value(t);
        if lambda == T::zero() {
            return Cplx::new(T::zero(), T::zero());
        }
        crate::scalar::cis(omega0 * t) * lambda
    }
}

/// Normalized qubit state a|g⟩ + b|e⟩ (interaction picture).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureState<T> {
    pub a: Cplx<T>,
    pub b: Cplx<T>,
}

impl<T: Real> PureState<T> {
    pub fn new(a: Cplx<T>, b: Cplx<T>) -> Self {
        Self { a, b }
    }

    pub fn ground() -> Self {
        Self { a: Cplx::new(T::one(), T::zero()), b: Cplx::new(T::zero(), T::zero()) }
    }

    pub fn excited() -> Self {
        Self { a: Cplx::new(T::zero(), T::zero()), b: Cplx::new(T::one(), T::zero()) }
    }

    pub fn eigen(state: Eigenstate) -> Self {
        match state {
            Eigenstate::Ground => Self::ground(),
            Eigenstate::Excited => Self::excited(),
        }
    }

    /// Equal-weight superposition (|g⟩ + |e⟩)/√2.
    pub fn equal_superposition() -> Self {
        let r = T::half().sqrt();
        Self { a: Cplx::new(r, T::zero()), b: Cplx::new(r, T::zero()) }
    }

    /// Real-amplitude state with excited population `pop_e`.
    pub fn with_excited_population(pop_e: T) -> Self {
        Self {
            a: Cplx::new((T::one() - pop_e).max(T::zero()).sqrt(), T::zero()),
            b: Cplx::new(pop_e.max(T::zero()).sqrt(), T::zero()),
        }
    }

    pub fn pop_g(&self) -> T {
        self.a.norm_sqr()
    }

    pub fn pop_e(&self) -> T {
        self.b.norm_sqr()
    }

    pub fn norm_sqr(&self) -> T {
        self.a.norm_sqr() + self.b.norm_sqr()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self { a: self.a / n, b: self.b / n }
    }
}
