//! Quantum-jump simulation and photon-counting analytics for the work done
//! on a driven qubit coupled to a thermal bath.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: parameters, drive protocols, thermal populations.
//! * [`ode`] and [`trajectory`]: no-jump dynamics and the Monte Carlo jump
//!   engine.
//! * [`work`]: the two-measurement protocol with guardian photons.
//! * [`master`]: Bloch–Redfield oracle for ensemble averages.
//! * [`quadrature`] and [`cayley`]: probabilities and work moments resolved by
//!   photon number, perturbative closed forms, reverse-protocol identities.
//! * [`stats`] and [`io`]: histograms, bootstrap summaries, CSV/SVG output.
//!
//! Numerical kernels are generic over [`Real`]; the aliases below fix the
//! scalar to `f64`, which is what the ensemble and I/O layers use.

// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cayley;
pub mod io;
pub mod master;
pub mod model;
pub mod ode;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod trajectory;
pub mod work;

pub use model::{gibbs_populations, rates_from_detailed_balance, Direction, Eigenstate, ModelError};
pub use ode::Integrator;
pub use rng::RngStream;
pub use scalar::{CompensatedSum, Cplx, Real};
pub use trajectory::{JumpEvent, JumpKind, StepError, StepOutcome};

pub type ModelParams = model::ModelParams<f64>;
pub type DriveProtocol = model::DriveProtocol<f64>;
pub type PureState = model::PureState<f64>;
pub type Trajectory = trajectory::Trajectory<f64>;
pub type TimeGrid = trajectory::TimeGrid<f64>;
pub type ReducedDensityMatrix = master::ReducedDensityMatrix<f64>;
pub type AmplitudePropagator = cayley::AmplitudePropagator<f64>;

/// Single-precision variants for quick exploratory runs.
pub mod f32 {
    pub type ModelParams = crate::model::ModelParams<f32>;
    pub type DriveProtocol = crate::model::DriveProtocol<f32>;
    pub type PureState = crate::model::PureState<f32>;
    pub type ReducedDensityMatrix = crate::master::ReducedDensityMatrix<f32>;
}
