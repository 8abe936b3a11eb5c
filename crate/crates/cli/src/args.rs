use std::num::NonZeroUsize;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;

/// Quantum-jump work statistics of a driven qubit in a thermal bath.
#[derive(Debug, Parser)]
#[command(name = "qjwork", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trace one realization through prelude, drive and guardian tail.
    Trace(CommonArgs),
    /// Monte Carlo work ensemble with histogram and bootstrap summary.
    Ensemble(CommonArgs),
    /// Monte Carlo, quadrature and perturbative results over the (λ₀, Γ↓) grid.
    Sweep(CommonArgs),
    /// Photon-resolved quadrature, reverse identities and the master equation.
    Analytics(CommonArgs),
    /// Run the self-consistency checks; exit status 1 if any fails.
    Validate(ValidateArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Trace(c) | Command::Ensemble(c) | Command::Sweep(c) | Command::Analytics(c) => c,
            Command::Validate(v) => &v.common,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with flat run parameters.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Size of the worker pool; results do not depend on it.
    #[arg(long, value_name = "N")]
    pub workers: Option<NonZeroUsize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// βħω₀
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Emission rate Γ↓ in units of ω₀.
    #[arg(long, allow_negative_numbers = true)]
    pub gamma_down: Option<f64>,
    /// Drive amplitude λ₀ in units of ω₀.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub n_cycles: Option<f64>,
    /// Drive frequency ω/ω₀.
    #[arg(long, allow_negative_numbers = true)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub n_trajectories: Option<u64>,
    #[arg(long)]
    pub dt_per_cycle: Option<u32>,
    /// Comma-separated λ₀ values for `sweep`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sweep_lambda0: Option<Vec<f64>>,
    /// Comma-separated Γ↓ values for `sweep`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sweep_gamma_down: Option<Vec<f64>>,
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            beta_hbar_omega0: self.beta,
            gamma_down: self.gamma_down,
            lambda0: self.lambda0,
            n_cycles: self.n_cycles,
            omega_over_omega0: self.omega,
            seed: self.seed,
            n_trajectories: self.n_trajectories,
            dt_per_cycle: self.dt_per_cycle,
            output_dir: self.out.clone(),
            sweep_lambda0: self.sweep_lambda0.clone(),
            sweep_gamma_down: self.sweep_gamma_down.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Scale Γ↑ by 1.5 so that the reverse identities must fail.
    #[arg(long)]
    pub break_detailed_balance: bool,
}
