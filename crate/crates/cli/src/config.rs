//! Run configuration: flat TOML keys, layered as defaults < file < flags.

use std::path::{Path, PathBuf};

use qjwork::{DriveProtocol, ModelParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub beta_hbar_omega0: f64,
    pub gamma_down: f64,
    pub lambda0: f64,
    pub n_cycles: f64,
    pub omega_over_omega0: f64,
    pub seed: u64,
    pub n_trajectories: u64,
    pub dt_per_cycle: u32,
    pub output_dir: PathBuf,
    /// λ₀ grid of the `sweep` subcommand.
    pub sweep_lambda0: Vec<f64>,
    /// Γ↓ grid of the `sweep` subcommand.
    pub sweep_gamma_down: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            beta_hbar_omega0: 1.0,
            gamma_down: 0.02,
            lambda0: 0.05,
            n_cycles: 10.0,
            omega_over_omega0: 1.0,
            seed: 2024,
            n_trajectories: 10_000,
            dt_per_cycle: 1000,
            output_dir: PathBuf::from("out"),
            sweep_lambda0: vec![0.02, 0.05, 0.1],
            sweep_gamma_down: vec![0.005, 0.01, 0.015, 0.02],
        }
    }
}

/// Values given on the command line; `None` leaves the layer below alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub beta_hbar_omega0: Option<f64>,
    pub gamma_down: Option<f64>,
    pub lambda0: Option<f64>,
    pub n_cycles: Option<f64>,
    pub omega_over_omega0: Option<f64>,
    pub seed: Option<u64>,
    pub n_trajectories: Option<u64>,
    pub dt_per_cycle: Option<u32>,
    pub output_dir: Option<PathBuf>,
    pub sweep_lambda0: Option<Vec<f64>>,
    pub sweep_gamma_down: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn emit(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Defaults, then the file (if any), then the flags; validated.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &o.$field {
                    self.$field = v.clone();
                }
            )*};
        }
        take!(
            beta_hbar_omega0,
            gamma_down,
            lambda0,
            n_cycles,
            omega_over_omega0,
            seed,
            n_trajectories,
            dt_per_cycle,
            output_dir,
            sweep_lambda0,
            sweep_gamma_down
        );
    }

    /// Reject values the engines cannot use, naming every offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, field: &str, rule: &str| {
            if !ok {
                bad.push(format!("{field}: {rule}"));
            }
        };
        need(!self.beta_hbar_omega0.is_nan() && self.beta_hbar_omega0 >= 0.0, "beta_hbar_omega0", "must be ≥ 0");
        need(self.gamma_down.is_finite() && self.gamma_down >= 0.0, "gamma_down", "must be finite and ≥ 0");
        need(self.lambda0.is_finite(), "lambda0", "must be finite");
        need(self.n_cycles.is_finite() && self.n_cycles > 0.0, "n_cycles", "must be finite and > 0");
        need(self.omega_over_omega0.is_finite() && self.omega_over_omega0 > 0.0, "omega_over_omega0", "must be finite and > 0");
        need(self.n_trajectories >= 1, "n_trajectories", "must be ≥ 1");
        need(self.dt_per_cycle >= 1, "dt_per_cycle", "must be ≥ 1");
        need(!self.sweep_lambda0.is_empty(), "sweep_lambda0", "must not be empty");
        need(self.sweep_lambda0.iter().all(|x| x.is_finite() && *x > 0.0), "sweep_lambda0", "entries must be finite and > 0");
        need(!self.sweep_gamma_down.is_empty(), "sweep_gamma_down", "must not be empty");
        need(self.sweep_gamma_down.iter().all(|x| x.is_finite() && *x >= 0.0), "sweep_gamma_down", "entries must be finite and ≥ 0");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(bad.join("; ")))
        }
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        self.params_with(self.gamma_down)
    }

    /// Detailed-balance rates at this temperature for another Γ↓.
    pub fn params_with(&self, gamma_down: f64) -> Result<ModelParams, CliError> {
        ModelParams::detailed_balance(self.beta_hbar_omega0, gamma_down).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn protocol(&self) -> Result<DriveProtocol, CliError> {
        self.protocol_with(self.lambda0)
    }

    pub fn protocol_with(&self, lambda0: f64) -> Result<DriveProtocol, CliError> {
        DriveProtocol::cycles(lambda0, self.omega_over_omega0, self.n_cycles).map_err(|e| CliError::Config(e.to_string()))
    }
}
