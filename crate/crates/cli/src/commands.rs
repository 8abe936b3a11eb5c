//! The subcommands. Each resolves its configuration, runs inside a worker
//! pool of the requested size and writes its files under `output_dir`.
//! Nothing written depends on the pool size.

use std::fmt::Write as _;

use qjwork::cayley::{
    analyze, p0_statistics, p1_statistics, perturbative_statistics, reverse_identity_check, CayleyResult, CayleySettings,
    PerturbativeResult, ReverseConvention, SweepRow,
};
use qjwork::io::{
    histogram_svg, line_plot_svg, trace_svg, write_ensemble_csv, write_histogram_csv, write_master_csv, write_sweep_csv,
    write_text, write_toml, Mark, Series,
};
use qjwork::master::{compare_ensemble, ensemble_mean_population, integrate_master};
use qjwork::stats::{photon_class, summarize, EnsembleSummary, WorkHistogram, DEFAULT_BOOTSTRAP};
use qjwork::work::{
    guardian_excited_probability, run_protocol_ensemble, trace_protocol, EnsembleRun, EnsembleSettings, GuardianSettings,
    Readout,
};
use qjwork::{DriveProtocol, Integrator, ModelParams, ReducedDensityMatrix, RngStream, TimeGrid};
use serde::Serialize;

use crate::args::{Cli, Command};
use crate::config::RunConfig;
use crate::CliError;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let cfg = RunConfig::resolve(common.config.as_deref(), &common.overrides())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        pool = pool.num_threads(n.get());
    }
    let pool = pool.build().map_err(|e| CliError::Pool(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Trace(_) => trace(&cfg),
        Command::Ensemble(_) => ensemble(&cfg),
        Command::Sweep(_) => sweep(&cfg),
        Command::Analytics(_) => analytics(&cfg),
        Command::Validate(v) => validate(&cfg, v.break_detailed_balance),
    })
}

/// Well-separated master seeds for the points of a sweep.
fn point_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn ensemble_settings(cfg: &RunConfig, n: u64, seed: u64) -> EnsembleSettings {
    let mut s = EnsembleSettings::new(n, seed);
    s.dt_per_cycle = cfg.dt_per_cycle;
    s
}

fn drive_grid(cfg: &RunConfig, drive: &DriveProtocol) -> Result<TimeGrid, CliError> {
    let grid = TimeGrid::covering(0.0, drive.duration, drive.period() / f64::from(cfg.dt_per_cycle))
        .map_err(qjwork::work::WorkError::from)?;
    Ok(grid)
}

fn write_config(cfg: &RunConfig) -> Result<(), CliError> {
    write_text(&cfg.output_dir.join("config.toml"), &cfg.emit()?)?;
    Ok(())
}

fn out(cfg: &RunConfig, name: &str) -> std::path::PathBuf {
    cfg.output_dir.join(name)
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TraceMeta {
    seed: u64,
    params: ModelParams,
    drive: DriveProtocol,
    drive_start: f64,
    drive_end: f64,
    n_jumps: usize,
    /// Absent when no guardian photon arrived within the tail.
    record: Option<qjwork::work::WorkRecord>,
}

fn trace(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.params()?;
    let drive = cfg.protocol()?;
    let period = drive.period();
    let max_tail = if params.is_isolated() { period } else { GuardianSettings::default().horizon(&params) };
    let tr = trace_protocol(&params, &drive, cfg.dt_per_cycle, 2.0 * period, period, max_tail, RngStream::new(cfg.seed, 0))?;
    qjwork::io::write_trace_csv(&out(cfg, "trace.csv"), &tr.trajectory)?;
    let title = format!("λ₀ = {}, Γ↓ = {}, βħω₀ = {}", cfg.lambda0, cfg.gamma_down, cfg.beta_hbar_omega0);
    write_text(&out(cfg, "trace.svg"), &trace_svg(&tr.trajectory, (tr.drive_start, tr.drive_end), &title))?;
    let meta = TraceMeta {
        seed: cfg.seed,
        params,
        drive,
        drive_start: tr.drive_start,
        drive_end: tr.drive_end,
        n_jumps: tr.trajectory.jumps.len(),
        record: tr.record,
    };
    write_toml(&out(cfg, "trace.toml"), &meta)?;
    write_config(cfg)?;
    match tr.record {
        Some(r) => println!("trace: {} jumps, W = {} ħω₀", meta.n_jumps, r.work_quanta),
        None => println!("trace: {} jumps, no guardian photon within the tail", meta.n_jumps),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ensemble
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EnsembleMeta {
    seed: u64,
    readout: Readout,
    params: ModelParams,
    drive: DriveProtocol,
    n_requested: u64,
    n_timeouts: usize,
    timeouts: Vec<u64>,
    summary: EnsembleSummary,
}

fn run_and_summarize(
    cfg: &RunConfig,
    params: &ModelParams,
    drive: &DriveProtocol,
    seed: u64,
) -> Result<(EnsembleRun, EnsembleSummary), CliError> {
    let run = run_protocol_ensemble(params, drive, &ensemble_settings(cfg, cfg.n_trajectories, seed))?;
    let mut rng = RngStream::auxiliary(seed, 0).generator();
    let summary = summarize(&run.records, params.beta_hbar_omega0, DEFAULT_BOOTSTRAP, &mut rng)?;
    Ok((run, summary))
}

fn ensemble(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.params()?;
    let drive = cfg.protocol()?;
    let (run, summary) = run_and_summarize(cfg, &params, &drive, cfg.seed)?;
    write_ensemble_csv(&out(cfg, "ensemble.csv"), &run.records)?;
    let hist = WorkHistogram::from_records(&run.records);
    write_histogram_csv(&out(cfg, "histogram.csv"), &hist)?;
    let title = format!("P(W), λ₀ = {}, Γ↓ = {}, βħω₀ = {}", cfg.lambda0, cfg.gamma_down, cfg.beta_hbar_omega0);
    write_text(&out(cfg, "histogram.svg"), &histogram_svg(&hist, &title))?;
    let meta = EnsembleMeta {
        seed: cfg.seed,
        readout: run.readout,
        params,
        drive,
        n_requested: cfg.n_trajectories,
        n_timeouts: run.timeouts.len(),
        timeouts: run.timeouts,
        summary: summary.clone(),
    };
    write_toml(&out(cfg, "summary.toml"), &meta)?;
    write_config(cfg)?;
    println!(
        "ensemble: N = {}, ⟨W⟩ = {:.6} ± {:.6}, ⟨W²⟩/⟨W⟩ = {:.5} ± {:.5}{}, ⟨e^(−βW)⟩ = {:.5} ± {:.5}",
        summary.n,
        summary.mean_w.value,
        summary.mean_w.std_error,
        summary.ratio.value,
        summary.ratio.std_error,
        if summary.ratio_defined { "" } else { " (undefined)" },
        summary.jarzynski_mean.value,
        summary.jarzynski_mean.std_error,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// A point of the (λ₀, Γ↓) grid, ordered λ₀-major.
fn sweep_points(cfg: &RunConfig) -> Vec<(f64, f64)> {
    cfg.sweep_lambda0.iter().flat_map(|&l| cfg.sweep_gamma_down.iter().map(move |&g| (l, g))).collect()
}

fn montecarlo_row(lambda0: f64, gamma_down: f64, run: &EnsembleRun, s: &EnsembleSummary) -> SweepRow {
    let beta = s.beta_hbar_omega0;
    SweepRow {
        lambda0,
        gamma_down,
        p0: photon_class(&run.records, 0, beta).probability,
        p1: photon_class(&run.records, 1, beta).probability,
        w1_mean: s.mean_w.value,
        w2_mean: s.mean_w2.value,
        ratio: s.ratio.value,
        jarzynski_lhs: s.jarzynski_mean.value,
        // no free-energy change over whole cycles
        jarzynski_rhs: 1.0,
    }
}

#[derive(Serialize)]
struct SweepPointMeta {
    lambda0: f64,
    gamma_down: f64,
    seed: u64,
    n_timeouts: usize,
    ratio_defined: bool,
}

#[derive(Serialize)]
struct SweepMeta {
    readout: Readout,
    points: Vec<SweepPointMeta>,
}

fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    use rayon::prelude::*;

    let points = sweep_points(cfg);
    let cayley_settings = CayleySettings::default();
    let quadrature: Vec<SweepRow> = points
        .par_iter()
        .map(|&(l, g)| -> Result<SweepRow, CliError> {
            let r = analyze(&cfg.params_with(g)?, &cfg.protocol_with(l)?, &cayley_settings, ReverseConvention::SameRates)?;
            Ok(SweepRow::from_cayley(l, g, &r))
        })
        .collect::<Result<_, _>>()?;
    let perturbative: Vec<SweepRow> = points
        .iter()
        .map(|&(l, g)| -> Result<SweepRow, CliError> {
            let r = perturbative_statistics(&cfg.params_with(g)?, &cfg.protocol_with(l)?)?;
            Ok(SweepRow::from_perturbative(l, g, &r))
        })
        .collect::<Result<_, _>>()?;

    let mut mc_rows = Vec::with_capacity(points.len());
    let mut ratio_se = Vec::with_capacity(points.len());
    let mut errors = String::from(
        "lambda0,gamma_down,n,n_timeouts,W_mean_se,W2_mean_se,ratio_se,ratio_ci_low,ratio_ci_high,ratio_defined,jarzynski_se\n",
    );
    let mut meta = SweepMeta { readout: Readout::GuardianPhoton, points: Vec::new() };
    for (k, &(l, g)) in points.iter().enumerate() {
        let seed = point_seed(cfg.seed, k);
        let (run, s) = run_and_summarize(cfg, &cfg.params_with(g)?, &cfg.protocol_with(l)?, seed)?;
        meta.readout = run.readout;
        mc_rows.push(montecarlo_row(l, g, &run, &s));
        ratio_se.push(s.ratio.std_error);
        let _ = writeln!(
            errors,
            "{l},{g},{},{},{},{},{},{},{},{},{}",
            s.n,
            run.timeouts.len(),
            s.mean_w.std_error,
            s.mean_w2.std_error,
            s.ratio.std_error,
            s.ratio.ci_low,
            s.ratio.ci_high,
            s.ratio_defined,
            s.jarzynski_mean.std_error
        );
        meta.points.push(SweepPointMeta {
            lambda0: l,
            gamma_down: g,
            seed,
            n_timeouts: run.timeouts.len(),
            ratio_defined: s.ratio_defined,
        });
        println!("sweep: λ₀ = {l}, Γ↓ = {g}: ratio {:.4} ± {:.4}", s.ratio.value, s.ratio.std_error);
    }

    write_sweep_csv(&out(cfg, "sweep_montecarlo.csv"), &mc_rows)?;
    write_text(&out(cfg, "sweep_montecarlo_errors.csv"), &errors)?;
    write_sweep_csv(&out(cfg, "sweep_quadrature.csv"), &quadrature)?;
    write_sweep_csv(&out(cfg, "sweep_perturbative.csv"), &perturbative)?;

    let mut series = Vec::new();
    for (c, &l) in cfg.sweep_lambda0.iter().enumerate() {
        let pick = |rows: &[SweepRow], err: Option<&[f64]>| -> Vec<(f64, f64, f64)> {
            rows.iter()
                .enumerate()
                .filter(|(_, r)| r.lambda0 == l)
                .map(|(i, r)| (r.gamma_down, r.ratio, err.map_or(0.0, |e| e[i])))
                .collect()
        };
        series.push(Series { label: format!("MC λ₀ = {l}"), mark: Mark::Points, points: pick(&mc_rows, Some(&ratio_se)), color: c });
        series.push(Series { label: format!("quadrature λ₀ = {l}"), mark: Mark::Line, points: pick(&quadrature, None), color: c });
        series.push(Series {
            label: format!("perturbative λ₀ = {l}"),
            mark: Mark::DashedLine,
            points: pick(&perturbative, None),
            color: c,
        });
    }
    let title = format!("⟨W²⟩/(ħω₀⟨W⟩), βħω₀ = {}", cfg.beta_hbar_omega0);
    write_text(&out(cfg, "sweep.svg"), &line_plot_svg(&series, &title, "Γ↓/ω₀", "⟨W²⟩/(ħω₀⟨W⟩)"))?;
    write_toml(&out(cfg, "sweep.toml"), &meta)?;
    write_config(cfg)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// analytics
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct IdentityRow {
    n: usize,
    jarzynski_term: f64,
    reverse_probability: f64,
    discrepancy: f64,
}

#[derive(Serialize)]
struct AnalyticsMeta {
    params: ModelParams,
    drive: DriveProtocol,
    quadrature: CayleyResult<f64>,
    quadrature_row: SweepRow,
    reverse_identity: Vec<IdentityRow>,
    /// Same identities with Γ↑ and Γ↓ swapped in the reverse process.
    reverse_identity_swapped_rates: Vec<IdentityRow>,
    perturbative: Option<PerturbativeResult<f64>>,
    perturbative_row: Option<SweepRow>,
    /// Why the closed forms were not evaluated, if they were not.
    perturbative_note: Option<String>,
}

fn identity_rows(params: &ModelParams, drive: &DriveProtocol, convention: ReverseConvention) -> Result<Vec<IdentityRow>, CliError> {
    Ok(reverse_identity_check(params, drive, &CayleySettings::default(), convention)?
        .iter()
        .map(|i| IdentityRow { n: i.n, jarzynski_term: i.lhs, reverse_probability: i.rhs, discrepancy: i.discrepancy() })
        .collect())
}

fn analytics(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.params()?;
    let drive = cfg.protocol()?;
    let quadrature = analyze(&params, &drive, &CayleySettings::default(), ReverseConvention::SameRates)?;
    let (perturbative, perturbative_note) = match perturbative_statistics(&params, &drive) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let meta = AnalyticsMeta {
        params,
        drive,
        quadrature,
        quadrature_row: SweepRow::from_cayley(cfg.lambda0, cfg.gamma_down, &quadrature),
        reverse_identity: identity_rows(&params, &drive, ReverseConvention::SameRates)?,
        reverse_identity_swapped_rates: identity_rows(&params, &drive, ReverseConvention::SwappedRates)?,
        perturbative,
        perturbative_row: perturbative.map(|p| SweepRow::from_perturbative(cfg.lambda0, cfg.gamma_down, &p)),
        perturbative_note,
    };
    write_toml(&out(cfg, "analytics.toml"), &meta)?;

    let grid = drive_grid(cfg, &drive)?;
    let sigma = integrate_master(&params, &drive, ReducedDensityMatrix::thermal(&params), &grid)?;
    write_master_csv(&out(cfg, "master.csv"), &grid, &sigma)?;
    let curve: Vec<(f64, f64, f64)> = sigma.iter().enumerate().map(|(k, s)| (grid.time(k), s.sigma_ee(), 0.0)).collect();
    let series = [Series { label: "σ_ee".into(), mark: Mark::Line, points: curve, color: 0 }];
    write_text(&out(cfg, "master.svg"), &line_plot_svg(&series, "Master equation, thermal start", "ω₀t", "σ_ee"))?;
    write_config(cfg)?;

    let row = meta.quadrature_row;
    println!("analytics: P₀ = {:.8}, P₁ = {:.8}, ⟨W²⟩/⟨W⟩ = {:.6}", row.p0, row.p1, row.ratio);
    for i in &meta.reverse_identity {
        println!("analytics: n = {}: P_nJ_n = {:.10}, P_R,n = {:.10}", i.n, i.jarzynski_term, i.reverse_probability);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Not applicable to these parameters.
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, status: if passed { Status::Pass } else { Status::Fail }, detail }
    }

    fn skip(name: &'static str, detail: &str) -> Self {
        Self { name, status: Status::Skip, detail: detail.into() }
    }
}

#[derive(Serialize)]
struct ValidateMeta {
    break_detailed_balance: bool,
    params: ModelParams,
    checks: Vec<Check>,
}

fn check_master(cfg: &RunConfig, params: &ModelParams, drive: &DriveProtocol) -> Result<Check, CliError> {
    let grid = drive_grid(cfg, drive)?;
    let sigma = integrate_master(params, drive, ReducedDensityMatrix::thermal(params), &grid)?;
    let mean = ensemble_mean_population(params, drive, grid, Integrator::RungeKutta4, cfg.n_trajectories, cfg.seed)?;
    let sup = compare_ensemble(&mean, &sigma)?;
    let bound = 5.0 / (cfg.n_trajectories as f64).sqrt();
    Ok(Check::new("master-equation", sup <= bound, format!("sup|mean |b|² − σ_ee| = {sup:.3e}, bound 5/√N = {bound:.3e}")))
}

fn check_guardian(params: &ModelParams) -> Result<Check, CliError> {
    if params.gamma_sum() == 0.0 {
        return Ok(Check::skip("guardian", "isolated qubit: Born-rule readout"));
    }
    let mut worst: f64 = 0.0;
    for pe in [0.1, 0.3, 0.5, 0.7, 0.9] {
        worst = worst.max((guardian_excited_probability(pe, params)? - pe).abs());
    }
    Ok(Check::new("guardian", worst <= 1e-6, format!("max |P(emission first) − p_e| = {worst:.3e}, tolerance 1e-6")))
}

fn check_reverse(params: &ModelParams, drive: &DriveProtocol) -> Result<Check, CliError> {
    let rows = identity_rows(params, drive, ReverseConvention::SameRates)?;
    let worst = rows.iter().map(|r| r.discrepancy).fold(0.0, f64::max);
    Ok(Check::new("reverse-identity", worst <= 1e-6, format!("max_n |P_nJ_n − P_R,n| = {worst:.3e}, tolerance 1e-6")))
}

/// |closed form − quadrature| for P₀, P₁, P⟨W⟩ and P⟨W²⟩.
fn perturbative_gaps(params: &ModelParams, drive: &DriveProtocol) -> Result<[f64; 4], CliError> {
    let s = CayleySettings::default();
    let (z, o) = (p0_statistics(params, drive, &s), p1_statistics(params, drive, &s)?);
    let q = perturbative_statistics(params, drive)?;
    Ok([
        (z.probability - q.zero.probability).abs(),
        (o.probability - q.one.probability).abs(),
        (z.weighted_w + o.weighted_w - q.zero.weighted_w - q.one.weighted_w).abs(),
        (z.weighted_w2 + o.weighted_w2 - q.zero.weighted_w2 - q.one.weighted_w2).abs(),
    ])
}

fn check_perturbation_order(params: &ModelParams, drive: &DriveProtocol) -> Result<Check, CliError> {
    const NAME: &str = "perturbation-order";
    if params.gamma_sum() == 0.0 {
        return Ok(Check::skip(NAME, "no dissipation"));
    }
    if !drive.is_resonant(params.omega0) {
        return Ok(Check::skip(NAME, "closed forms need a resonant drive"));
    }
    let half = ModelParams::with_rates(params.beta_hbar_omega0, params.gamma_down / 2.0, params.gamma_up / 2.0)?;
    let (a, b) = (perturbative_gaps(params, drive)?, perturbative_gaps(&half, drive)?);
    let ratios: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x / y).collect();
    let ok = ratios.iter().all(|r| (2.0..=6.0).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    Ok(Check::new(NAME, ok, format!("gap ratio on halving Γ for P₀, P₁, ⟨W⟩, ⟨W²⟩ = [{}], band [2, 6]", shown.join(", "))))
}

fn check_determinism(cfg: &RunConfig, params: &ModelParams, drive: &DriveProtocol) -> Result<Check, CliError> {
    let settings = ensemble_settings(cfg, cfg.n_trajectories.min(2_000), cfg.seed);
    let mut runs = Vec::new();
    for workers in [1, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Pool(e.to_string()))?;
        runs.push(pool.install(|| run_protocol_ensemble(params, drive, &settings))?);
    }
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    Ok(Check::new("determinism", same, format!("{} records identical across 1, 4, 8 workers: {same}", settings.n_trajectories)))
}

pub fn validate_checks(cfg: &RunConfig, break_detailed_balance: bool) -> Result<(ModelParams, Vec<Check>), CliError> {
    let mut params = cfg.params()?;
    if break_detailed_balance {
        params = ModelParams::with_rates(params.beta_hbar_omega0, params.gamma_down, 1.5 * params.gamma_up)?;
    }
    let drive = cfg.protocol()?;
    let checks = vec![
        check_master(cfg, &params, &drive)?,
        check_guardian(&params)?,
        check_reverse(&params, &drive)?,
        check_perturbation_order(&params, &drive)?,
        check_determinism(cfg, &params, &drive)?,
    ];
    Ok((params, checks))
}

fn validate(cfg: &RunConfig, break_detailed_balance: bool) -> Result<(), CliError> {
    let (params, checks) = validate_checks(cfg, break_detailed_balance)?;
    for c in &checks {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("{tag} {}: {}", c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name).collect();
    write_toml(&out(cfg, "validate.toml"), &ValidateMeta { break_detailed_balance, params, checks })?;
    write_config(cfg)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}
