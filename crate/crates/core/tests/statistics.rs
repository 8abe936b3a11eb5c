mod common;

use qjwork::io::{histogram_svg, write_ensemble_csv, write_histogram_csv};
use qjwork::stats::{summarize, summarize_histogram, WorkHistogram, DEFAULT_BOOTSTRAP};
use qjwork::work::{run_protocol_ensemble, EnsembleSettings, ProtocolSampler};
use qjwork::{DriveProtocol, ModelParams, RngStream};
use num_rational::Ratio;
use rand::Rng;

/// W ∈ {−1, +1} with detailed-balance weights p(+1)/p(−1) = e^{β}.
fn synthetic(beta: f64, n: u64, seed: u64) -> WorkHistogram {
    let p_up = common::p_ground(beta);
    let mut rng = RngStream::new(seed, 0).generator();
    (0..n).map(|_| if rng.random::<f64>() < p_up { 1 } else { -1 }).collect()
}

#[test]
fn synthetic_detailed_balance_satisfies_jarzynski() {
    for (k, beta) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let hist = synthetic(beta, 100_000, 10 + k as u64);
        let mut rng = RngStream::auxiliary(1, k as u64).generator();
        let s = summarize_histogram(&hist, beta, DEFAULT_BOOTSTRAP, &mut rng).unwrap();
        assert!(s.jarzynski_mean.within_sigmas(1.0, 3.0), "β = {beta}: {:?}", s.jarzynski_mean);
    }
}

#[test]
fn bootstrap_error_shrinks_as_inverse_root_n() {
    let se = |n: u64| {
        let mut rng = RngStream::auxiliary(2, n).generator();
        summarize_histogram(&synthetic(1.0, n, n), 1.0, DEFAULT_BOOTSTRAP, &mut rng).unwrap().mean_w.std_error
    };
    let (a, b, c) = (se(1_000), se(10_000), se(100_000));
    for ratio in [a / b, b / c] {
        assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}

#[test]
fn bootstrap_intervals_cover_the_isolated_ratio() {
    // For an isolated π-pulse ⟨W²⟩/⟨W⟩ = coth(β/2) even with a small no-flip
    // probability, because both moments carry the same flip factor.
    let beta = 1.0;
    let target = common::coth(beta / 2.0);
    let params = ModelParams::isolated(beta).unwrap();
    let drive = DriveProtocol::pi_pulse(0.05).unwrap();
    let repeats = 100u64;
    let mut covered = 0;
    for r in 0..repeats {
        let run = run_protocol_ensemble(&params, &drive, &EnsembleSettings::new(2_000, 500 + r)).unwrap();
        let mut rng = RngStream::auxiliary(500 + r, 0).generator();
        let s = summarize(&run.records, beta, DEFAULT_BOOTSTRAP, &mut rng).unwrap();
        covered += u64::from(s.ratio.interval_covers(target));
    }
    // nominal 95% level, 3 binomial σ over the repeats
    let floor = 0.95 * repeats as f64 - 3.0 * common::binomial_sigma(0.95, repeats) * repeats as f64;
    assert!(covered as f64 >= floor, "covered {covered} of {repeats}, floor {floor:.1}");
}

#[test]
fn half_ensembles_merge_exactly() {
    let params = ModelParams::detailed_balance(1.0, 0.02).unwrap();
    let drive = DriveProtocol::resonant(0.05, 10.0).unwrap();
    let sampler = ProtocolSampler::new(params, &drive, EnsembleSettings::new(2_000, 3)).unwrap();
    let full = WorkHistogram::from_records(&sampler.run().unwrap().records);
    let mut merged = WorkHistogram::from_records(&sampler.run_range(0..1_000).unwrap().records);
    merged.merge(&WorkHistogram::from_records(&sampler.run_range(1_000..2_000).unwrap().records));
    assert_eq!(merged, full);
    let total: Ratio<u64> = full.probabilities().into_iter().map(|(_, p)| p).sum();
    assert_eq!(total, Ratio::from_integer(1));
}

#[test]
fn cold_bath_point_satisfies_jarzynski() {
    let params = ModelParams::detailed_balance(2.0, 0.01).unwrap();
    let drive = DriveProtocol::resonant(0.05, 10.0).unwrap();
    let run = run_protocol_ensemble(&params, &drive, &EnsembleSettings::new(100_000, 314)).unwrap();
    assert!(run.timeouts.is_empty());
    let mut rng = RngStream::auxiliary(314, 0).generator();
    let s = summarize(&run.records, 2.0, DEFAULT_BOOTSTRAP, &mut rng).unwrap();
    assert!(s.jarzynski_mean.within_sigmas(1.0, 3.0), "{:?}", s.jarzynski_mean);
    assert!(s.ratio_defined);
}

#[test]
fn dissipation_widens_the_work_distribution() {
    let params = ModelParams::detailed_balance(1.0, 0.02).unwrap();
    let drive = DriveProtocol::resonant(0.05, 10.0).unwrap();
    let run = run_protocol_ensemble(&params, &drive, &EnsembleSettings::new(20_000, 15)).unwrap();
    let hist = WorkHistogram::from_records(&run.records);
    assert!(hist.occupied_bins() > 2);
    assert!(hist.mass_beyond(1) > Ratio::from_integer(0));
}

#[test]
fn emitted_files_are_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::detailed_balance(1.0, 0.02).unwrap();
    let drive = DriveProtocol::resonant(0.05, 2.0).unwrap();
    let write = |name: &str| {
        let run = run_protocol_ensemble(&params, &drive, &EnsembleSettings::new(500, 8)).unwrap();
        let path = dir.path().join(name);
        write_ensemble_csv(&path, &run.records).unwrap();
        std::fs::read(path).unwrap()
    };
    let first = write("a.csv");
    assert_eq!(first, write("b.csv"));
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().next().unwrap(), "index,initial,final,n_emit,n_absorb,Q_over_hw0,W_over_hw0");
    assert_eq!(text.lines().count(), 501);

    let two: WorkHistogram = [1, 1, -1].into_iter().collect();
    assert_eq!(histogram_svg(&two, "two bars").matches("class=\"bar\"").count(), 2);
    let hpath = dir.path().join("h.csv");
    write_histogram_csv(&hpath, &two).unwrap();
    assert_eq!(std::fs::read_to_string(hpath).unwrap().lines().count(), 3);
}
