// Named to sort before `acceptance`: cargo stops at the first failing test
// binary, and these should run even when an acceptance criterion fails.

use std::path::Path;
use std::process::{Command, Output};

use qjwork_cli::{Overrides, RunConfig};

fn qjwork(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qjwork")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for name in ["damped_rabi.toml", "ratio_sweep.toml", "pi_pulse.toml"] {
        let cfg = RunConfig::load(&configs_dir().join(name)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.emit().unwrap()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn emitted_config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        beta_hbar_omega0: 2.5,
        sweep_lambda0: vec![0.03],
        output_dir: dir.path().join("x"),
        ..Default::default()
    };
    let path = dir.path().join("c.toml");
    std::fs::write(&path, cfg.emit().unwrap()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}

#[test]
fn defaults_then_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "lambda0 = 0.1\nseed = 5\nn_cycles = 4.0\n").unwrap();
    let flags = Overrides { seed: Some(9), gamma_down: Some(0.03), ..Default::default() };
    let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
    let expected = RunConfig { lambda0: 0.1, seed: 9, n_cycles: 4.0, gamma_down: 0.03, ..Default::default() };
    assert_eq!(cfg, expected);

    // the binary records the same layering in its output directory
    let out = dir.path().join("run");
    let o = qjwork(&["trace", "--config", path.to_str().unwrap(), "--seed", "9", "--gamma-down", "0.03", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written = RunConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(written, RunConfig { output_dir: out.clone(), ..expected });
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "lamda0 = 0.1\n").unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    for args in [
        vec!["trace", "--config", bad.to_str().unwrap(), "--out", out],
        vec!["trace", "--config", "/nonexistent/c.toml", "--out", out],
        vec!["trace", "--gamma-down", "-1", "--out", out],
        vec!["trace", "--n-cycles", "0", "--out", out],
        vec!["ensemble", "--no-such-flag"],
        vec!["ensemble", "--workers", "0", "--out", out],
    ] {
        let o = qjwork(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn oversized_step_reports_the_fix() {
    let dir = tempfile::tempdir().unwrap();
    let o = qjwork(&["ensemble", "--dt-per-cycle", "2", "--gamma-down", "0.1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("reduce dt"));
}

#[test]
fn validate_passes_and_the_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let good = qjwork(&["validate", "--n-trajectories", "2000", "--out", out]);
    let stdout = String::from_utf8_lossy(&good.stdout);
    assert_eq!(code(&good), 0, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{stdout}");

    let broken = qjwork(&["validate", "--n-trajectories", "2000", "--break-detailed-balance", "--out", out]);
    let stdout = String::from_utf8_lossy(&broken.stdout);
    assert_eq!(code(&broken), 1, "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("FAIL reverse-identity")), "{stdout}");
}

#[test]
fn ensemble_files_do_not_depend_on_the_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |w: &str| {
        let out = dir.path().join(format!("w{w}"));
        let o = qjwork(&["ensemble", "--workers", w, "--n-trajectories", "3000", "--seed", "77", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        ["ensemble.csv", "histogram.csv", "histogram.svg", "summary.toml"].map(|f| read(&out, f))
    };
    let one = run("1");
    assert_eq!(one, run("4"));
    assert_eq!(one, run("8"));
}

#[test]
fn sweep_writes_all_tables_identically_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let run = |w: &str| {
        let out = dir.path().join(format!("w{w}"));
        let o = qjwork(&[
            "sweep", "--workers", w, "--n-trajectories", "500", "--n-cycles", "4",
            "--sweep-lambda0", "0.1", "--sweep-gamma-down", "0.01,0.02", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        ["sweep_montecarlo.csv", "sweep_montecarlo_errors.csv", "sweep_quadrature.csv", "sweep_perturbative.csv", "sweep.svg", "sweep.toml"]
            .map(|f| read(&out, f))
    };
    let one = run("1");
    assert_eq!(one, run("4"));
    let quad = String::from_utf8(one[2].clone()).unwrap();
    assert_eq!(quad.lines().next().unwrap(), "lambda0,gamma_down,P0,P1,W1_mean,W2_mean,ratio,jarzynski_lhs,jarzynski_rhs");
    assert_eq!(quad.lines().count(), 3);
}

#[test]
fn trace_and_analytics_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    assert_eq!(code(&qjwork(&["trace", "--out", t.to_str().unwrap()])), 0);
    for f in ["trace.csv", "trace.svg", "trace.toml", "config.toml"] {
        assert!(!read(&t, f).is_empty(), "{f}");
    }
    let header = String::from_utf8(read(&t, "trace.csv")).unwrap();
    assert!(header.starts_with("t,pop_e,jump_flag,jump_kind\n"));

    let a = dir.path().join("a");
    let o = qjwork(&["analytics", "--n-cycles", "4", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let toml_text = String::from_utf8(read(&a, "analytics.toml")).unwrap();
    assert!(toml_text.contains("[[reverse_identity]]"));
    assert!(String::from_utf8(read(&a, "master.csv")).unwrap().lines().count() > 4000);
}
