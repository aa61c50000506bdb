use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use abflab_cli::config::ExperimentConfig;
use abflab_cli::{compare_runs, run, CliError, OutputTarget};

fn config(lines: &str) -> ExperimentConfig {
    ExperimentConfig::parse(lines).unwrap()
}

fn exact(dir: &Path) -> OutputTarget {
    OutputTarget { exact: Some(dir.to_path_buf()), ..Default::default() }
}

#[test]
fn oracle_only_writes_the_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("oracle");
    let outcome = run(config("kind = oracle_only"), &exact(&out)).unwrap();
    assert_eq!(outcome.exit_code, 0);
    let text = fs::read_to_string(out.join("profile.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("z,A,Aprime,Z_sigma"));
    let quarter: Vec<f64> = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .find(|r| r[0] == 0.25)
        .unwrap();
    assert!((quarter[2] + 2.0 * PI).abs() < 1e-6, "{}", quarter[2]);
    let summary = &outcome.summary;
    assert!(summary["final"]["oracle_consistency"].as_f64().unwrap() < 1e-6);
}

#[test]
fn frozen_run_from_equilibrium_stays_put() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("frozen");
    let cfg = config("kind = pde_frozen\ninit = equilibrium\nn_x = 128\nn_y = 128\nt_end = 0.02\nsnapshot_stride = 0");
    let outcome = run(cfg, &exact(&out)).unwrap();
    assert_eq!(outcome.exit_code, 0);
    let text = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        for &x in &v[1..7] {
            assert!(x.abs() < 1e-5, "{line}");
        }
    }
    assert!(out.join("bias_final.csv").exists());
    // stride 0 keeps only the final snapshot
    let snaps: Vec<String> = fs::read_dir(out.join("snapshots")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(snaps.len(), 2, "{snaps:?}");
    assert!(snaps.iter().any(|s| s.ends_with(".json")));
}

#[test]
fn particle_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "kind = particles_metric\nseed = 11\nn_particles = 3000\nn_bins = 16\ndt = 0.001\nt_end = 0.2\nsnapshot_stride = 0";
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(config(cfg), &exact(&a)).unwrap();
    run(config(cfg), &exact(&b)).unwrap();
    let da = fs::read(a.join("diagnostics.csv")).unwrap();
    let db = fs::read(b.join("diagnostics.csv")).unwrap();
    assert_eq!(da, db);
    assert!(!da.contains(&b'\r'));

    let cmp = compare_runs(&a, &b, 3.0);
    assert!(cmp.problems.is_empty(), "{:?}", cmp.problems);
    assert!(!cmp.metrics.is_empty());
    for m in &cmp.metrics {
        assert!(m.delta() == 0.0 || (m.a.is_nan() && m.b.is_nan()), "{m:?}");
    }
    assert!(cmp.bins.iter().all(|b| b.a == b.b));
}

#[test]
fn config_echo_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    run(config("kind = marginal_only\nn_x = 32\nn_y = 32\nt_end = 0.01"), &exact(&a)).unwrap();
    let echo = fs::read_to_string(a.join("config_echo.txt")).unwrap();
    let b = tmp.path().join("b");
    run(config(&echo), &exact(&b)).unwrap();
    assert_eq!(fs::read(a.join("diagnostics.csv")).unwrap(), fs::read(b.join("diagnostics.csv")).unwrap());
    assert_eq!(echo, fs::read_to_string(b.join("config_echo.txt")).unwrap());
}

#[test]
fn validation_failure_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bad");
    let err = run(config("kind = pde_abf_metric\ndt = 0.5\nt_end = 1"), &exact(&out)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("admissible"), "{err}");
    assert!(!out.exists());

    let err = run(config("kind = particles_plain"), &exact(&out)).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(!out.exists());
}

#[test]
fn previous_runs_are_not_clobbered() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    run(config("kind = oracle_only\noracle_points = 16"), &exact(&out)).unwrap();
    let err = run(config("kind = oracle_only\noracle_points = 16"), &exact(&out)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let target = OutputTarget { overwrite: true, ..exact(&out) };
    run(config("kind = oracle_only\noracle_points = 32"), &target).unwrap();
    assert_eq!(fs::read_to_string(out.join("profile.csv")).unwrap().lines().count(), 33);

    // timestamped runs land in fresh subdirectories
    let root = tmp.path().join("root");
    let target = OutputTarget { root: Some(root.clone()), ..Default::default() };
    let first = run(config("kind = oracle_only\noracle_points = 16"), &target).unwrap().dir;
    let second = run(config("kind = oracle_only\noracle_points = 16"), &target).unwrap().dir;
    assert_ne!(first, second);
    assert!(first.starts_with(&root) && second.starts_with(&root));

    // a non-run directory is never cleared
    let foreign = tmp.path().join("foreign");
    fs::create_dir_all(&foreign).unwrap();
    fs::write(foreign.join("notes.txt"), "keep").unwrap();
    let target = OutputTarget { overwrite: true, ..exact(&foreign) };
    assert!(run(config("kind = oracle_only"), &target).is_err());
    assert!(foreign.join("notes.txt").exists());
}

#[test]
fn marginal_cross_check_closes_and_refines() {
    let tmp = tempfile::tempdir().unwrap();
    let coarse = tmp.path().join("coarse");
    let fine = tmp.path().join("fine");
    run(config("kind = marginal_only\nn_x = 32\nn_y = 32\nt_end = 0.05"), &exact(&coarse)).unwrap();
    run(config("kind = marginal_only\nn_x = 64\nn_y = 64\nt_end = 0.05"), &exact(&fine)).unwrap();
    let cmp = compare_runs(&coarse, &fine, 3.0);
    let ratio = cmp.closure_ratio.unwrap();
    assert!((3.0..=5.0).contains(&ratio), "closure ratio {ratio}");
}

#[test]
fn compare_reports_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    run(config("kind = oracle_only\noracle_points = 16"), &exact(&a)).unwrap();
    fs::write(tmp.path().join("summary.json"), "{ not json").unwrap();
    let cmp = compare_runs(&a, tmp.path(), 3.0);
    assert_eq!(cmp.problems.len(), 1);
    let cmp = compare_runs(&a, &tmp.path().join("missing"), 3.0);
    assert_eq!(cmp.problems.len(), 1);
}

#[test]
fn rates_writes_a_gnuplot_script() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m");
    run(config("kind = marginal_only\nn_x = 32\nn_y = 32\nt_end = 0.05\ncross_check = false"), &exact(&out)).unwrap();
    let report = abflab_cli::rates::rates(&out, Some((0.0, 0.05))).unwrap();
    let rate = report.fits["E_macro"]["rate"].as_f64().unwrap();
    assert!((rate / (8.0 * PI * PI) - 1.0).abs() < 0.03, "{rate}");
    let script = fs::read_to_string(report.script).unwrap();
    assert!(script.contains("diagnostics.csv"));
}

#[test]
fn pde_and_particle_biases_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let pde = tmp.path().join("pde");
    let particles = tmp.path().join("particles");
    run(config("kind = pde_abf_metric\nn_x = 64\nn_y = 64\nt_end = 1\nsnapshot_stride = 0"), &exact(&pde)).unwrap();
    run(
        config("kind = particles_metric\nseed = 3\nn_particles = 10000\nn_bins = 32\ndt = 0.001\nt_end = 1\nsnapshot_stride = 0"),
        &exact(&particles),
    )
    .unwrap();
    let cmp = compare_runs(&pde, &particles, 3.0);
    assert!(cmp.problems.is_empty(), "{:?}", cmp.problems);
    assert_eq!(cmp.bins.len(), 32);
    let agree = cmp.bins.iter().filter(|b| b.agrees()).count();
    assert!(agree >= 30, "{}", cmp.render());
}
