use std::fs;
use std::path::Path;

use lzsm_core::analytics::theta_curve;
use lzsm_core::scenario::{figure_panels, fit_sweep, run_figure, run_scenario, Command, RunError, RunOptions, ScenarioConfig};

fn opts(dir: &Path) -> RunOptions {
    RunOptions { out_dir: dir.to_path_buf(), jobs: Some(1), ..Default::default() }
}

const SHORT_VACUUM: &str = r#"
multiplicity = 2
model.v = 0.05
model.gamma = 0.1
integrator.t0 = -20.0
integrator.t1 = 20.0
integrator.dt = 0.05
integrator.n_report = 3
ed.n_trunc = 12
"#;

#[test]
fn simulate_is_deterministic() {
    let cfg: ScenarioConfig = SHORT_VACUUM.parse().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(Command::Simulate, &cfg, &opts(a.path())).unwrap();
    run_scenario(Command::Simulate, &cfg, &opts(b.path())).unwrap();
    for name in ["trajectory.csv", "manifest.toml"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn manifest_records_resolved_config() {
    let cfg: ScenarioConfig = SHORT_VACUUM.parse().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rep = run_scenario(Command::Simulate, &cfg, &opts(dir.path())).unwrap();
    assert!(rep.files.iter().any(|p| p.ends_with("manifest.toml")));
    let text = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    let m: toml::Table = text.parse().unwrap();
    assert_eq!(m["command"].as_str(), Some("simulate"));
    assert_eq!(m["status"].as_str(), Some("ok"));
    let c = m["config"].as_table().unwrap();
    assert_eq!(c["multiplicity"].as_integer(), Some(2));
    assert_eq!(c["integrator"]["t1"].as_float(), Some(20.0));
    assert!(c.contains_key("seed"));
    // The stored config reproduces the run.
    let again: ScenarioConfig = toml::to_string(c).unwrap().parse().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_scenario(Command::Simulate, &again, &opts(d2.path())).unwrap();
    assert_eq!(fs::read(dir.path().join("trajectory.csv")).unwrap(), fs::read(d2.path().join("trajectory.csv")).unwrap());
}

#[test]
fn trajectory_header_lists_populations() {
    let cfg: ScenarioConfig = SHORT_VACUUM.parse().unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_scenario(Command::Simulate, &cfg, &opts(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("t,p_lz,norm2,energy,mean_n,mandel_q"));
    assert!(header.contains("p_up_3") && header.contains("p_down_0"));
    assert!(!header.contains("p_down_4"));
}

#[test]
fn bad_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!("model.not_a_key = 1.0".parse::<ScenarioConfig>().is_err());
    let cfg: ScenarioConfig = "model.omega = -1.0".parse().unwrap();
    let err = run_scenario(Command::Simulate, &cfg, &opts(&out)).unwrap_err();
    assert!(matches!(err, RunError::Config(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
    // Odd multiplicity cannot hold a cat state.
    let cfg: ScenarioConfig = "initial.kind = \"cat\"\nmultiplicity = 3".parse().unwrap();
    assert_eq!(run_scenario(Command::Simulate, &cfg, &opts(&out)).unwrap_err().exit_code(), 2);
    assert!(!out.exists());
    // Fit without input is rejected before the directory is created.
    assert_eq!(run_scenario(Command::Fit, &ScenarioConfig::default(), &opts(&out)).unwrap_err().exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn fit_recovers_synthetic_sweep() {
    let (a2, f0, f1) = (1.0, 2.7, 0.9);
    let mut text = String::from("alpha2,theta,p_first,p_first_spread,p_second,p_second_spread,p_rwa\n");
    for k in 0..16 {
        let th = k as f64 * std::f64::consts::TAU / 16.0;
        let p = theta_curve(th, a2, f0, f1);
        text.push_str(&format!("{a2},{th},{p},0,{},0,NaN\n", 0.5 * p));
    }
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sweep.csv");
    fs::write(&input, text).unwrap();
    let rows = lzsm_core::scenario::read_sweep(&input).unwrap();
    assert_eq!(rows.len(), 16);
    let fits = fit_sweep(&rows);
    let (_, _, first) = fits.iter().find(|f| f.1 == "first").unwrap();
    let first = first.unwrap();
    assert!((first.f0 - f0).abs() < 1e-6 && (first.f1 - f1).abs() < 1e-6, "{first:?}");

    let cfg: ScenarioConfig = format!("fit.input = {:?}", input.to_str().unwrap()).parse().unwrap();
    let out = dir.path().join("fit");
    let rep = run_scenario(Command::Fit, &cfg, &opts(&out)).unwrap();
    assert!(rep.files.iter().any(|p| p.ends_with("fit.csv")));
    let csv = fs::read_to_string(out.join("fit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn short_oracle_compare_agrees() {
    let cfg: ScenarioConfig = SHORT_VACUUM.parse().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rep = run_scenario(Command::OracleCompare, &cfg, &opts(dir.path())).unwrap();
    let max = rep.summary["max_abs_diff"].as_float().unwrap();
    assert!(max < 1e-3, "max |dP| = {max}");
    assert!(dir.path().join("compare.csv").is_file());
}

#[test]
fn spectrum_writes_levels_and_crossings() {
    let cfg: ScenarioConfig = "spectrum.n_points = 101\nspectrum.n_trunc = 4\nspectrum.t0 = 50.0\nspectrum.t1 = 150.0".parse().unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_scenario(Command::Spectrum, &cfg, &opts(dir.path())).unwrap();
    let levels = fs::read_to_string(dir.path().join("levels.csv")).unwrap();
    assert_eq!(levels.lines().count(), 102);
    assert!(dir.path().join("crossings.csv").is_file());
}

#[test]
fn figure_tags() {
    assert!(figure_panels("fig3").unwrap().len() == 9);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nope");
    let err = run_figure("fig99", &opts(&out)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
}
