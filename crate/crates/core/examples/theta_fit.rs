//! Dependence of the first-transition plateau on the cat phase θ, followed by
//! the two-parameter (F₀, F₁) fit. Runs an 8-point θ sweep through the
//! scenario runner, so it takes a minute or so.

use lzsm_core::scenario::{read_sweep, run_scenario, Command, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg: ScenarioConfig = r#"
        model.v = 0.01
        model.gamma = 0.05
        initial.kind = "cat"
        initial.alpha = 1.0
        integrator.t0 = -300.0
        integrator.t1 = 300.0
        sweep.n_theta = 8
    "#
    .parse()?;
    let dir = tempfile::tempdir()?;
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    run_scenario(Command::SweepTheta, &cfg, &opts)?;

    for r in read_sweep(&dir.path().join("sweep.csv"))? {
        println!("θ = {:.4}  first {:.4}  second {:.4}  RWA {:.4}", r.theta, r.first, r.second, r.rwa);
    }
    print!("{}", std::fs::read_to_string(dir.path().join("fit.csv"))?);
    Ok(())
}
