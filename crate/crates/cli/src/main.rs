use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lzsm_core::scenario::{run_figure, run_scenario, Command, RunError, RunOptions, ScenarioConfig};

/// Driven qubit + photon mode: variational (multi-D2) and exact dynamics.
#[derive(Parser)]
#[command(name = "lzsm", version)]
struct Cli {
    /// Scenario file (flat `section.key = value` TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the integrator step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one trajectory.
    Simulate,
    /// Adiabatic levels and avoided crossings.
    Spectrum,
    /// Plateau heights over a grid of cat phases, with fits.
    SweepTheta,
    /// Fit a previously written sweep table (fit.input).
    Fit,
    /// Variational run against the exact propagator.
    OracleCompare,
    /// Multiplicity scan with optional exact reference.
    Convergence,
    /// Photon-resolved oscillation periods against level gaps.
    GapPeriod,
    /// Bundled scenarios for one figure.
    Figure {
        /// fig2..fig9, figS1 or figS2
        tag: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let opts = RunOptions {
        out_dir: cli.out,
        jobs: cli.jobs,
        seed: cli.seed,
        dt: cli.dt,
    };
    let result = match cli.command {
        Cmd::Figure { tag } => run_figure(&tag, &opts),
        other => {
            let cmd = match other {
                Cmd::Simulate => Command::Simulate,
                Cmd::Spectrum => Command::Spectrum,
                Cmd::SweepTheta => Command::SweepTheta,
                Cmd::Fit => Command::Fit,
                Cmd::OracleCompare => Command::OracleCompare,
                Cmd::Convergence => Command::Convergence,
                Cmd::GapPeriod => Command::GapPeriod,
                Cmd::Figure { .. } => unreachable!(),
            };
            let config = match &cli.config {
                Some(p) => ScenarioConfig::load(p).map_err(RunError::Config),
                None => Ok(ScenarioConfig::default()),
            };
            config.and_then(|c| run_scenario(cmd, &c, &opts))
        }
    };
    match result {
        Ok(rep) => {
            for f in &rep.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("lzsm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
