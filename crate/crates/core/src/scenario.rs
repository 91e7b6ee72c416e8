//! Config-driven batch runs.
//!
//! A scenario file is flat TOML: `section.key = value` lines such as
//! `model.gamma = 0.12` or `initial.kind = "cat"`. Unknown keys are errors.
//! Every pipeline validates the whole configuration before it touches the
//! output directory, writes CSV tables with a fixed float format and ends
//! with a `manifest.toml` that echoes the fully resolved configuration.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{fit_theta_curve, first_plateau_window, plateau_average, rwa_final_probability, second_plateau_window, FitResult};
use crate::ansatz::{init_cat, init_vacuum, CatSpec, JitterSpec, MultiD2State};
use crate::dynamics::{integrate, IntegratorConfig, Trajectory, DEFAULT_NORM_GUARD, DEFAULT_REG_EPSILON};
use crate::error::{Error, Result};
use crate::interferometer::{gap_period_points, regress, PeriodProbe};
use crate::model::{DriveProtocol, FockLabel, ModeSpec, ModelParams, Spin};
use crate::observables::{series, write_trajectory_csv, TrajectoryRecord};
use crate::spectrum::{adiabatic_levels, basis_vector, cat_fock_vector, ed_evolve, find_avoided_crossings, fmt_f, write_crossings_csv, write_levels_csv, EdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveKind {
    Linear,
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Vacuum,
    Cat,
    /// A single Fock basis state; only the exact propagator can start from it.
    Fock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinName {
    Up,
    Down,
}

impl From<SpinName> for Spin {
    fn from(s: SpinName) -> Spin {
        match s {
            SpinName::Up => Spin::Up,
            SpinName::Down => Spin::Down,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub delta: f64,
    pub drive: DriveKind,
    /// Linear sweep speed.
    pub v: f64,
    pub eps0: f64,
    pub amplitude: f64,
    pub drive_omega: f64,
    pub phi0: f64,
    /// Photon frequency.
    pub omega: f64,
    pub gamma: f64,
    /// Interaction angle; π/2 is pure σ_x coupling.
    pub coupling_angle: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            delta: 0.0,
            drive: DriveKind::Linear,
            v: 0.01,
            eps0: 0.0,
            amplitude: 0.7,
            drive_omega: PI / 200.0,
            phi0: FRAC_PI_2,
            omega: 1.0,
            gamma: 0.05,
            coupling_angle: FRAC_PI_2,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> ModelParams {
        let drive = match self.drive {
            DriveKind::Linear => DriveProtocol::Linear { v: self.v },
            DriveKind::Sinusoidal => DriveProtocol::Sinusoidal {
                eps0: self.eps0,
                amplitude: self.amplitude,
                omega: self.drive_omega,
                phi0: self.phi0,
            },
        };
        ModelParams {
            delta: self.delta,
            drive,
            modes: vec![ModeSpec {
                omega: self.omega,
                gamma: self.gamma,
                theta: self.coupling_angle,
            }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: InitialKind,
    /// |α| of the cat state.
    pub alpha: f64,
    /// arg α.
    pub alpha_phase: f64,
    /// Relative phase θ of the two cat components.
    pub theta: f64,
    pub fock_n: usize,
    pub fock_spin: SpinName,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            kind: InitialKind::Vacuum,
            alpha: 1.0,
            alpha_phase: 0.0,
            theta: FRAC_PI_2,
            fock_n: 0,
            fock_spin: SpinName::Up,
        }
    }
}

impl InitialSection {
    fn cat(&self) -> CatSpec {
        CatSpec {
            alpha: Complex64::from_polar(self.alpha, self.alpha_phase),
            theta: self.theta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    /// Defaults to −3ω/v (linear) or −2π/Ω (sinusoidal).
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub dt: f64,
    pub reg_epsilon: f64,
    pub record_stride: usize,
    pub n_report: usize,
    pub norm_guard: f64,
    pub max_bisections: u32,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            t0: None,
            t1: None,
            dt: 0.02,
            reg_epsilon: DEFAULT_REG_EPSILON,
            record_stride: 10,
            n_report: 8,
            norm_guard: DEFAULT_NORM_GUARD,
            max_bisections: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterSection {
    pub amplitude: f64,
    pub displacement: f64,
    pub complex: bool,
}

impl Default for JitterSection {
    fn default() -> Self {
        let j = JitterSpec::default();
        JitterSection {
            amplitude: j.amplitude,
            displacement: j.displacement,
            complex: j.complex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdSection {
    pub n_trunc: usize,
    /// Defaults to the integrator step so records line up.
    pub dt: Option<f64>,
}

impl Default for EdSection {
    fn default() -> Self {
        EdSection { n_trunc: 40, dt: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Defaults to the integrator range.
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub n_points: usize,
    pub n_trunc: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            t0: None,
            t1: None,
            n_points: 1201,
            n_trunc: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Explicit θ grid; defaults to n_theta equally spaced points on [0, 2π).
    pub thetas: Option<Vec<f64>>,
    pub n_theta: usize,
    pub alpha2: Vec<f64>,
    /// Keep every sweep trajectory under `runs/`.
    pub keep_trajectories: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            thetas: None,
            n_theta: 16,
            alpha2: vec![1.0],
            keep_trajectories: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// A `sweep.csv` written by sweep-theta.
    pub input: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub multiplicities: Vec<usize>,
    pub ed: bool,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        ConvergenceSection {
            multiplicities: vec![6, 8, 10],
            ed: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapPeriodSection {
    pub n_min: usize,
    pub n_max: usize,
    pub smoothing: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub rel_prominence: f64,
    pub t_gap: f64,
}

impl Default for GapPeriodSection {
    fn default() -> Self {
        let p = PeriodProbe::default();
        GapPeriodSection {
            n_min: 1,
            n_max: 6,
            smoothing: p.smoothing,
            t_lo: p.t_lo,
            t_hi: p.t_hi,
            rel_prominence: p.rel_prominence,
            t_gap: p.t_gap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// `simulate` also runs the exact propagator and writes `ed_trajectory.csv`.
    pub ed_overlay: bool,
    /// `simulate` also writes the final variational state.
    pub final_state: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            ed_overlay: false,
            final_state: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Number of ansatz branches; defaults to 6 (vacuum), 8 (cat, linear
    /// drive) or 10 (cat, sinusoidal drive).
    pub multiplicity: Option<usize>,
    pub seed: u64,
    pub model: ModelSection,
    pub initial: InitialSection,
    pub integrator: IntegratorSection,
    pub jitter: JitterSection,
    pub ed: EdSection,
    pub spectrum: SpectrumSection,
    pub sweep: SweepSection,
    pub fit: FitSection,
    pub convergence: ConvergenceSection,
    pub gap_period: GapPeriodSection,
    pub outputs: OutputSection,
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// Fills every defaulted value and validates the result.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let mut c = self.clone();
        let params = c.model.params();
        params.validate()?;
        let (t0, t1) = default_range(&params.drive, c.model.omega);
        c.integrator.t0.get_or_insert(t0);
        c.integrator.t1.get_or_insert(t1);
        c.multiplicity.get_or_insert(match (c.initial.kind, c.model.drive) {
            (InitialKind::Vacuum, _) | (InitialKind::Fock, _) => 6,
            (InitialKind::Cat, DriveKind::Linear) => 8,
            (InitialKind::Cat, DriveKind::Sinusoidal) => 10,
        });
        c.ed.dt.get_or_insert(c.integrator.dt);
        c.spectrum.t0.get_or_insert(c.integrator.t0.unwrap_or(t0));
        c.spectrum.t1.get_or_insert(c.integrator.t1.unwrap_or(t1));
        if c.sweep.thetas.is_none() {
            let n = c.sweep.n_theta;
            c.sweep.thetas = Some((0..n).map(|k| TAU * k as f64 / n as f64).collect());
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.integrator_config()?.validate()?;
        let m = self.multiplicity.unwrap_or(0);
        if m == 0 {
            return bad("multiplicity must be >= 1".into());
        }
        if self.initial.kind == InitialKind::Cat {
            if m < 2 || m % 2 == 1 {
                return bad(format!("cat initial states need an even multiplicity >= 2, got {m}"));
            }
            if !(self.initial.alpha > 0.0 && self.initial.alpha.is_finite()) {
                return bad("initial.alpha must be > 0".into());
            }
            let n2 = self.initial.cat().normalization_sq();
            if n2 < 1e-12 {
                return Err(Error::DegenerateNormalization(n2));
            }
        }
        if !(self.jitter.amplitude >= 0.0 && self.jitter.displacement >= 0.0) {
            return bad("jitter magnitudes must be >= 0".into());
        }
        if !(self.ed.dt.unwrap_or(0.0) > 0.0) {
            return bad("ed.dt must be > 0".into());
        }
        if self.initial.kind == InitialKind::Fock && self.initial.fock_n > self.ed.n_trunc {
            return bad(format!("initial.fock_n = {} exceeds ed.n_trunc = {}", self.initial.fock_n, self.ed.n_trunc));
        }
        let (s0, s1) = (self.spectrum.t0.unwrap_or(0.0), self.spectrum.t1.unwrap_or(0.0));
        if !(s1 > s0) || self.spectrum.n_points < 3 {
            return bad("spectrum needs t1 > t0 and at least 3 points".into());
        }
        if self.sweep.n_theta == 0 || self.sweep.alpha2.is_empty() || self.sweep.alpha2.iter().any(|&a| !(a > 0.0)) {
            return bad("sweep needs n_theta >= 1 and positive alpha2 values".into());
        }
        if self.convergence.multiplicities.is_empty() || self.convergence.multiplicities.contains(&0) {
            return bad("convergence.multiplicities must be non-empty and >= 1".into());
        }
        let g = &self.gap_period;
        if g.n_min == 0 || g.n_max < g.n_min || !(g.t_hi > g.t_lo) || !(g.smoothing > 0.0) {
            return bad("gap_period needs 1 <= n_min <= n_max, t_hi > t_lo and smoothing > 0".into());
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        self.model.params()
    }

    pub fn jitter(&self) -> JitterSpec {
        JitterSpec {
            amplitude: self.jitter.amplitude,
            displacement: self.jitter.displacement,
            complex: self.jitter.complex,
        }
    }

    pub fn integrator_config(&self) -> Result<IntegratorConfig> {
        let i = &self.integrator;
        let (t0, t1) = match (i.t0, i.t1) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Config("integrator range not resolved".into())),
        };
        Ok(IntegratorConfig {
            t0,
            t1,
            dt: i.dt,
            reg_epsilon: i.reg_epsilon,
            record_stride: i.record_stride,
            n_report: i.n_report,
            norm_guard: i.norm_guard,
            max_bisections: i.max_bisections,
        })
    }

    pub fn ed_config(&self) -> Result<EdConfig> {
        let ic = self.integrator_config()?;
        Ok(EdConfig {
            t0: ic.t0,
            t1: ic.t1,
            dt: self.ed.dt.unwrap_or(ic.dt),
            record_stride: ic.record_stride,
            n_report: ic.n_report,
        })
    }

    /// Initial multi-D₂ state with the configured multiplicity.
    pub fn initial_state(&self) -> Result<MultiD2State> {
        self.initial_state_with(self.multiplicity.unwrap_or(6))
    }

    pub fn initial_state_with(&self, multiplicity: usize) -> Result<MultiD2State> {
        match self.initial.kind {
            InitialKind::Vacuum => init_vacuum(multiplicity, &self.jitter(), self.seed),
            InitialKind::Cat => init_cat(&self.initial.cat(), multiplicity, &self.jitter(), self.seed),
            InitialKind::Fock => Err(Error::Config("Fock initial states are only available to the exact propagator".into())),
        }
    }

    /// Initial vector in the truncated Fock basis.
    pub fn initial_vector(&self) -> Result<Vec<Complex64>> {
        let n = self.ed.n_trunc;
        match self.initial.kind {
            InitialKind::Vacuum => basis_vector(FockLabel::new(0, Spin::Up), n),
            InitialKind::Cat => cat_fock_vector(self.initial.cat().alpha, self.initial.theta, n),
            InitialKind::Fock => basis_vector(FockLabel::new(self.initial.fock_n, self.initial.fock_spin.into()), n),
        }
    }

    fn require_variational(&self) -> Result<()> {
        if self.initial.kind == InitialKind::Fock {
            return Err(Error::Config("this pipeline needs a vacuum or cat initial state".into()));
        }
        Ok(())
    }

    fn linear_speed(&self) -> Result<f64> {
        match self.params().drive {
            DriveProtocol::Linear { v } => Ok(v),
            DriveProtocol::Sinusoidal { .. } => Err(Error::Config("this pipeline needs model.drive = \"linear\"".into())),
        }
    }
}

/// Default run window: three crossing times each side for a linear sweep,
/// one full drive period each side for a sinusoid.
fn default_range(drive: &DriveProtocol, omega: f64) -> (f64, f64) {
    match *drive {
        DriveProtocol::Linear { v } => {
            let t = (3.0 * omega / v).max(20.0);
            (-t, t)
        }
        DriveProtocol::Sinusoidal { omega: w, .. } => (-TAU / w, TAU / w),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Spectrum,
    SweepTheta,
    Fit,
    OracleCompare,
    Convergence,
    GapPeriod,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Spectrum,
        Command::SweepTheta,
        Command::Fit,
        Command::OracleCompare,
        Command::Convergence,
        Command::GapPeriod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Spectrum => "spectrum",
            Command::SweepTheta => "sweep-theta",
            Command::Fit => "fit",
            Command::OracleCompare => "oracle-compare",
            Command::Convergence => "convergence",
            Command::GapPeriod => "gap-period",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

/// Command-line level overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
}

#[derive(Debug)]
pub enum RunError {
    /// Bad configuration; nothing was written.
    Config(Error),
    /// A trajectory produced non-finite numbers; partial outputs were kept.
    Numerical(Error),
    /// Writing outputs failed.
    Output(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Output(_) => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Numerical(e) => write!(f, "numerical abort: {e}"),
            RunError::Output(e) => write!(f, "output error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

fn out_err(e: impl Into<Error>) -> RunError {
    RunError::Output(e.into())
}

/// What a finished pipeline produced.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary: toml::Table,
}

/// Applies CLI overrides and resolves defaults; any failure is a config error.
pub fn prepare(config: &ScenarioConfig, opts: &RunOptions) -> std::result::Result<ScenarioConfig, RunError> {
    let mut c = config.clone();
    if let Some(s) = opts.seed {
        c.seed = s;
    }
    if let Some(dt) = opts.dt {
        c.integrator.dt = dt;
        c.ed.dt = None;
    }
    let c = c.resolve().map_err(RunError::Config)?;
    preflight(&c).map_err(RunError::Config)?;
    Ok(c)
}

/// Checks that need more than field ranges (e.g. building the initial state).
fn preflight(c: &ScenarioConfig) -> Result<()> {
    c.initial_vector()?;
    if c.initial.kind != InitialKind::Fock {
        c.initial_state()?;
    }
    Ok(())
}

fn command_checks(cmd: Command, c: &ScenarioConfig) -> Result<()> {
    match cmd {
        Command::Simulate | Command::Spectrum => Ok(()),
        Command::SweepTheta => {
            c.require_variational()?;
            let v = c.linear_speed()?;
            let t1 = c.integrator.t1.unwrap_or(0.0);
            let w = second_plateau_window(c.model.omega, v, t1);
            if !(w.1 > w.0) {
                return Err(Error::Config(format!("integrator.t1 = {t1} leaves no second plateau (starts at {})", w.0)));
            }
            if c.initial.kind != InitialKind::Cat {
                return Err(Error::Config("sweep-theta needs initial.kind = \"cat\"".into()));
            }
            Ok(())
        }
        Command::Fit => match &c.fit.input {
            Some(p) if p.is_file() => Ok(()),
            Some(p) => Err(Error::Config(format!("fit.input {} is not a readable file", p.display()))),
            None => Err(Error::Config("fit needs fit.input".into())),
        },
        Command::OracleCompare | Command::Convergence => c.require_variational(),
        Command::GapPeriod => {
            c.require_variational()?;
            if c.integrator.n_report < c.gap_period.n_max {
                return Err(Error::Config("integrator.n_report must be >= gap_period.n_max".into()));
            }
            Ok(())
        }
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                warn!("could not build a {n}-thread pool ({e}); using the global pool");
                f()
            }
        },
        _ => f(),
    }
}

/// Runs one pipeline into `opts.out_dir`.
pub fn run_scenario(cmd: Command, config: &ScenarioConfig, opts: &RunOptions) -> std::result::Result<RunReport, RunError> {
    let c = prepare(config, opts)?;
    command_checks(cmd, &c).map_err(RunError::Config)?;
    fs::create_dir_all(&opts.out_dir).map_err(out_err)?;
    with_pool(opts.jobs, || execute(cmd, &c, &opts.out_dir))
}

fn execute(cmd: Command, c: &ScenarioConfig, dir: &Path) -> std::result::Result<RunReport, RunError> {
    let mut rep = RunReport::default();
    let outcome = match cmd {
        Command::Simulate => simulate(c, dir, &mut rep),
        Command::Spectrum => spectrum(c, dir, &mut rep),
        Command::SweepTheta => sweep_theta(c, dir, &mut rep),
        Command::Fit => fit(c, dir, &mut rep),
        Command::OracleCompare => oracle_compare(c, dir, &mut rep),
        Command::Convergence => convergence(c, dir, &mut rep),
        Command::GapPeriod => gap_period(c, dir, &mut rep),
    };
    let status = match &outcome {
        Ok(()) => "ok",
        Err(RunError::Numerical(_)) => "aborted",
        Err(_) => "failed",
    };
    if let Err(RunError::Numerical(e)) = &outcome {
        rep.summary.insert("abort_reason".into(), e.to_string().into());
    }
    write_manifest(dir, cmd, status, c, &mut rep).map_err(out_err)?;
    outcome.map(|()| rep)
}

fn write_manifest(dir: &Path, cmd: Command, status: &str, c: &ScenarioConfig, rep: &mut RunReport) -> Result<()> {
    let mut root = toml::Table::new();
    root.insert("command".into(), cmd.name().into());
    root.insert("status".into(), status.into());
    root.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    root.insert("summary".into(), toml::Value::Table(rep.summary.clone()));
    root.insert("config".into(), toml::Value::try_from(c).map_err(|e| Error::Config(e.to_string()))?);
    let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text)?;
    rep.files.push(path);
    Ok(())
}

fn create(path: &Path, rep: &mut RunReport) -> Result<BufWriter<File>> {
    rep.files.push(path.to_path_buf());
    Ok(BufWriter::new(File::create(path)?))
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>], rep: &mut RunReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path, rep)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the variational integrator; on abort the partial trajectory is
/// written to `name` before the error is reported.
fn run_d2(c: &ScenarioConfig, init: &MultiD2State, dir: Option<(&Path, &str)>, rep: &mut RunReport) -> std::result::Result<Trajectory, RunError> {
    let cfg = c.integrator_config().map_err(RunError::Config)?;
    let params = c.params();
    match integrate(init, &params, &cfg) {
        Ok(tr) => {
            if let Some((d, name)) = dir {
                write_trajectory_csv(&tr.records, create(&d.join(name), rep).map_err(out_err)?).map_err(out_err)?;
            }
            Ok(tr)
        }
        Err(ab) => {
            if let Some((d, name)) = dir {
                write_trajectory_csv(&ab.partial.records, create(&d.join(name), rep).map_err(out_err)?).map_err(out_err)?;
            }
            Err(RunError::Numerical(ab.error))
        }
    }
}

fn run_ed(c: &ScenarioConfig, rep: &mut RunReport) -> std::result::Result<Vec<TrajectoryRecord>, RunError> {
    let ed = ed_evolve(&c.params(), &c.initial_vector().map_err(RunError::Config)?, &c.ed_config().map_err(RunError::Config)?)
        .map_err(RunError::Numerical)?;
    if ed.truncation_suspect() {
        warn!("exact propagation leaks {:.2e} into the top photon levels; raise ed.n_trunc", ed.max_leak);
    }
    rep.summary.insert("ed_max_leak".into(), ed.max_leak.into());
    Ok(ed.records)
}

fn norm_drift(records: &[TrajectoryRecord]) -> f64 {
    let n0 = records.first().map_or(1.0, |r| r.norm2);
    records.iter().map(|r| (r.norm2 - n0).abs()).fold(0.0, f64::max)
}

fn simulate(c: &ScenarioConfig, dir: &Path, rep: &mut RunReport) -> std::result::Result<(), RunError> {
    if c.initial.kind == InitialKind::Fock {
        rep.summary.insert("engine".into(), "exact".into());
        let recs = run_ed(c, rep)?;
        write_trajectory_csv(&recs, create(&dir.join("trajectory.csv"), rep).map_err(out_err)?).map_err(out_err)?;
        if let Some(last) = recs.last() {
            rep.summary.insert("final_p_lz".into(), last.p_lz.into());
        }
        return Ok(());
    }
    rep.summary.insert("engine".into(), "multi-d2".into());
    let init = c.initial_state().map_err(RunError::Config)?;
    let tr = run_d2(c, &init, Some((dir, "trajectory.csv")), rep)?;
    info!("simulate: {} records, {} step splits", tr.records.len(), tr.splits);
    if let Some(last) = tr.records.last() {
        rep.summary.insert("final_p_lz".into(), last.p_lz.into());
    }
    rep.summary.insert("max_norm_drift".into(), norm_drift(&tr.records).into());
    rep.summary.insert("step_splits".into(), (tr.splits as i64).into());
    if c.outputs.final_state {
        let path = dir.join("final_state.txt");
        fs::write(&path, tr.final_state.to_snapshot(tr.final_t)).map_err(out_err)?;
        rep.files.push(path);
    }
    if c.outputs.ed_overlay {
        let recs = run_ed(c, rep)?;
        write_trajectory_csv(&recs, create(&dir.join("ed_trajectory.csv"), rep).map_err(out_err)?).map_err(out_err)?;
    }
    Ok(())
}

fn spectrum(c: &ScenarioConfig, dir: &Path, rep: &mut RunReport) -> std::result::Result<(), RunError> {
    let (t0, t1) = (c.spectrum.t0.unwrap_or(0.0), c.spectrum.t1.unwrap_or(0.0));
    let n = c.spectrum.n_points;
    let grid: Vec<f64> = (0..n).map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64).collect();
    let spec = adiabatic_levels(&c.params(), &grid, c.spectrum.n_trunc).map_err(RunError::Config)?;
    write_levels_csv(&spec, create(&dir.join("levels.csv"), rep).map_err(out_err)?).map_err(out_err)?;
    let crossings = find_avoided_crossings(&spec).map_err(RunError::Numerical)?;
    write_crossings_csv(&crossings, create(&dir.join("crossings.csv"), rep).map_err(out_err)?).map_err(out_err)?;
    rep.summary.insert("n_crossings".into(), (crossings.len() as i64).into());
    Ok(())
}

/// One θ-sweep row: (α², θ, first plateau, second plateau, RWA prediction).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub alpha2: f64,
    pub theta: f64,
    pub first: f64,
    pub first_spread: f64,
    pub second: f64,
    pub second_spread: f64,
    pub rwa: f64,
}

const SWEEP_HEADER: [&str; 7] = ["alpha2", "theta", "p_first", "p_first_spread", "p_second", "p_second_spread", "p_rwa"];

fn sweep_theta(c: &ScenarioConfig, dir: &Path, rep: &mut RunReport) -> std::result::Result<(), RunError> {
    let v = c.linear_speed().map_err(RunError::Config)?;
    let omega = c.model.omega;
    let t1 = c.integrator.t1.unwrap_or(0.0);
    let thetas = c.sweep.thetas.clone().unwrap_or_default();
    let jobs: Vec<(f64, f64)> = c.sweep.alpha2.iter().flat_map(|&a2| thetas.iter().map(move |&th| (a2, th))).collect();
    let results: Vec<(usize, std::result::Result<Trajectory, Error>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(a2, th))| {
            let mut ck = c.clone();
            ck.initial.alpha = a2.sqrt();
            ck.initial.theta = th;
            let run = ck
                .initial_state()
                .and_then(|init| integrate(&init, &ck.params(), &ck.integrator_config()?).map_err(|ab| ab.error));
            (k, run)
        })
        .collect();
    let mut rows = Vec::new();
    let mut first_abort = None;
    if c.sweep.keep_trajectories {
        fs::create_dir_all(dir.join("runs")).map_err(out_err)?;
    }
    for (k, run) in results {
        let (a2, th) = jobs[k];
        let rwa = rwa_final_probability(a2.sqrt(), th, c.model.gamma, v).unwrap_or(f64::NAN);
        let row = match run {
            Ok(tr) => {
                if c.sweep.keep_trajectories {
                    let name = format!("runs/trajectory_{k:03}.csv");
                    write_trajectory_csv(&tr.records, create(&dir.join(name), rep).map_err(out_err)?).map_err(out_err)?;
                }
                let s = series(&tr.records, |r| r.p_lz);
                let p1 = plateau_average(&s, first_plateau_window(omega, v)).map_err(RunError::Numerical)?;
                let p2 = plateau_average(&s, second_plateau_window(omega, v, t1)).map_err(RunError::Numerical)?;
                SweepRow { alpha2: a2, theta: th, first: p1.mean, first_spread: p1.spread, second: p2.mean, second_spread: p2.spread, rwa }
            }
            Err(e) => {
                warn!("sweep run alpha2={a2} theta={th} aborted: {e}");
                first_abort.get_or_insert(e);
                SweepRow { alpha2: a2, theta: th, first: f64::NAN, first_spread: f64::NAN, second: f64::NAN, second_spread: f64::NAN, rwa }
            }
        };
        rows.push(row);
    }
    write_sweep(&dir.join("sweep.csv"), &rows, rep).map_err(out_err)?;
    write_fits(&dir.join("fit.csv"), &rows, rep).map_err(out_err)?;
    match first_abort {
        Some(e) => Err(RunError::Numerical(e)),
        None => Ok(()),
    }
}

fn write_sweep(path: &Path, rows: &[SweepRow], rep: &mut RunReport) -> Result<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| [r.alpha2, r.theta, r.first, r.first_spread, r.second, r.second_spread, r.rwa].iter().map(|&x| fmt_f(x)).collect())
        .collect();
    write_table(path, &SWEEP_HEADER, &table, rep)
}

/// Parses a table written by sweep-theta.
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_HEADER {
        return Err(Error::Config(format!("{} is not a sweep table (header {header:?})", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        rows.push(SweepRow { alpha2: x[0], theta: x[1], first: x[2], first_spread: x[3], second: x[4], second_spread: x[5], rwa: x[6] });
    }
    Ok(rows)
}

/// Fits of both plateaus for every α² present in `rows`, in order of first appearance.
pub fn fit_sweep(rows: &[SweepRow]) -> Vec<(f64, &'static str, Option<FitResult>)> {
    let mut alphas: Vec<f64> = Vec::new();
    for r in rows {
        if !alphas.contains(&r.alpha2) {
            alphas.push(r.alpha2);
        }
    }
    let mut out = Vec::new();
    for a2 in alphas {
        for (name, pick) in [("first", (|r: &SweepRow| r.first) as fn(&SweepRow) -> f64), ("second", |r: &SweepRow| r.second)] {
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.alpha2 == a2 && pick(r).is_finite()).map(|r| (r.theta, pick(r))).collect();
            let fit = fit_theta_curve(&pts, a2).map_err(|e| warn!("fit alpha2={a2} {name}: {e}")).ok();
            out.push((a2, name, fit));
        }
    }
    out
}

fn write_fits(path: &Path, rows: &[SweepRow], rep: &mut RunReport) -> Result<()> {
    let table: Vec<Vec<String>> = fit_sweep(rows)
        .into_iter()
        .map(|(a2, name, fit)| {
            let (f0, f1, res) = fit.map_or((f64::NAN, f64::NAN, f64::NAN), |f| (f.f0, f.f1, f.residual));
            vec![fmt_f(a2), name.to_string(), fmt_f(f0), fmt_f(f1), fmt_f(res)]
        })
        .collect();
    write_table(path, &["alpha2", "plateau", "f0", "f1", "residual"], &table, rep)
}

fn fit(c: &ScenarioConfig, dir: &Path, rep: &mut RunReport) -> std::result::Result<(), RunError> {
    let input = c.fit.input.as_deref().ok_or_else(|| RunError::Config(Error::Config("fit needs fit.input".into())))?;
    let rows = read_sweep(input).map_err(RunError::Config)?;
    write_fits(&dir.join("fit.csv"), &rows, rep).map_err(out_err)
}

fn oracle_compare(c: &ScenarioConfig, dir: &Path, rep: &mut RunReport) -> std::result::Result<(), RunError> {
    let init = c.initial_state().map_err(RunError::Config)?;
    let d2 = run_d2(c, &init, Some((dir, "trajectory.csv")), rep);
    let ed = run_ed(c, rep)?;
    let d2 = d2?;
    let mut rows = Vec::new();
    let mut max_diff: f64 = 0.0;
    for (a, b) in d2.records.iter().zip(&ed) {
        let diff = (a.p_lz - b.p_lz).abs();
        max_diff = max_diff.max(diff);
        rows.push(vec![fmt_f(a.t), fmt_f(a.p_lz), fmt_f(b.p_lz), fmt_f(diff), fmt_f(a.norm2), fmt_f(a.energy), fmt_f(b.energy)]);
    }
    write_table(&dir.join("compare.csv"), &["t", "p_lz_d2", "p_lz_ed", "abs_diff", "norm2_d2", "energy_d2", "energy_ed"], &rows, rep).map_err(out_err)?;
    rep.summary.insert("max_abs_diff".into(), max_diff.into());
    rep.summary.insert("max_norm_drift".into(), norm_drift(&d2.records).into());
    Ok(())
}

fn convergence(c: &ScenarioConfig, dir: &Path, rep: &mut RunReport) -> std::result::Result<(), RunError> {
    let ms = c.convergence.multiplicities.clone();
    let runs: Vec<std::result::Result<Trajectory, Error>> = ms
        .par_iter()
        .map(|&m| {
            let init = c.initial_state_with(m)?;
            integrate(&init, &c.params(), &c.integrator_config()?).map_err(|ab| ab.error)
        })
        .collect();
    let mut trs = Vec::new();
    for r in runs {
        trs.push(r.map_err(RunError::Numerical)?);
    }
    let ed = if c.convergence.ed { Some(run_ed(c, rep)?) } else { None };
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(ms.iter().map(|m| format!("p_lz_m{m}")));
    if ed.is_some() {
        header.push("p_lz_ed".into());
    }
    let n = trs.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let mut row = vec![fmt_f(trs[0].records[k].t)];
        row.extend(trs.iter().map(|t| fmt_f(t.records[k].p_lz)));
        if let Some(e) = &ed {
            row.push(fmt_f(e.get(k).map_or(f64::NAN, |r| r.p_lz)));
        }
        rows.push(row);
    }
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&dir.join("convergence.csv"), &header_ref, &rows, rep).map_err(out_err)?;
    // sup-norm distances against the largest multiplicity and the exact result
    let reference = trs.iter().zip(&ms).max_by_key(|(_, &m)| m).map(|(t, _)| t);
    let sup = |a: &[TrajectoryRecord], b: &[TrajectoryRecord]| a.iter().zip(b).map(|(x, y)| (x.p_lz - y.p_lz).abs()).fold(0.0, f64::max);
    let mut summary = Vec::new();
    for (tr, m) in trs.iter().zip(&ms) {
        let vs_ref = reference.map_or(f64::NAN, |r| sup(&tr.records, &r.records));
        let vs_ed = ed.as_ref().map_or(f64::NAN, |e| sup(&tr.records, e));
        summary.push(vec![m.to_string(), fmt_f(vs_ref), fmt_f(vs_ed), fmt_f(norm_drift(&tr.records))]);
    }
    write_table(&dir.join("convergence_summary.csv"), &["multiplicity", "sup_diff_vs_largest", "sup_diff_vs_ed", "max_norm_drift"], &summary, rep)
        .map_err(out_err)?;
    Ok(())
}

fn gap_period(c: &ScenarioConfig, dir: &Path, rep: &mut RunReport) -> std::result::Result<(), RunError> {
    let init = c.initial_state().map_err(RunError::Config)?;
    let tr = run_d2(c, &init, Some((dir, "trajectory.csv")), rep)?;
    let g = &c.gap_period;
    let probe = PeriodProbe {
        smoothing: g.smoothing,
        t_lo: g.t_lo,
        t_hi: g.t_hi,
        rel_prominence: g.rel_prominence,
        t_gap: g.t_gap,
        n_trunc: c.ed.n_trunc,
    };
    let ns: Vec<usize> = (g.n_min..=g.n_max).collect();
    let pts = gap_period_points(&c.params(), &tr.records, &ns, &probe).map_err(RunError::Numerical)?;
    let rows: Vec<Vec<String>> = pts.iter().map(|p| vec![p.n.to_string(), fmt_f(p.gap), fmt_f(1.0 / p.gap), fmt_f(p.period)]).collect();
    write_table(&dir.join("gap_period.csv"), &["n", "gap", "inv_gap", "period"], &rows, rep).map_err(out_err)?;
    match regress(&pts) {
        Ok(reg) => {
            write_table(&dir.join("regression.csv"), &["slope", "intercept", "r2"], &[vec![fmt_f(reg.slope), fmt_f(reg.intercept), fmt_f(reg.r2)]], rep)
                .map_err(out_err)?;
            rep.summary.insert("r2".into(), reg.r2.into());
        }
        Err(e) => warn!("gap/period regression skipped: {e}"),
    }
    Ok(())
}

/// Figure tags with bundled scenarios.
pub const FIGURE_TAGS: [&str; 10] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "figS1", "figS2"];

/// One sub-run of a figure.
#[derive(Clone, Debug)]
pub struct Panel {
    pub name: String,
    pub command: Command,
    pub config: ScenarioConfig,
}

fn panel(name: impl Into<String>, command: Command, config: &ScenarioConfig) -> Panel {
    Panel {
        name: name.into(),
        command,
        config: config.clone(),
    }
}

fn linear(v: f64, gamma: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.model.drive = DriveKind::Linear;
    c.model.v = v;
    c.model.gamma = gamma;
    c
}

fn cat(mut c: ScenarioConfig, alpha: f64, theta: f64) -> ScenarioConfig {
    c.initial.kind = InitialKind::Cat;
    c.initial.alpha = alpha;
    c.initial.theta = theta;
    c
}

fn sinusoid(amplitude: f64) -> ScenarioConfig {
    let mut c = cat(ScenarioConfig::default(), 1.0, FRAC_PI_2);
    c.model.drive = DriveKind::Sinusoidal;
    c.model.amplitude = amplitude;
    c.model.gamma = 0.05;
    c.integrator.n_report = 8;
    c
}

/// The bundled scenarios behind a figure tag.
pub fn figure_panels(tag: &str) -> Result<Vec<Panel>> {
    let mut out = Vec::new();
    match tag {
        "fig2" => {
            let mut c = linear(0.01, 0.12);
            c.multiplicity = Some(6);
            c.integrator.t0 = Some(-300.0);
            c.integrator.t1 = Some(300.0);
            out.push(panel("dynamics", Command::Simulate, &c));
            out.push(panel("levels", Command::Spectrum, &c));
        }
        "fig3" => {
            for (iv, v) in [1.0, 0.01, 0.0025].into_iter().enumerate() {
                for (ir, ratio) in [1.0, 0.25, 0.01].into_iter().enumerate() {
                    let c = cat(linear(v, (ratio * v).sqrt()), 1.0, FRAC_PI_2);
                    out.push(panel(format!("ratio{ir}_speed{iv}"), Command::Simulate, &c));
                }
            }
        }
        "fig4" => {
            let base = linear(0.01, 0.05);
            out.push(panel("vacuum", Command::Simulate, &base));
            for (name, th) in [("even", 0.0), ("yurke_stoler", FRAC_PI_2), ("odd", PI)] {
                out.push(panel(name, Command::Simulate, &cat(base.clone(), 1.0, th)));
            }
        }
        "fig5" => {
            let mut c = cat(linear(0.01, 0.05), 1.0, 0.0);
            c.sweep.alpha2 = vec![1.0, 0.1, 0.01];
            out.push(panel("sweep", Command::SweepTheta, &c));
        }
        "fig6" => {
            let c = sinusoid(0.7);
            out.push(panel("dynamics", Command::Simulate, &c));
            out.push(panel("levels", Command::Spectrum, &c));
        }
        "fig7" => {
            let c = sinusoid(1.1);
            out.push(panel("dynamics", Command::OracleCompare, &c));
            out.push(panel("levels", Command::Spectrum, &c));
        }
        "fig8" => {
            let c = sinusoid(1.3);
            out.push(panel("dynamics", Command::Simulate, &c));
            out.push(panel("levels", Command::Spectrum, &c));
        }
        "fig9" => {
            for a in 1..=4 {
                let mut c = sinusoid(1.3);
                c.initial.alpha = a as f64;
                out.push(panel(format!("alpha{a}"), Command::Simulate, &c));
            }
        }
        "figS1" => {
            let mut vac = linear(0.01, 0.12);
            vac.integrator.t0 = Some(-300.0);
            vac.integrator.t1 = Some(300.0);
            out.push(panel("vacuum", Command::Convergence, &vac));
            out.push(panel("yurke_stoler", Command::Convergence, &cat(vac, 1.0, FRAC_PI_2)).with_gamma(0.05));
        }
        "figS2" => out.push(panel("gap_period", Command::GapPeriod, &sinusoid(1.1))),
        _ => return Err(Error::Config(format!("unknown figure tag {tag:?}; expected one of {FIGURE_TAGS:?}"))),
    }
    Ok(out)
}

impl Panel {
    fn with_gamma(mut self, gamma: f64) -> Panel {
        self.config.model.gamma = gamma;
        self
    }
}

/// Runs every panel of a figure into `out_dir/<panel>/`.
pub fn run_figure(tag: &str, opts: &RunOptions) -> std::result::Result<RunReport, RunError> {
    let panels = figure_panels(tag).map_err(RunError::Config)?;
    // validate everything before the first file appears
    for p in &panels {
        let c = prepare(&p.config, opts)?;
        command_checks(p.command, &c).map_err(RunError::Config)?;
    }
    let mut rep = RunReport::default();
    for p in &panels {
        info!("{tag}: panel {} ({})", p.name, p.command);
        let sub = RunOptions {
            out_dir: opts.out_dir.join(&p.name),
            ..opts.clone()
        };
        let r = run_scenario(p.command, &p.config, &sub)?;
        rep.files.extend(r.files);
        rep.summary.insert(p.name.clone(), toml::Value::Table(r.summary));
    }
    Ok(rep)
}
