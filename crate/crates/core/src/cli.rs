//! Experiment configuration and orchestration behind the `socialpressure`
//! binary.
//!
//! A run is described by a TOML file (all sections optional, unknown keys
//! rejected) plus command-line overrides for the seed, output directory and
//! worker count. Every output file starts with
//! `# config_hash=<sha256 of the resolved config> seed=<seed>`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acceptance;
use crate::coupling;
use crate::finite_system::{self, InitialCondition, ModelParams, SimulateOptions};
use crate::invariant::{self, InvariantDensity};
use crate::limit_sde::{self, PicardConfig};
use crate::rates::RateFunction;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SimulateFinite,
    SolveLimit,
    CouplingError,
    Invariant,
    PhaseDiagram,
    Figure1,
    Figure2,
    Figure3,
    Selftest,
}

#[derive(Debug, Parser)]
#[command(name = "socialpressure", version, about = "Social pressure point processes: finite systems, mean-field limit, invariant laws")]
pub struct Args {
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub model: ModelSection,
    pub simulate: SimulateSection,
    pub picard: PicardSection,
    pub coupling: CouplingSection,
    pub invariant: InvariantSection,
    pub figure: FigureSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 1,
            out_dir: PathBuf::from("out"),
            workers: None,
            model: ModelSection::default(),
            simulate: SimulateSection::default(),
            picard: PicardSection::default(),
            coupling: CouplingSection::default(),
            invariant: InvariantSection::default(),
            figure: FigureSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `tanh-plus-one` or `exponential`.
    pub rate: String,
    pub h: f64,
    pub n: usize,
    pub horizon: f64,
    pub initial: InitialSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { rate: "tanh-plus-one".into(), h: 0.5, n: 1000, horizon: 15.0, initial: InitialSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum InitialSection {
    Constant { value: f64 },
    IidUniform { l: f64 },
    IidTwoPoint { l: f64 },
    Custom { values: Vec<f64> },
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection::Constant { value: 1.0 }
    }
}

impl From<&InitialSection> for InitialCondition {
    fn from(s: &InitialSection) -> Self {
        match s {
            InitialSection::Constant { value } => InitialCondition::Constant(*value),
            InitialSection::IidUniform { l } => InitialCondition::IidUniform { l: *l },
            InitialSection::IidTwoPoint { l } => InitialCondition::IidTwoPoint { l: *l },
            InitialSection::Custom { values } => InitialCondition::Custom(values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub replicas: u64,
    pub grid_intervals: usize,
    pub keep_pressures: bool,
    pub events: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { replicas: 1, grid_intervals: 300, keep_pressures: false, events: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub samples: usize,
    pub intervals: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub window: Option<f64>,
}

impl Default for PicardSection {
    fn default() -> Self {
        let d = PicardConfig::default();
        Self { samples: d.samples, intervals: d.intervals, tol: d.tol, max_iter: d.max_iter, window: d.window }
    }
}

impl From<&PicardSection> for PicardConfig {
    fn from(s: &PicardSection) -> Self {
        PicardConfig { samples: s.samples, intervals: s.intervals, tol: s.tol, max_iter: s.max_iter, window: s.window }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingSection {
    pub ns: Vec<usize>,
    pub replicas: usize,
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self { ns: vec![25, 50, 100, 200, 400, 800], replicas: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantSection {
    pub residual_tol: f64,
    pub h_grid: Vec<f64>,
    pub density_points: usize,
}

impl Default for InvariantSection {
    fn default() -> Self {
        Self { residual_tol: 1e-10, h_grid: (1..=40).map(|i| i as f64 / 10.0).collect(), density_points: 501 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureSection {
    pub n: usize,
    pub horizon: f64,
    pub grid_intervals: usize,
    pub replicas: u64,
}

impl Default for FigureSection {
    fn default() -> Self {
        Self { n: 1000, horizon: 15.0, grid_intervals: 300, replicas: 10 }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Check every field that parsing alone cannot.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("field `{field}`: {msg}")));
        if let Err(e) = RateFunction::from_name(&self.model.rate) {
            return bad("model.rate", e.to_string());
        }
        if !(self.model.h > 0.0 && self.model.h.is_finite()) {
            return bad("model.h", format!("must be positive, got {}", self.model.h));
        }
        if self.model.n == 0 {
            return bad("model.n", "must be at least 1".into());
        }
        if !(self.model.horizon >= 0.0 && self.model.horizon.is_finite()) {
            return bad("model.horizon", format!("must be non-negative, got {}", self.model.horizon));
        }
        if let Err(e) = InitialCondition::from(&self.model.initial).validate(None) {
            return bad("model.initial", e.to_string());
        }
        if self.simulate.replicas == 0 {
            return bad("simulate.replicas", "must be at least 1".into());
        }
        if self.picard.samples < 1000 {
            return bad("picard.samples", format!("must be at least 1000, got {}", self.picard.samples));
        }
        if matches!(self.picard.tol, Some(t) if !(t > 0.0)) {
            return bad("picard.tol", "must be positive".into());
        }
        if self.coupling.ns.len() < 2 || self.coupling.ns.iter().any(|&n| n < 10) {
            return bad("coupling.ns", "need at least two actor counts, each >= 10".into());
        }
        if !(self.invariant.residual_tol > 0.0) {
            return bad("invariant.residual_tol", "must be positive".into());
        }
        if self.invariant.h_grid.iter().any(|&h| !(h > 0.0)) {
            return bad("invariant.h_grid", "values must be positive".into());
        }
        if self.invariant.density_points < 2 {
            return bad("invariant.density_points", "must be at least 2".into());
        }
        if self.figure.n == 0 || !(self.figure.horizon > 0.0) || self.figure.replicas < 2 {
            return bad("figure", "need n >= 1, horizon > 0, replicas >= 2".into());
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration. Output directory and worker
    /// count do not affect results and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = None;
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn rate(&self) -> RateFunction {
        RateFunction::from_name(&self.model.rate).expect("validated")
    }

    fn params(&self) -> ModelParams {
        ModelParams {
            n: self.model.n,
            h: self.model.h,
            rate: self.rate(),
            horizon: self.model.horizon,
            seed: self.seed,
            initial: InitialCondition::from(&self.model.initial),
        }
    }
}

/// Load the config file (if any) and apply flag overrides.
pub fn resolve(args: &Args) -> Result<Config, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            Config::from_toml(&text)?
        }
        None => Config::default(),
    };
    if let Some(e) = cfg.experiment {
        if e != args.experiment {
            return Err(CliError::Config(format!(
                "field `experiment`: config is for {e:?} but {:?} was requested",
                args.experiment
            )));
        }
    }
    cfg.experiment = Some(args.experiment);
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Output<'a> {
    dir: &'a Path,
    header: String,
    written: Vec<PathBuf>,
}

impl<'a> Output<'a> {
    fn new(cfg: &'a Config) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out_dir)?;
        Ok(Self { dir: &cfg.out_dir, header: format!("config_hash={} seed={}", cfg.hash(), cfg.seed), written: Vec::new() })
    }

    fn file<F>(&mut self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>, &str) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        write(&mut w, &self.header)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }
}

/// Run the configured experiment; returns the files written.
pub fn run(cfg: &Config) -> Result<Vec<PathBuf>, CliError> {
    if let Some(w) = cfg.workers {
        // a global pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    let mut out = Output::new(cfg)?;
    match cfg.experiment.unwrap_or(Experiment::SimulateFinite) {
        Experiment::SimulateFinite => simulate_finite(cfg, &mut out)?,
        Experiment::SolveLimit => solve_limit(cfg, &mut out)?,
        Experiment::CouplingError => coupling_error(cfg, &mut out)?,
        Experiment::Invariant => invariant_report(cfg, &mut out)?,
        Experiment::PhaseDiagram => phase_diagram(cfg, &mut out)?,
        Experiment::Figure1 => figure(cfg, &mut out, RateFunction::tanh_plus_one(), &[0.5, 2.0])?,
        Experiment::Figure2 => figure(cfg, &mut out, RateFunction::tanh_plus_one(), &[1.0, 1.0])?,
        Experiment::Figure3 => figure(cfg, &mut out, RateFunction::exponential(), &[0.5, 2.0])?,
        Experiment::Selftest => selftest(&mut out)?,
    }
    Ok(out.written)
}

fn simulate_finite(cfg: &Config, out: &mut Output<'_>) -> Result<(), CliError> {
    let params = cfg.params();
    let opts = SimulateOptions {
        grid_intervals: cfg.simulate.grid_intervals,
        keep_pressures: cfg.simulate.keep_pressures,
        keep_events: cfg.simulate.events,
    };
    for r in 0..cfg.simulate.replicas {
        let traj = finite_system::simulate_replica(&params, r, opts).map_err(numerical)?;
        out.file(&format!("trajectory_r{r}.csv"), |w, hdr| traj.write_csv(w, Some(hdr)))?;
        if cfg.simulate.events {
            out.file(&format!("events_r{r}.csv"), |w, hdr| traj.write_events_csv(w, Some(hdr)))?;
        }
        if let Some(t) = traj.halted_at {
            out.file(&format!("halted_r{r}.txt"), |w, hdr| writeln!(w, "# {hdr}\nhalted_at={t}"))?;
        }
    }
    Ok(())
}

fn solve_limit(cfg: &Config, out: &mut Output<'_>) -> Result<(), CliError> {
    let rf = cfg.rate();
    let init = InitialCondition::from(&cfg.model.initial);
    let sol = limit_sde::picard_solve(&rf, cfg.model.h, &init, cfg.model.horizon, &(&cfg.picard).into(), cfg.seed)
        .map_err(numerical)?;
    out.file("drift.csv", |w, hdr| sol.curve.write_csv(w, Some(hdr)))?;
    out.file("picard_report.txt", |w, hdr| {
        writeln!(w, "# {hdr}")?;
        let c = &sol.contraction;
        writeln!(w, "truncation_radius={}", c.radius)?;
        writeln!(w, "lipschitz={}", c.lipschitz)?;
        writeln!(w, "growth={}", c.growth)?;
        writeln!(w, "t_star={}", c.t_star)?;
        writeln!(w, "c_t_star={}", c.c_at_t_star)?;
        writeln!(w, "max_abs_pressure={}", sol.max_abs)?;
        writeln!(w, "apriori_bound={}", sol.apriori_bound)?;
        for win in &sol.windows {
            let res: Vec<String> = win.residuals.iter().map(|r| format!("{r:e}")).collect();
            writeln!(w, "window=[{},{}] tol={:e} residuals={}", win.start, win.end, win.tol, res.join(" "))?;
        }
        Ok(())
    })
}

fn coupling_error(cfg: &Config, out: &mut Output<'_>) -> Result<(), CliError> {
    let rf = cfg.rate();
    let init = InitialCondition::from(&cfg.model.initial);
    let curve = coupling::strong_error_curve(
        &rf,
        cfg.model.h,
        &init,
        cfg.model.horizon,
        &cfg.coupling.ns,
        cfg.coupling.replicas,
        cfg.seed,
        &(&cfg.picard).into(),
    )
    .map_err(numerical)?;
    out.file("error_curve.csv", |w, hdr| curve.write_csv(w, Some(hdr)))?;
    out.file("drift.csv", |w, hdr| curve.drift.write_csv(w, Some(hdr)))?;
    let fit = coupling::fit_rate(&curve.rows).map_err(numerical)?;
    out.file("slope.txt", |w, hdr| {
        writeln!(w, "# {hdr}\nslope={}\nintercept={}\nr_squared={}", fit.slope, fit.intercept, fit.r_squared)
    })
}

fn invariant_report(cfg: &Config, out: &mut Output<'_>) -> Result<(), CliError> {
    let rf = cfg.rate();
    let h = cfg.model.h;
    let sol = invariant::solve_gamma(&rf, h, cfg.invariant.residual_tol).map_err(numerical)?;
    out.file("gamma.txt", |w, hdr| {
        writeln!(w, "# {hdr}")?;
        let roots: Vec<String> = sol.roots.iter().map(|g| g.to_string()).collect();
        writeln!(w, "h={h}\nroots={}", roots.join(" "))?;
        match sol.threshold {
            Some(t) => writeln!(w, "threshold={t}"),
            None => writeln!(w, "threshold=not-applicable"),
        }
    })?;
    let g = sol.gamma_star();
    if g > 0.0 {
        let d = InvariantDensity::new(&rf, h, g).map_err(numerical)?;
        let k = cfg.invariant.density_points;
        let xs: Vec<f64> = (0..k).map(|i| 10.0 * g * h * i as f64 / (k - 1) as f64).collect();
        out.file("density.csv", |w, hdr| d.write_csv(w, &xs, Some(hdr)))?;
    }
    Ok(())
}

fn phase_diagram(cfg: &Config, out: &mut Output<'_>) -> Result<(), CliError> {
    let rows = invariant::phase_diagram(&cfg.rate(), &cfg.invariant.h_grid, cfg.invariant.residual_tol).map_err(numerical)?;
    out.file("phase_diagram.csv", |w, hdr| invariant::write_phase_csv(&rows, w, Some(hdr)))
}

/// `replicas` runs at `hs[0]` split between `U_0 = 1` and `U_0 = -1`, and
/// `replicas` runs at `hs[1]` from `U_0 = 0`.
fn figure(cfg: &Config, out: &mut Output<'_>, rate: RateFunction, hs: &[f64; 2]) -> Result<(), CliError> {
    let f = &cfg.figure;
    let opts = SimulateOptions { grid_intervals: f.grid_intervals, keep_pressures: false, keep_events: false };
    let mut manifest = Vec::new();
    let half = f.replicas / 2;
    for (group, &h) in hs.iter().enumerate() {
        for r in 0..f.replicas {
            let u0 = match (group, r < half) {
                (0, true) => 1.0,
                (0, false) => -1.0,
                _ => 0.0,
            };
            let seed = crate::rng::key_hash(&[cfg.seed, group as u64, r]);
            let params =
                ModelParams { n: f.n, h, rate: rate.clone(), horizon: f.horizon, seed, initial: InitialCondition::Constant(u0) };
            let traj = finite_system::simulate_replica(&params, 0, opts).map_err(numerical)?;
            let name = format!("traj_g{group}_r{r}.csv");
            out.file(&name, |w, hdr| traj.write_csv(w, Some(hdr)))?;
            manifest.push((name, h, u0, r, seed, traj.halted_at));
        }
    }
    out.file("manifest.csv", |w, hdr| {
        writeln!(w, "# {hdr}")?;
        writeln!(w, "file,rate,h,u0,replica,seed,halted_at")?;
        for (name, h, u0, r, seed, halted) in &manifest {
            let halted = halted.map_or(String::new(), |t| t.to_string());
            writeln!(w, "{name},{},{h},{u0},{r},{seed},{halted}", rate.name())?;
        }
        Ok(())
    })
}

fn selftest(out: &mut Output<'_>) -> Result<(), CliError> {
    let mut lines = Vec::new();
    let mut failed = 0;
    for id in 1..=9 {
        let o = acceptance::run(id);
        println!("{o}");
        if !o.passed {
            failed += 1;
        }
        lines.push(o.to_string());
    }
    out.file("selftest.txt", |w, hdr| {
        writeln!(w, "# {hdr}")?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })?;
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} acceptance criteria failed")));
    }
    Ok(())
}
