//! Batch runs driven by a JSON [`RunConfig`]: energy construction, simulation,
//! decay verification and closed-form comparison.
//!
//! Every command writes its artifacts plus a `manifest.json` holding the fully
//! resolved configuration into the output directory. Exit codes: 0 pass,
//! 1 error, 2 pass with warnings.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::characteristics::{CharError, GNormalization, GProvider, SeedGrid, TabulateOptions};
use crate::energy::{energy_trace, verify_decay, EnergyError, VerifyOptions};
use crate::lagrangian::{affine_fit_residuals, Lagrangian, LagrangianError, LagrangianOptions};
use crate::models::{
    validate_spec, BuiltinModel, ModelDescriptor, ModelError, ProblemSpec, SampleBox,
};
use crate::solver::{simulate, Grid1D, Simulation, SolverControls, SolverError};

pub const KNOWN_MODELS: [&str; 6] = [
    "quasilinear_gradient",
    "rho_laplacian_poly",
    "mcf_poly",
    "inverse_mcf",
    "porous_medium",
    "filtration",
];

/// Error of one pipeline stage; the display names the failing module.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("models: {0}")]
    Models(#[from] ModelError),
    #[error("characteristics: {0}")]
    Characteristics(#[from] CharError),
    #[error("lagrangian: {0}")]
    Lagrangian(#[from] LagrangianError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("energy: {0}")]
    Energy(#[from] EnergyError),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMode {
    #[default]
    Analytic,
    Reduced,
    Tabulated,
}

/// `n` points spread evenly over `[lo, hi]`, or over `-[lo, hi]` and
/// `[lo, hi]` (sorted, `2n` points) when `mirrored`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    #[serde(default)]
    pub mirrored: bool,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self {
            lo,
            hi,
            n,
            mirrored: false,
        }
    }

    pub fn mirrored(lo: f64, hi: f64, n: usize) -> Self {
        Self {
            mirrored: true,
            ..Self::new(lo, hi, n)
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let base: Vec<f64> = if self.n <= 1 {
            vec![self.lo]
        } else {
            (0..self.n)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64)
                .collect()
        };
        if !self.mirrored {
            return base;
        }
        let mut out: Vec<f64> = base.iter().rev().map(|v| -v).collect();
        out.extend(base);
        out
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.n == 0 || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(CliError::Config(format!(
                "axis {name} needs n >= 1 and finite bounds"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_cells: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_cells: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeConfig {
    pub t_end: f64,
    pub output_stride: usize,
    pub output_interval: Option<f64>,
    pub cfl_safety: f64,
    pub dt_floor: f64,
    pub max_steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        let c = SolverControls::default();
        Self {
            t_end: 0.1,
            output_stride: c.output_stride,
            output_interval: None,
            cfl_safety: c.cfl_safety,
            dt_floor: c.dt_floor,
            max_steps: c.max_steps,
        }
    }
}

impl TimeConfig {
    pub fn controls(&self) -> SolverControls {
        SolverControls {
            cfl_safety: self.cfl_safety,
            dt_floor: self.dt_floor,
            output_stride: self.output_stride,
            output_interval: self.output_interval,
            max_steps: self.max_steps,
            ..SolverControls::default()
        }
    }
}

/// Named initial profiles on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude sin(pi x)`.
    Sine {
        amplitude: f64,
    },
    /// `sin(pi x) (base + amplitude sin(pi x))`.
    SineProduct {
        base: f64,
        amplitude: f64,
    },
    /// `left + (right - left) x + amplitude sin(pi x)`.
    LinearPlusSine {
        left: f64,
        right: f64,
        amplitude: f64,
    },
    /// `height max(0, 1 - width_coeff (x - 1/2)^2)`.
    Bump {
        height: f64,
        width_coeff: f64,
    },
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        let s = (std::f64::consts::PI * x).sin();
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value,
            Self::Sine { amplitude } => amplitude * s,
            Self::SineProduct { base, amplitude } => s * (base + amplitude * s),
            Self::LinearPlusSine {
                left,
                right,
                amplitude,
            } => left + (right - left) * x + amplitude * s,
            Self::Bump {
                height,
                width_coeff,
            } => height * (1.0 - width_coeff * (x - 0.5).powi(2)).max(0.0),
        }
    }
}

/// Either `{"csv": "path"}` with one value per node (last column of each
/// row, optional header) or a named [`Profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    Csv { csv: PathBuf },
    Profile(Profile),
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::Profile(Profile::Sine { amplitude: 1.0 })
    }
}

impl InitialCondition {
    pub fn sample(&self, grid: &Grid1D) -> Result<Vec<f64>> {
        match self {
            Self::Profile(p) => Ok(grid.sample(|x| p.eval(x))),
            Self::Csv { csv } => {
                let text = fs::read_to_string(csv).map_err(io_err(csv))?;
                let mut values = Vec::new();
                for (k, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let last = line.rsplit(',').next().unwrap_or("").trim();
                    match last.parse::<f64>() {
                        Ok(v) => values.push(v),
                        Err(_) if k == 0 => {}
                        Err(_) => {
                            return Err(CliError::Config(format!(
                                "{}: line {} is not numeric",
                                csv.display(),
                                k + 1
                            )))
                        }
                    }
                }
                if values.len() != grid.nodes() {
                    return Err(CliError::Config(format!(
                        "{}: {} values for {} grid nodes",
                        csv.display(),
                        values.len(),
                        grid.nodes()
                    )));
                }
                Ok(values)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabulationConfig {
    pub seeds: SeedGrid,
    pub g0: f64,
    pub options: TabulateOptions,
}

impl Default for TabulationConfig {
    fn default() -> Self {
        Self {
            seeds: SeedGrid::uniform((-1.0, 1.0), 9, (-1.5, 1.5), 9),
            g0: 0.0,
            options: TabulateOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyGridConfig {
    pub x: Axis,
    pub u: Axis,
    pub p: Axis,
}

impl Default for EnergyGridConfig {
    fn default() -> Self {
        Self {
            x: Axis::new(0.0, 1.0, 5),
            u: Axis::new(0.1, 1.0, 10),
            p: Axis::new(-2.0, 2.0, 20),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub x: f64,
    pub u: Axis,
    pub p: Axis,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            x: 0.5,
            u: Axis::new(0.05, 1.0, 40),
            p: Axis::mirrored(0.05, 2.0, 20),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub region: SampleBox,
    pub samples: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            region: SampleBox::default(),
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelDescriptor,
    #[serde(default)]
    pub g_mode: GMode,
    /// Anchor of `g`; defaults to the model's `p0` with `g0 = 0`.
    #[serde(default)]
    pub normalization: Option<GNormalization>,
    #[serde(default)]
    pub lagrangian: LagrangianOptions,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub initial_condition: InitialCondition,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tabulation: TabulationConfig,
    #[serde(default)]
    pub energy_grid: EnergyGridConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub verify: VerifyOptions,
    /// Monte-Carlo structure check run before the pipeline; skipped when absent.
    #[serde(default)]
    pub validation: Option<ValidationConfig>,
    /// Seed of the Monte-Carlo validator.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(model: BuiltinModel) -> Self {
        Self {
            model: ModelDescriptor {
                model,
                bc: [
                    crate::models::BcDescriptor::Dirichlet,
                    crate::models::BcDescriptor::Dirichlet,
                ],
            },
            g_mode: GMode::default(),
            normalization: None,
            lagrangian: LagrangianOptions::default(),
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            initial_condition: InitialCondition::default(),
            output_dir: None,
            tabulation: TabulationConfig::default(),
            energy_grid: EnergyGridConfig::default(),
            compare: CompareConfig::default(),
            verify: VerifyOptions::default(),
            validation: None,
            seed: 0,
        }
    }

    /// Parses JSON, reporting an unrecognised model name before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        match raw.pointer("/model/model") {
            Some(Value::String(name)) if !KNOWN_MODELS.contains(&name.as_str()) => {
                return Err(CliError::Config(format!("unknown model '{name}'")));
            }
            Some(Value::String(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "missing model name at model.model".to_string(),
                ))
            }
        }
        let cfg: Self = serde_json::from_value(raw).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    /// Range checks and existence of referenced files.
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.grid.n_cells < 8 {
            return bad("grid.n_cells must be at least 8");
        }
        let t = &self.time;
        if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
            return bad("time.t_end must be finite and non-negative");
        }
        if t.output_stride == 0 {
            return bad("time.output_stride must be positive");
        }
        if !(t.cfl_safety > 0.0 && t.cfl_safety <= 1.0) {
            return bad("time.cfl_safety must lie in (0, 1]");
        }
        if !(t.dt_floor > 0.0) {
            return bad("time.dt_floor must be positive");
        }
        if let Some(h) = t.output_interval {
            if !(h > 0.0) {
                return bad("time.output_interval must be positive");
            }
        }
        if !(self.lagrangian.quad_tol > 0.0) {
            return bad("lagrangian.quad_tol must be positive");
        }
        if let InitialCondition::Csv { csv } = &self.initial_condition {
            if !csv.is_file() {
                return Err(CliError::Config(format!(
                    "initial condition file {} does not exist",
                    csv.display()
                )));
            }
        }
        for (name, axis) in [
            ("energy_grid.x", self.energy_grid.x),
            ("energy_grid.u", self.energy_grid.u),
            ("energy_grid.p", self.energy_grid.p),
            ("compare.u", self.compare.u),
            ("compare.p", self.compare.p),
        ] {
            axis.check(name)?;
        }
        if self.g_mode == GMode::Tabulated
            && (self.tabulation.seeds.u0.is_empty() || self.tabulation.seeds.p0.is_empty())
        {
            return bad("tabulation.seeds needs at least one u0 and one p0");
        }
        self.model.model.validate()?;
        Ok(())
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        Ok(self.model.instantiate()?)
    }
}

/// Result of a command that did not fail.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub notes: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    notes: Vec<String>,
    outputs: Vec<PathBuf>,
    warn: bool,
}

impl<'a> Run<'a> {
    fn start(cfg: &'a RunConfig, out: &'a Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        Ok(Self {
            cfg,
            out,
            notes: Vec::new(),
            outputs: Vec::new(),
            warn: false,
        })
    }

    fn warn(&mut self, note: String) {
        self.warn = true;
        self.notes.push(note);
    }

    fn create(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let f = File::create(&path).map_err(io_err(&path))?;
        self.outputs.push(PathBuf::from(rel));
        Ok(BufWriter::new(f))
    }

    fn write_with(
        &mut self,
        rel: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Result<()> {
        let path = self.out.join(rel);
        let mut w = self.create(rel)?;
        body(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
    }

    fn write_json(&mut self, rel: &str, value: &Value) -> Result<()> {
        self.write_with(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    fn validate(&mut self, spec: &ProblemSpec) -> Option<Value> {
        let v = self.cfg.validation?;
        let report = validate_spec(spec, &v.region, v.samples, self.cfg.seed);
        if !report.is_clean() {
            self.warn(format!(
                "models: validation found {} violations in {} samples",
                report.violations.len(),
                report.samples
            ));
        }
        serde_json::to_value(report).ok()
    }

    fn finish(mut self, command: &str, exit_code: Option<i32>, extra: Value) -> Result<Outcome> {
        let exit_code = exit_code.unwrap_or(if self.warn { 2 } else { 0 });
        let mut outputs: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        outputs.push("manifest.json".to_string());
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.cfg,
            "exit_code": exit_code,
            "notes": self.notes,
            "outputs": outputs,
            "details": extra,
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(Outcome {
            exit_code,
            notes: self.notes,
            outputs: self.outputs,
        })
    }
}

/// `g` provider selected by the configuration.
pub fn build_g(cfg: &RunConfig, spec: &ProblemSpec) -> Result<GProvider> {
    Ok(match cfg.g_mode {
        GMode::Analytic => GProvider::analytic(spec, cfg.normalization)?,
        GMode::Reduced => GProvider::reduced(spec, cfg.normalization)?,
        GMode::Tabulated => GProvider::tabulate(
            spec,
            &cfg.tabulation.seeds,
            cfg.tabulation.g0,
            &cfg.tabulation.options,
        )?,
    })
}

pub fn build_lagrangian(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Lagrangian> {
    let g = build_g(cfg, spec)?;
    Ok(Lagrangian::build(spec, g, &cfg.lagrangian)?)
}

fn note_coverage(run: &mut Run, lag: &Lagrangian) -> Value {
    match lag.g_provider().tabulated() {
        Some(t) => {
            if t.is_low_coverage() {
                run.warn(format!(
                    "characteristics: low coverage {:.3} of the query box",
                    t.coverage()
                ));
            }
            json!({
                "coverage": t.coverage(),
                "low_coverage": t.is_low_coverage(),
                "extrapolations": t.extrapolations(),
            })
        }
        None => Value::Null,
    }
}

/// Maximum affine-fit residual against the builtin closed form on the
/// comparison grid, if the model has one.
fn closed_form_residual(cfg: &RunConfig, lag: &Lagrangian) -> Result<Option<f64>> {
    let model = &cfg.model.model;
    let x = cfg.compare.x;
    if model.closed_form_lagrangian(x, 0.5, 1.0).is_none() {
        return Ok(None);
    }
    let rows = affine_fit_residuals(
        lag,
        |u, p| model.closed_form_lagrangian(x, u, p).unwrap_or(f64::NAN),
        x,
        &cfg.compare.u.points(),
        &cfg.compare.p.points(),
    )?;
    Ok(Some(
        rows.iter().fold(0.0f64, |m, r| m.max(r.residual.abs())),
    ))
}

/// Tabulates `L`, `L_p` and `L_pp` on the configured grid and writes
/// `energy_grid.csv` with its JSON sidecar.
pub fn cmd_construct_energy(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut run = Run::start(cfg, out)?;
    let spec = cfg.spec()?;
    let validation = run.validate(&spec);
    let lag = build_lagrangian(cfg, &spec)?;

    let g = &cfg.energy_grid;
    let points: Vec<(f64, f64, f64)> =
        g.x.points()
            .into_iter()
            .flat_map(|x| {
                let ps = g.p.points();
                g.u.points()
                    .into_iter()
                    .flat_map(move |u| ps.clone().into_iter().map(move |p| (x, u, p)))
            })
            .collect();
    let rows: Vec<[f64; 6]> = points
        .par_iter()
        .map(|&(x, u, p)| {
            Ok([
                x,
                u,
                p,
                lag.eval_l(x, u, p)?,
                lag.eval_lp(x, u, p)?,
                lag.eval_lpp(x, u, p),
            ])
        })
        .collect::<std::result::Result<_, LagrangianError>>()?;
    run.write_with("energy_grid.csv", |w| {
        writeln!(w, "x,u,p,L,L_p,L_pp")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{},{}", r[0], r[1], r[2], r[3], r[4], r[5])?;
        }
        Ok(())
    })?;

    if let Some(t) = lag.g_provider().tabulated() {
        for (k, traj) in t.trajectories().iter().enumerate() {
            run.write_with(&format!("trajectories/seed_{k}.csv"), |w| traj.write_csv(w))?;
        }
        let snap = serde_json::to_value(t.snapshot()).unwrap_or(Value::Null);
        run.write_json("g_snapshot.json", &snap)?;
    }

    let residual = closed_form_residual(cfg, &lag)?;
    let coverage = note_coverage(&mut run, &lag);
    let sidecar = json!({
        "meta": lag.meta(),
        "tabulation": coverage,
        "closed_form": residual.map(|r| json!({"x": cfg.compare.x, "max_residual": r})),
        "rows": rows.len(),
    });
    run.write_json("energy_grid.json", &sidecar)?;
    run.finish(
        "construct-energy",
        None,
        json!({"validation": validation, "sidecar": sidecar}),
    )
}

fn run_simulation(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Simulation> {
    let grid = Grid1D::new(cfg.grid.n_cells)?;
    let u0 = cfg.initial_condition.sample(&grid)?;
    Ok(simulate(
        spec,
        &grid,
        &u0,
        cfg.time.t_end,
        &cfg.time.controls(),
    )?)
}

fn write_trajectory(run: &mut Run, sim: &Simulation) -> Result<()> {
    let xs = sim.grid.xs();
    run.write_with("trajectory.csv", |w| {
        writeln!(w, "t,x,u,ut")?;
        for f in &sim.frames {
            for (i, x) in xs.iter().enumerate() {
                writeln!(w, "{},{},{},{}", f.t, x, f.u[i], f.ut[i])?;
            }
        }
        Ok(())
    })
}

fn simulation_summary(sim: &Simulation) -> Value {
    json!({
        "termination": sim.termination,
        "steps": sim.steps,
        "frames": sim.frames.len(),
        "dt_min": sim.dt_min,
        "dt_max": sim.dt_max,
        "t_final": sim.frames.last().map(|f| f.t),
    })
}

/// Runs the solver and writes `trajectory.csv` (`t,x,u,ut`).
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut run = Run::start(cfg, out)?;
    let spec = cfg.spec()?;
    let validation = run.validate(&spec);
    let sim = run_simulation(cfg, &spec)?;
    write_trajectory(&mut run, &sim)?;
    let summary = simulation_summary(&sim);
    run.finish(
        "simulate",
        None,
        json!({"validation": validation, "simulation": summary}),
    )
}

/// Simulates, evaluates the energy along the solution and checks its decay.
/// Exit code 0 iff no monotonicity violation was found, 1 otherwise.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut run = Run::start(cfg, out)?;
    let spec = cfg.spec()?;
    let validation = run.validate(&spec);
    let lag = build_lagrangian(cfg, &spec)?;
    let sim = run_simulation(cfg, &spec)?;
    let trace = energy_trace(&lag, &sim)?;
    let report = verify_decay(&trace, &cfg.verify);
    run.write_with("energy.csv", |w| trace.write_csv(w))?;
    run.write_json(
        "verify_report.json",
        &json!({
            "violations": report.violations,
            "summary": report.summary,
            "trace": trace,
        }),
    )?;
    let coverage = note_coverage(&mut run, &lag);
    let failed = report.has_monotonicity_violation();
    if failed {
        run.notes.push(format!(
            "energy: {} monotonicity violations",
            report.count(crate::energy::DecayViolationKind::Monotonicity)
                + report.count(crate::energy::DecayViolationKind::StandardMonotonicity)
        ));
    }
    run.finish(
        "verify",
        Some(i32::from(failed)),
        json!({
            "validation": validation,
            "simulation": simulation_summary(&sim),
            "lagrangian": lag.meta(),
            "tabulation": coverage,
            "summary": report.summary,
        }),
    )
}

/// Least-squares fit `d = c0 + c1 p + c2 log(1 + p^2)`; returns `c2`.
fn log_coefficient(pts: &[(f64, f64)]) -> f64 {
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for &(p, d) in pts {
        let phi = [1.0, p, (1.0 + p * p).ln()];
        for i in 0..3 {
            b[i] += phi[i] * d;
            for j in 0..3 {
                a[i][j] += phi[i] * phi[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let mut a2 = a;
    for i in 0..3 {
        a2[i][2] = b[i];
    }
    det(&a2) / det(&a)
}

/// Coefficient of `log(1 + p^2)` in the commonly quoted inverse mean
/// curvature flow energy.
pub const INVERSE_MCF_QUOTED_LOG_COEFFICIENT: f64 = -1.0;

/// Writes `compare.csv` (`u,p,L_numeric,L_closed,residual_after_affine_fit`)
/// and `compare.json`. Models without a closed form exit 0 with an
/// "oracle disabled" note.
pub fn cmd_compare_closed_form(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut run = Run::start(cfg, out)?;
    let model = cfg.model.model.clone();
    let x = cfg.compare.x;
    if model.closed_form_lagrangian(x, 0.5, 1.0).is_none() {
        run.notes.push(format!(
            "oracle disabled: no closed form for {}",
            model.name()
        ));
        run.write_json(
            "compare.json",
            &json!({"oracle": false, "notes": run.notes}),
        )?;
        return run.finish("compare-closed-form", Some(0), Value::Null);
    }
    let spec = cfg.spec()?;
    let lag = build_lagrangian(cfg, &spec)?;
    let us = cfg.compare.u.points();
    let ps = cfg.compare.p.points();
    let quoted = matches!(model, BuiltinModel::InverseMcf);
    let rows = affine_fit_residuals(
        &lag,
        |u, p| {
            if quoted {
                BuiltinModel::inverse_mcf_quoted_form(p, u)
            } else {
                model.closed_form_lagrangian(x, u, p).unwrap_or(f64::NAN)
            }
        },
        x,
        &us,
        &ps,
    )?;
    run.write_with("compare.csv", |w| {
        writeln!(w, "u,p,L_numeric,L_closed,residual_after_affine_fit")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.u, r.p, r.numeric, r.closed, r.residual
            )?;
        }
        Ok(())
    })?;
    let max_residual = rows.iter().fold(0.0f64, |m, r| m.max(r.residual.abs()));

    let mut discrepancy = Value::Null;
    if quoted {
        let consistent = closed_form_residual(cfg, &lag)?.unwrap_or(f64::NAN);
        let coeffs: Vec<f64> = us
            .iter()
            .map(|&u| {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.u == u)
                    .map(|r| (r.p, r.numeric - r.p * r.p.atan()))
                    .collect();
                log_coefficient(&pts)
            })
            .collect();
        let fitted = coeffs.iter().sum::<f64>() / coeffs.len() as f64;
        let detected = (fitted - INVERSE_MCF_QUOTED_LOG_COEFFICIENT).abs() > 0.1;
        if detected {
            run.warn(format!(
                "discrepancy: fitted log(1+p^2) coefficient {fitted:.6} differs from the quoted {INVERSE_MCF_QUOTED_LOG_COEFFICIENT}; \
                 p atan(p) - 1/2 log(1+p^2) - u matches with max residual {consistent:.3e}"
            ));
        }
        discrepancy = json!({
            "detected": detected,
            "quoted_log_coefficient": INVERSE_MCF_QUOTED_LOG_COEFFICIENT,
            "fitted_log_coefficient": fitted,
            "fitted_log_coefficient_range": [
                coeffs.iter().copied().fold(f64::INFINITY, f64::min),
                coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ],
            "max_residual_consistent_form": consistent,
        });
    }
    let summary = json!({
        "oracle": true,
        "model": model.name(),
        "x": x,
        "max_residual": max_residual,
        "lagrangian": lag.meta(),
        "discrepancy": discrepancy,
        "notes": run.notes,
    });
    run.write_json("compare.json", &summary)?;
    run.finish("compare-closed-form", None, summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ConstructEnergy,
    Simulate,
    Verify,
    CompareClosedForm,
}

impl Command {
    pub fn run(self, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
        match self {
            Self::ConstructEnergy => cmd_construct_energy(cfg, out),
            Self::Simulate => cmd_simulate(cfg, out),
            Self::Verify => cmd_verify(cfg, out),
            Self::CompareClosedForm => cmd_compare_closed_form(cfg, out),
        }
    }
}

/// Loads the config, applies flag overrides and runs `command` on a pool of
/// `workers` threads (default: available parallelism). Returns the exit code
/// after printing notes to stdout and errors to stderr.
pub fn run(
    command: Command,
    config: &Path,
    out: Option<&Path>,
    workers: Option<usize>,
    seed: Option<u64>,
) -> i32 {
    let result = (|| {
        let mut cfg = RunConfig::load(config)?;
        if let Some(dir) = out {
            cfg.output_dir = Some(dir.to_path_buf());
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let dir = cfg
            .output_dir
            .clone()
            .ok_or_else(|| CliError::Config("no output directory (use --out)".to_string()))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        pool.install(|| command.run(&cfg, &dir))
    })();
    match result {
        Ok(o) => {
            for n in &o.notes {
                println!("{n}");
            }
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_points() {
        assert_eq!(Axis::new(0.0, 1.0, 3).points(), vec![0.0, 0.5, 1.0]);
        assert_eq!(
            Axis::mirrored(1.0, 2.0, 2).points(),
            vec![-2.0, -1.0, 1.0, 2.0]
        );
        assert_eq!(Axis::new(0.3, 1.0, 1).points(), vec![0.3]);
    }

    #[test]
    fn unknown_model_is_reported_by_name() {
        let e = RunConfig::from_json(r#"{"model": {"model": "heat_death"}}"#).unwrap_err();
        assert!(e.to_string().contains("unknown model 'heat_death'"), "{e}");
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"model": {"model": "rho_laplacian_poly", "rho": 3.0, "n": 1.0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.g_mode, GMode::Analytic);
        assert_eq!(cfg.grid.n_cells, 128);
        assert_eq!(cfg.initial_condition, InitialCondition::default());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = RunConfig::new(BuiltinModel::PorousMedium { m: 2.0 });
        cfg.initial_condition = InitialCondition::Profile(Profile::Bump {
            height: 1.0,
            width_coeff: 8.0,
        });
        cfg.time.output_interval = Some(0.01);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn out_of_range_options_are_rejected() {
        let mut cfg = RunConfig::new(BuiltinModel::InverseMcf);
        cfg.grid.n_cells = 4;
        assert!(matches!(cfg.check(), Err(CliError::Config(_))));
        let mut cfg = RunConfig::new(BuiltinModel::InverseMcf);
        cfg.initial_condition = InitialCondition::Csv {
            csv: PathBuf::from("/nonexistent/u0.csv"),
        };
        assert!(cfg
            .check()
            .unwrap_err()
            .to_string()
            .contains("does not exist"));
        let cfg = RunConfig::new(BuiltinModel::PorousMedium { m: 0.5 });
        assert!(matches!(cfg.check(), Err(CliError::Models(_))));
    }

    #[test]
    fn profiles() {
        let p = Profile::SineProduct {
            base: 0.5,
            amplitude: 0.3,
        };
        assert!((p.eval(0.5) - 0.8).abs() < 1e-15);
        assert_eq!(p.eval(0.0), 0.0);
        let b = Profile::Bump {
            height: 2.0,
            width_coeff: 16.0,
        };
        assert_eq!(b.eval(0.0), 0.0);
        assert_eq!(b.eval(0.5), 2.0);
        let l = Profile::LinearPlusSine {
            left: 0.0,
            right: 1.0,
            amplitude: 0.1,
        };
        assert!((l.eval(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_coefficient_recovers_exact_fit() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let p = -2.0 + 0.2 * i as f64;
                (p, 0.3 - 1.5 * p - 0.5 * (1.0 + p * p).ln())
            })
            .collect();
        assert!((log_coefficient(&pts) + 0.5).abs() < 1e-10);
    }
}
