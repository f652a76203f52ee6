//! Experiment configuration, orchestration and reporting. This is the only
//! module that touches the filesystem: computational modules return values
//! and the pipelines here serialize them as CSV, JSON and SVG.

use crate::error::{Error, Result};
use crate::geometry::{self, AreaSlope, ChannelGeometry, SectionShape};
use crate::korn::{self, KornResolution, KornSweepOptions};
use crate::mesh::TriMesh;
use crate::polygon;
use crate::profile::Profile;
use crate::relent::{self, ReferenceModel, StudyCell, StudyConfig, StudyMode};
use crate::solver1d::{self, Grid1D, Limiter, RunOptions1D, Scheme1D, State1D, System1D, Visc1DParams};
use crate::solver_axi::{self, AxiGrid, AxiOptions, AxiState, BcMode, ViscParams3D};
use crate::thermo::PressureLaw;
use plotters::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "NOZZLE_LAB_OUT";
pub const MANIFEST_NAME: &str = "manifest.json";

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory, relative to the working directory.
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    /// Seed of the optional initial-data perturbation.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; defaults to the number of cells capped at the CPU count.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub pressure: PressureConfig,
    pub solver1d: Option<Solver1DConfig>,
    pub axi: Option<AxiConfig>,
    pub study: Option<StudySection>,
    pub korn: Option<KornSection>,
    pub poincare: Option<PoincareSection>,
    #[serde(default)]
    pub assertions: Assertions,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// SHA-256 of the canonical (key-sorted) config.
    #[serde(skip)]
    pub hash: String,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKindConfig {
    #[default]
    Circular,
    /// Per-z boundary polygons from a CSV file `z, vertex_index, x, y`.
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: GeometryKindConfig,
    pub epsilon: f64,
    pub radius: Profile,
    pub centerline_x: Profile,
    pub centerline_y: Profile,
    pub file: Option<PathBuf>,
    pub n_z_samples: usize,
    /// Boundary vertices per section for checks.
    pub section_vertices: usize,
    /// Rings of the section meshes used by tabulated tilt fields.
    pub section_rings: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            kind: GeometryKindConfig::Circular,
            epsilon: 0.1,
            radius: Profile::constant(1.0),
            centerline_x: Profile::default(),
            centerline_y: Profile::default(),
            file: None,
            n_z_samples: 64,
            section_vertices: 32,
            section_rings: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PressureConfig {
    pub gamma: f64,
    pub kappa: f64,
}

impl Default for PressureConfig {
    fn default() -> Self {
        Self { gamma: 2.0, kappa: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemConfig {
    #[default]
    Euler,
    NsDrift,
    NsSlipAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Solver1DConfig {
    pub system: SystemConfig,
    pub mu: f64,
    pub eta: f64,
    pub n_cells: usize,
    pub horizon: f64,
    pub n_outputs: usize,
    pub density: Profile,
    pub velocity: Profile,
    pub limiter: Limiter,
    pub cfl: Option<f64>,
    pub dt_max: Option<f64>,
}

impl Default for Solver1DConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::Euler,
            mu: 1.0,
            eta: 1.0,
            n_cells: 128,
            horizon: 0.2,
            n_outputs: 10,
            density: Profile::constant(1.0),
            velocity: Profile::default(),
            limiter: Limiter::Minmod,
            cfl: None,
            dt_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxiConfig {
    pub n_r: usize,
    pub n_z: usize,
    pub mu: f64,
    pub eta: f64,
    pub lambda: f64,
    pub bc: BcMode,
    pub horizon: f64,
    pub n_outputs: usize,
    pub density: Profile,
    /// Initial axial velocity; the radial velocity starts at zero.
    pub velocity: Profile,
    /// Amplitude of a seeded uniform perturbation of the initial density.
    pub perturbation: f64,
    pub limiter: Limiter,
}

impl Default for AxiConfig {
    fn default() -> Self {
        Self {
            n_r: 8,
            n_z: 64,
            mu: 1.0,
            eta: 1.0,
            lambda: 1.0,
            bc: BcMode::SlipOnly,
            horizon: 0.1,
            n_outputs: 10,
            density: Profile::constant(1.0),
            velocity: Profile::default(),
            perturbation: 0.0,
            limiter: Limiter::Minmod,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub mode: StudyMode,
    pub reference_model: ReferenceModel,
    pub radius: Profile,
    pub mu: f64,
    pub eta: f64,
    pub epsilons: Vec<f64>,
    /// Vanishing-viscosity parameters; defaults to `λ = ε` for the inviscid
    /// limit and `λ = 1` for the viscous one.
    pub lambdas: Option<Vec<f64>>,
    pub density: Profile,
    pub velocity: Profile,
    pub horizon: f64,
    pub n_outputs: usize,
    pub n_r: usize,
    pub n_z: usize,
    pub snapshots_per_unit_time: usize,
    pub reference_dt_max: Option<f64>,
    pub limiter: Limiter,
    pub check_fault: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            mode: StudyMode::Inviscid,
            reference_model: ReferenceModel::Drift,
            radius: Profile::constant(1.0),
            mu: 1.0,
            eta: 1.0,
            epsilons: vec![],
            lambdas: None,
            density: Profile::constant(1.0),
            velocity: Profile::default(),
            horizon: 0.1,
            n_outputs: 10,
            n_r: 8,
            n_z: 64,
            snapshots_per_unit_time: 400,
            reference_dt_max: None,
            limiter: Limiter::Minmod,
            check_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KornSection {
    pub epsilons: Vec<f64>,
    pub resolution: KornResolution,
    /// Repeat every cell on a 3/2-refined mesh for an error bar.
    pub refine: bool,
    pub ko2: bool,
    /// Intervals of the hat basis of the kernel-orthogonal constant.
    pub kernel_intervals: Option<usize>,
}

impl Default for KornSection {
    fn default() -> Self {
        Self {
            epsilons: vec![],
            resolution: KornResolution::default(),
            refine: true,
            ko2: true,
            kernel_intervals: Some(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoincareSection {
    pub shapes: Vec<SectionShape>,
    pub n_boundary: usize,
    pub n_rings: usize,
    /// Dilation factors checked against the quadratic scaling law.
    pub dilations: Vec<f64>,
}

impl Default for PoincareSection {
    fn default() -> Self {
        Self { shapes: vec![SectionShape::Disk { radius: 1.0 }], n_boundary: 32, n_rings: 6, dilations: vec![0.5, 0.1] }
    }
}

/// Pass/fail thresholds checked after a run; unset entries are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Assertions {
    pub max_divergence_residual: Option<f64>,
    pub max_energy_residual: Option<f64>,
    pub max_mass_drift_per_step: Option<f64>,
    pub min_rate: Option<f64>,
    pub monotone: bool,
    pub rei_guard: bool,
    pub ko1_slope: Option<[f64; 2]>,
    pub max_ko2_variation: Option<f64>,
    pub max_constrained_variation: Option<f64>,
    pub max_poincare_drift: Option<f64>,
}

/// Reads, canonicalizes and validates a TOML config. Every validation
/// problem is reported, not just the first.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

/// Parses config text; relative file references resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Configuration(format!("invalid TOML: {e}")))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Configuration(format!("invalid configuration: {e}")))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.hash = config_hash(&raw)?;
    let problems = cfg.problems();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Configuration(problems.join("\n")))
    }
}

/// Hash of the key-sorted JSON rendering, so reordering keys or tables
/// leaves it unchanged.
pub fn config_hash(raw: &toml::Table) -> Result<String> {
    let value = serde_json::to_value(raw).map_err(|e| Error::Configuration(e.to_string()))?;
    let canonical = serde_json::to_string(&sort_keys(value)).map_err(|e| Error::Configuration(e.to_string()))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(m) => {
            let mut entries: Vec<_> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            serde_json::Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect())
        }
        serde_json::Value::Array(a) => serde_json::Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

fn positive(problems: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        problems.push(format!("{name} must be positive (got {v})"));
    }
}

impl ExperimentConfig {
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.jobs == Some(0) {
            p.push("jobs must be at least 1".into());
        }
        let g = &self.geometry;
        positive(&mut p, "geometry.epsilon", g.epsilon);
        if g.n_z_samples < 2 {
            p.push("geometry.n_z_samples must be at least 2".into());
        }
        if g.section_vertices < 3 {
            p.push("geometry.section_vertices must be at least 3".into());
        }
        match (g.kind, &g.file) {
            (GeometryKindConfig::Tabulated, None) => p.push("a tabulated geometry needs geometry.file".into()),
            (GeometryKindConfig::Tabulated, Some(f)) => {
                let path = self.base_dir.join(f);
                if !path.is_file() {
                    p.push(format!("geometry file {} does not exist", path.display()));
                }
            }
            (GeometryKindConfig::Circular, Some(_)) => p.push("geometry.file is only used by tabulated geometries".into()),
            _ => {}
        }
        if !(self.pressure.gamma > 1.5) {
            p.push(format!("the pressure growth hypothesis requires gamma > 3/2 (gamma = {})", self.pressure.gamma));
        }
        positive(&mut p, "pressure.kappa", self.pressure.kappa);
        if let Some(s) = &self.solver1d {
            positive(&mut p, "solver1d.horizon", s.horizon);
            if s.n_cells < 4 {
                p.push("solver1d.n_cells must be at least 4".into());
            }
            if s.n_outputs == 0 {
                p.push("solver1d.n_outputs must be at least 1".into());
            }
            if s.system != SystemConfig::Euler {
                positive(&mut p, "solver1d.mu", s.mu);
                if !(s.eta >= 0.0) {
                    p.push(format!("solver1d.eta must be non-negative (got {})", s.eta));
                }
            }
        }
        if let Some(a) = &self.axi {
            positive(&mut p, "axi.horizon", a.horizon);
            positive(&mut p, "axi.mu", a.mu);
            positive(&mut p, "axi.lambda", a.lambda);
            if a.n_r < 8 || a.n_z < 32 {
                p.push(format!("axi grid needs n_r >= 8 and n_z >= 32 (got {} x {})", a.n_r, a.n_z));
            }
            if a.n_outputs == 0 {
                p.push("axi.n_outputs must be at least 1".into());
            }
            if a.bc == BcMode::SlipPlusNoSlipCaps && !(a.eta > 0.0) {
                p.push(format!("no-slip caps require strictly positive bulk viscosity (eta = {})", a.eta));
            } else if !(a.eta >= 0.0) {
                p.push(format!("axi.eta must be non-negative (got {})", a.eta));
            }
            if !(a.perturbation >= 0.0 && a.perturbation < 1.0) {
                p.push(format!("axi.perturbation must lie in [0, 1) (got {})", a.perturbation));
            }
        }
        if let Some(s) = &self.study {
            if let Some(l) = &s.lambdas {
                if l.len() != s.epsilons.len() {
                    p.push(format!("study.lambdas has {} entries but study.epsilons has {}", l.len(), s.epsilons.len()));
                }
            }
            if let Err(Error::Configuration(m)) = self.study_config(s).validate() {
                p.extend(m.split("; ").map(|m| format!("study: {m}")));
            }
        }
        if let Some(k) = &self.korn {
            for &e in &k.epsilons {
                positive(&mut p, "korn.epsilons entry", e);
            }
            let r = k.resolution;
            if r.n_boundary < 3 || r.n_rings < 1 || r.n_cells_z < 2 {
                p.push("korn.resolution needs n_boundary >= 3, n_rings >= 1 and n_cells_z >= 2".into());
            }
            if k.kernel_intervals.is_some_and(|n| n < 2) {
                p.push("korn.kernel_intervals must be at least 2".into());
            }
        }
        if let Some(s) = &self.poincare {
            if s.n_boundary < 3 || s.n_rings < 1 {
                p.push("poincare meshes need n_boundary >= 3 and n_rings >= 1".into());
            }
            for sh in &s.shapes {
                match sh {
                    SectionShape::Disk { radius } => positive(&mut p, "disk radius", *radius),
                    SectionShape::Ellipse { a, b } => {
                        positive(&mut p, "ellipse semi-axis", *a);
                        positive(&mut p, "ellipse semi-axis", *b);
                    }
                    SectionShape::Square { side } => positive(&mut p, "square side", *side),
                    SectionShape::Polygon { vertices } => {
                        if vertices.len() < 3 || !polygon::is_simple(vertices) || polygon::signed_area(vertices) <= 0.0 {
                            p.push("section polygons must be simple, counter-clockwise and have three or more vertices".into());
                        }
                    }
                }
            }
            for &d in &s.dilations {
                positive(&mut p, "poincare.dilations entry", d);
            }
        }
        p
    }

    fn study_config(&self, s: &StudySection) -> StudyConfig {
        let lambdas = s.lambdas.clone().unwrap_or_else(|| match s.mode {
            StudyMode::Inviscid => s.epsilons.clone(),
            StudyMode::Viscous => vec![1.0; s.epsilons.len()],
        });
        StudyConfig {
            mode: s.mode,
            reference_model: s.reference_model,
            radius: s.radius.clone(),
            gamma: self.pressure.gamma,
            kappa: self.pressure.kappa,
            mu: s.mu,
            eta: s.eta,
            cells: s.epsilons.iter().zip(&lambdas).map(|(&epsilon, &lambda)| StudyCell { epsilon, lambda }).collect(),
            density: s.density.clone(),
            velocity: s.velocity.clone(),
            horizon: s.horizon,
            n_outputs: s.n_outputs,
            n_r: s.n_r,
            n_z: s.n_z,
            snapshots_per_unit_time: s.snapshots_per_unit_time,
            reference_dt_max: s.reference_dt_max,
            limiter: s.limiter,
            check_fault: s.check_fault,
        }
    }

    pub fn law(&self) -> Result<PressureLaw> {
        PressureLaw::power_law(self.pressure.gamma, self.pressure.kappa)
    }

    pub fn build_geometry(&self) -> Result<ChannelGeometry> {
        let g = &self.geometry;
        match g.kind {
            GeometryKindConfig::Circular => ChannelGeometry::circular(
                [g.centerline_x.clone(), g.centerline_y.clone()],
                g.radius.clone(),
                g.epsilon,
                g.n_z_samples,
            ),
            GeometryKindConfig::Tabulated => {
                let path = self.base_dir.join(g.file.as_ref().expect("validated"));
                let f = std::fs::File::open(&path)?;
                ChannelGeometry::from_csv(f, g.epsilon)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// commands and manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GeometryCheck,
    Run1d,
    RunAxi,
    ConvergeInviscid,
    ConvergeViscous,
    KornSweep,
    Poincare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub name: String,
    pub ok: bool,
    pub message: Option<String>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub jobs: Vec<JobStatus>,
    pub assertions: Vec<AssertionResult>,
    /// Every file written to the output directory, this manifest included,
    /// relative to that directory.
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    /// True when every job succeeded and every assertion passed.
    pub fn success(&self) -> bool {
        self.jobs.iter().all(|j| j.ok) && self.assertions.iter().all(|a| a.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.success() {
            0
        } else {
            1
        }
    }
}

/// Runtime settings that may override the config.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

/// Output directory: `NOZZLE_LAB_OUT`, else the flag, else the config.
pub fn resolve_out(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone()),
    }
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl Output {
    /// Prepares the directory. Files from a previous run listed in its
    /// manifest are removed; any other content is refused.
    fn prepare(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let manifest = dir.join(MANIFEST_NAME);
        let mut known: Vec<PathBuf> = Vec::new();
        if manifest.is_file() {
            let old: RunManifest = serde_json::from_str(&std::fs::read_to_string(&manifest)?)
                .map_err(|e| Error::Configuration(format!("unreadable manifest in {}: {e}", dir.display())))?;
            known = old.artifacts;
        }
        for entry in std::fs::read_dir(dir)? {
            let name = PathBuf::from(entry?.file_name());
            if !known.contains(&name) {
                return Err(Error::Configuration(format!(
                    "output directory {} holds {} which no previous run wrote",
                    dir.display(),
                    name.display()
                )));
            }
        }
        for f in known {
            let p = dir.join(f);
            if p.is_file() {
                std::fs::remove_file(p)?;
            }
        }
        Ok(Self { dir: dir.to_path_buf(), artifacts: vec![] })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(PathBuf::from(name));
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Configuration(e.to_string()))?;
        std::fs::write(self.path(name), text + "\n")?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name)).map_err(csv_error)?;
        w.write_record(header).map_err(csv_error)?;
        for r in rows {
            w.write_record(r.iter().map(|v| format!("{v:e}"))).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Runs one command and writes its artifacts and manifest. Job failures are
/// recorded in the manifest rather than returned; errors are returned only
/// for problems with the output directory.
pub fn run(cfg: &ExperimentConfig, command: Command, overrides: &RunOverrides) -> Result<RunManifest> {
    let start = Instant::now();
    let out_dir = resolve_out(cfg, overrides.out.as_deref());
    let mut out = Output::prepare(&out_dir)?;
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let n_cells = match command {
        Command::ConvergeInviscid | Command::ConvergeViscous => cfg.study.as_ref().map_or(1, |s| s.epsilons.len()),
        Command::KornSweep => cfg.korn.as_ref().map_or(1, |k| k.epsilons.len()),
        _ => 1,
    };
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = overrides.jobs.or(cfg.jobs).unwrap_or_else(|| n_cells.clamp(1, cpus));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start {jobs} worker threads: {e}")))?;
    let mut ctx = Context { cfg, seed, out: &mut out, jobs: vec![], assertions: vec![] };
    let job_start = Instant::now();
    let result = pool.install(|| match command {
        Command::GeometryCheck => ctx.geometry_check(),
        Command::Run1d => ctx.run_1d(),
        Command::RunAxi => ctx.run_axi(),
        Command::ConvergeInviscid => ctx.converge(StudyMode::Inviscid),
        Command::ConvergeViscous => ctx.converge(StudyMode::Viscous),
        Command::KornSweep => ctx.korn_sweep(),
        Command::Poincare => ctx.poincare(),
    });
    let (mut jobs_status, assertions) = (std::mem::take(&mut ctx.jobs), std::mem::take(&mut ctx.assertions));
    if let Err(e) = &result {
        log::error!("{e}");
    }
    if let (Err(e), true) = (&result, jobs_status.iter().all(|j| j.ok)) {
        jobs_status.push(JobStatus {
            name: format!("{command:?}"),
            ok: false,
            message: Some(e.to_string()),
            wall_clock_s: job_start.elapsed().as_secs_f64(),
        });
    }
    out.artifacts.push(PathBuf::from(MANIFEST_NAME));
    out.artifacts.sort();
    let manifest = RunManifest {
        command,
        config_hash: cfg.hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        jobs: jobs_status,
        assertions,
        artifacts: out.artifacts.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Configuration(e.to_string()))?;
    std::fs::write(out.dir.join(MANIFEST_NAME), text + "\n")?;
    Ok(manifest)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    out: &'a mut Output,
    jobs: Vec<JobStatus>,
    assertions: Vec<AssertionResult>,
}

impl Context<'_> {
    fn job<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f();
        self.jobs.push(JobStatus {
            name: name.into(),
            ok: r.is_ok(),
            message: r.as_ref().err().map(|e| e.to_string()),
            wall_clock_s: t.elapsed().as_secs_f64(),
        });
        r.map_err(|e| Error::Configuration(format!("job {name} failed: {e}")))
    }

    fn at_most(&mut self, name: &str, value: f64, limit: Option<f64>) {
        if let Some(l) = limit {
            self.assertions.push(AssertionResult {
                name: name.into(),
                passed: value <= l,
                value,
                threshold: format!("<= {l}"),
            });
        }
    }

    fn at_least(&mut self, name: &str, value: f64, limit: Option<f64>) {
        if let Some(l) = limit {
            self.assertions.push(AssertionResult {
                name: name.into(),
                passed: value >= l,
                value,
                threshold: format!(">= {l}"),
            });
        }
    }

    fn holds(&mut self, name: &str, ok: bool) {
        self.assertions.push(AssertionResult {
            name: name.into(),
            passed: ok,
            value: if ok { 1.0 } else { 0.0 },
            threshold: "true".into(),
        });
    }

    fn geometry_check(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let report = self.job("geometry-check", || geometry_report(cfg))?;
        self.out.json("geometry_report.json", &report)?;
        self.out.csv("area_table.csv", &["z", "area"], report.area_table.iter().map(|r| vec![r.z, r.area]))?;
        self.at_most(
            "divergence identity residual",
            report.divergence_identity_residual,
            cfg.assertions.max_divergence_residual,
        );
        Ok(())
    }

    fn run_1d(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let s = cfg.solver1d.clone().ok_or_else(|| Error::Configuration("run-1d needs a [solver1d] section".into()))?;
        let (grid, traj) = self.job("run-1d", || {
            let geom = cfg.build_geometry()?;
            let grid = Grid1D::new(&geom, s.n_cells)?;
            let system = match s.system {
                SystemConfig::Euler => System1D::Euler,
                SystemConfig::NsDrift => System1D::NsDrift(Visc1DParams::new(s.mu, s.eta)?),
                SystemConfig::NsSlipAveraged => System1D::NsSlipAveraged(Visc1DParams::new(s.mu, s.eta)?),
            };
            let initial = State1D::from_profiles(&grid, &s.density, &s.velocity)?;
            let times: Vec<f64> = (0..=s.n_outputs).map(|k| s.horizon * k as f64 / s.n_outputs as f64).collect();
            let mut scheme = Scheme1D { limiter: s.limiter, ..Default::default() };
            if let Some(c) = s.cfl {
                scheme.cfl = c;
            }
            let opts = RunOptions1D { scheme, dt_max: s.dt_max };
            let traj = solver1d::run_1d(&system, &grid, &cfg.law()?, &initial, &times, &opts)?;
            Ok((grid, traj))
        })?;
        self.out.csv(
            "run1d_series.csv",
            &["t", "mass", "energy", "dissipation"],
            (0..traj.times.len()).map(|k| vec![traj.times[k], traj.mass[k], traj.energy[k], traj.dissipation[k]]),
        )?;
        let last = traj.states.last().expect("at least one output");
        let u = last.velocity();
        self.out.csv(
            "run1d_final.csv",
            &["z", "area", "density", "velocity"],
            (0..grid.n_cells).map(|i| vec![grid.z[i], grid.area[i], last.rho[i], u[i]]),
        )?;
        let mass_drift = traj.mass.iter().map(|m| (m - traj.mass[0]).abs()).fold(0.0, f64::max) / traj.mass[0];
        let energy_residual = (0..traj.times.len())
            .map(|k| traj.energy[k] + traj.dissipation[k] - traj.energy[0])
            .fold(f64::NEG_INFINITY, f64::max);
        self.out.json(
            "run1d_report.json",
            &serde_json::json!({
                "n_steps": traj.n_steps,
                "relative_mass_drift": mass_drift,
                "max_energy_residual": energy_residual,
            }),
        )?;
        self.at_most("energy residual", energy_residual, cfg.assertions.max_energy_residual);
        self.at_most("mass drift per step", mass_drift / traj.n_steps.max(1) as f64, cfg.assertions.max_mass_drift_per_step);
        Ok(())
    }

    fn run_axi(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let seed = self.seed;
        let a = cfg.axi.clone().ok_or_else(|| Error::Configuration("run-axi needs an [axi] section".into()))?;
        let (grid, traj) = self.job("run-axi", || {
            let geom = cfg.build_geometry()?;
            if !geom.is_axisymmetric() {
                return Err(Error::UnsupportedKind("run-axi needs a straight-axis circular channel".into()));
            }
            let grid = AxiGrid::new(&geom, a.n_r, a.n_z)?;
            let mut initial = AxiState::from_fn(&grid, |_, z| (a.density.value(z), 0.0, a.velocity.value(z)))?;
            if a.perturbation > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for c in 0..grid.n_cells() {
                    let f = 1.0 + a.perturbation * rng.random_range(-1.0..1.0);
                    initial.rho[c] *= f;
                    initial.mom_r[c] *= f;
                    initial.mom_z[c] *= f;
                }
            }
            let visc = ViscParams3D::new(a.mu, a.eta, a.lambda)?;
            let times: Vec<f64> = (1..=a.n_outputs).map(|k| a.horizon * k as f64 / a.n_outputs as f64).collect();
            let opts = AxiOptions { limiter: a.limiter, ..Default::default() };
            let traj = solver_axi::run_axi(&grid, &cfg.law()?, &visc, a.bc, &initial, &times, &opts)?;
            Ok((grid, traj))
        })?;
        self.out.csv(
            "axi_energy.csv",
            &["t", "kinetic", "potential", "dissipation", "residual", "mass"],
            traj.energy.iter().map(|e| vec![e.t, e.kinetic, e.potential, e.dissipation, e.residual, e.mass]),
        )?;
        let last = traj.states.last().expect("at least one output");
        self.out.csv(
            "axi_final.csv",
            &["r", "z", "density", "radial_velocity", "axial_velocity"],
            (0..grid.n_cells()).map(|c| {
                let (r, z) = grid.center(c);
                let (ur, uz) = last.velocity(c);
                vec![r, z, last.rho[c], ur, uz]
            }),
        )?;
        let residual = traj.energy.iter().map(|e| e.residual).fold(f64::NEG_INFINITY, f64::max);
        let mass0 = traj.energy.first().map_or(1.0, |e| e.mass);
        let drift = traj.max_mass_drift / (mass0 * traj.n_steps.max(1) as f64);
        self.out.json(
            "axi_report.json",
            &serde_json::json!({
                "n_steps": traj.n_steps,
                "max_mass_drift": traj.max_mass_drift,
                "mass_drift_per_step": drift,
                "max_energy_residual": residual,
            }),
        )?;
        self.at_most("energy residual", residual, cfg.assertions.max_energy_residual);
        self.at_most("mass drift per step", drift, cfg.assertions.max_mass_drift_per_step);
        Ok(())
    }

    fn converge(&mut self, mode: StudyMode) -> Result<()> {
        let cfg = self.cfg;
        let s = cfg.study.as_ref().ok_or_else(|| Error::Configuration("converge needs a [study] section".into()))?;
        if s.mode != mode {
            return Err(Error::Configuration(format!("study.mode is {:?} but the command asks for {mode:?}", s.mode)));
        }
        if s.epsilons.is_empty() {
            log::info!("empty study: nothing to run");
            return Ok(());
        }
        let study = cfg.study_config(s);
        let rep = self.job("convergence-study", || relent::convergence_study(&study))?;
        let q = rep.fitted_q();
        self.out.json(
            "converge_report.json",
            &serde_json::json!({
                "mode": rep.mode,
                "grid": study.cells.iter().map(|c| [c.epsilon, c.lambda]).collect::<Vec<_>>(),
                "abscissa": rep.abscissa,
                "sup_E_normalized": rep.sup_normalized,
                "fitted_q": q,
                "fitted_C": rep.fit.map(|f| f.constant),
                "floors": rep.floor,
                "monotone": rep.monotone,
                "guard": rep.guard,
                "cells": rep.cells,
            }),
        )?;
        let rows: Vec<Vec<f64>> = rep
            .cells
            .iter()
            .flat_map(|c| {
                (0..c.times.len()).map(move |k| {
                    vec![c.epsilon, c.lambda, c.times[k], c.relative_energy[k], c.normalized[k], c.rei_residual[k]]
                })
            })
            .collect();
        self.out.csv(
            "converge_series.csv",
            &["epsilon", "lambda", "t", "relative_energy", "normalized", "rei_residual"],
            rows,
        )?;
        let pts: Vec<(f64, f64)> = rep.abscissa.iter().copied().zip(rep.sup_normalized.iter().copied()).collect();
        let mut series = vec![("sup E / |Omega|".to_string(), pts, true)];
        if let Some(f) = rep.fit {
            series.push((format!("fit q = {:.2}", f.exponent), rep.abscissa.iter().map(|&x| (x, f.predict(x))).collect(), false));
        }
        let x_label = if mode == StudyMode::Inviscid { "epsilon + lambda" } else { "epsilon" };
        loglog_svg(&self.out.path("converge_rate.svg"), "relative energy", x_label, "sup E / |Omega|", &series)?;
        if let Some(min_q) = cfg.assertions.min_rate {
            self.at_least("fitted rate", q.unwrap_or(f64::NEG_INFINITY), Some(min_q));
        }
        if cfg.assertions.monotone {
            self.holds("monotone decrease", rep.monotone);
        }
        if cfg.assertions.rei_guard {
            let g = rep.guard.as_ref();
            self.holds("relative energy residual guard", g.is_some_and(|g| g.passed.iter().all(|&p| p)));
            if s.check_fault {
                self.holds("injected fault detected", g.and_then(|g| g.fault_tripped).unwrap_or(false));
            }
        }
        let residual = rep.cells.iter().map(|c| c.max_energy_residual / c.volume).fold(f64::NEG_INFINITY, f64::max);
        self.at_most("energy residual per volume", residual, cfg.assertions.max_energy_residual);
        let drift = rep.cells.iter().map(|c| c.mass_drift_per_step).fold(0.0, f64::max);
        self.at_most("mass drift per step", drift, cfg.assertions.max_mass_drift_per_step);
        Ok(())
    }

    fn korn_sweep(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let k = cfg.korn.clone().ok_or_else(|| Error::Configuration("korn sweep needs a [korn] section".into()))?;
        if k.epsilons.is_empty() {
            log::info!("empty sweep: nothing to run");
            return Ok(());
        }
        let opts = KornSweepOptions {
            resolution: k.resolution,
            refined: k.refine.then(|| k.resolution.refined()),
            ko2: k.ko2,
            kernel_intervals: k.kernel_intervals,
        };
        let rep = self.job("korn-sweep", || korn::korn_sweep(&cfg.build_geometry()?, &k.epsilons, &opts))?;
        let rows: Vec<serde_json::Value> = rep
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "epsilon": r.epsilon,
                    "ko1": r.ko1,
                    "ko2": r.ko2,
                    "poincare": r.section_poincare,
                    "blowup_lower_bound": r.blowup_lower_bound,
                    "constrained_constant": r.constrained,
                    "composite_ko2_bound": r.composite_ko2_bound,
                    "self_convergence_errbar": { "ko1": r.ko1_errbar, "ko2": r.ko2_errbar },
                    "n_dofs": r.n_dofs,
                })
            })
            .collect();
        self.out.json(
            "korn_report.json",
            &serde_json::json!({
                "rows": rows,
                "ko1_fit": rep.ko1_fit,
                "ko2_variation": rep.ko2_variation,
                "constrained_variation": rep.constrained_variation,
            }),
        )?;
        let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
        self.out.csv(
            "korn_sweep.csv",
            &["epsilon", "ko1", "ko2", "poincare", "blowup_lower_bound", "constrained", "ko1_errbar", "ko2_errbar"],
            rep.rows.iter().map(|r| {
                vec![
                    r.epsilon,
                    r.ko1,
                    opt(r.ko2),
                    r.section_poincare,
                    opt(r.blowup_lower_bound),
                    opt(r.constrained),
                    opt(r.ko1_errbar),
                    opt(r.ko2_errbar),
                ]
            }),
        )?;
        let pick = |f: &dyn Fn(&korn::KornSweepRow) -> Option<f64>| -> Vec<(f64, f64)> {
            rep.rows.iter().filter_map(|r| f(r).map(|v| (r.epsilon, v))).collect()
        };
        let mut series = vec![("ko1".to_string(), pick(&|r| Some(r.ko1)), true)];
        series.push(("blow-up lower bound".into(), pick(&|r| r.blowup_lower_bound), true));
        series.push(("kernel-orthogonal".into(), pick(&|r| r.constrained), true));
        series.retain(|s| !s.1.is_empty());
        loglog_svg(&self.out.path("korn_ko1.svg"), "Korn constants", "epsilon", "constant", &series)?;
        if let (Some([lo, hi]), Some(f)) = (cfg.assertions.ko1_slope, rep.ko1_fit) {
            self.assertions.push(AssertionResult {
                name: "ko1 log-log slope".into(),
                passed: f.exponent >= lo && f.exponent <= hi,
                value: f.exponent,
                threshold: format!("in [{lo}, {hi}]"),
            });
        }
        let bounds_met = rep.rows.iter().all(|r| r.blowup_lower_bound.is_none_or(|b| r.ko1 >= b * (1.0 - 1e-8)));
        self.holds("ko1 meets the blow-up lower bound", bounds_met);
        self.at_most("ko2 variation", opt(rep.ko2_variation), cfg.assertions.max_ko2_variation);
        self.at_most("constrained variation", opt(rep.constrained_variation), cfg.assertions.max_constrained_variation);
        Ok(())
    }

    fn poincare(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let s = cfg.poincare.clone().unwrap_or_default();
        let rows = self.job("poincare", || {
            s.shapes.iter().map(|sh| poincare_row(sh, &s)).collect::<Result<Vec<_>>>()
        })?;
        self.out.json("poincare_report.json", &rows)?;
        let drift = rows.iter().map(|r| r.refinement_drift).fold(0.0, f64::max);
        self.at_most("tangent Poincare refinement drift", drift, cfg.assertions.max_poincare_drift);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaRow {
    pub z: f64,
    pub area: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    pub area_table: Vec<AreaRow>,
    pub divergence_identity_residual: f64,
    pub flow_reconstruction_error: f64,
}

pub fn geometry_report(cfg: &ExperimentConfig) -> Result<GeometryReport> {
    let geom = cfg.build_geometry()?;
    let (tilt, residual) = match cfg.geometry.kind {
        GeometryKindConfig::Circular => {
            let t = geometry::tilt_field_circular(&geom)?;
            let r = geometry::check_divergence_identity_with(&geom, &t, AreaSlope::Analytic)?;
            (t, r)
        }
        GeometryKindConfig::Tabulated => {
            let t = geometry::tilt_field_neumann(&geom, cfg.geometry.section_rings)?;
            let r = geometry::check_divergence_identity(&geom, &t);
            (t, r)
        }
    };
    let area_table =
        geom.sample_z().into_iter().zip(geom.sample_areas()).map(|(z, area)| AreaRow { z, area }).collect();
    Ok(GeometryReport {
        area_table,
        divergence_identity_residual: residual,
        flow_reconstruction_error: geometry::flow_reconstruction_error(&tilt, 1.0, cfg.geometry.section_vertices)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoincareRow {
    pub shape: SectionShape,
    pub constant: f64,
    pub refined_constant: f64,
    pub refinement_drift: f64,
    /// `(s, constant(sω) / (s² constant(ω)))`.
    pub dilation_ratios: Vec<(f64, f64)>,
    pub normal_trace_bound: f64,
}

fn section_mesh(shape: &SectionShape, n_boundary: usize, n_rings: usize) -> Result<TriMesh> {
    let boundary = shape.boundary_polygon(n_boundary);
    TriMesh::star_shaped(&boundary, polygon::centroid(&boundary), n_rings)
}

fn poincare_row(shape: &SectionShape, s: &PoincareSection) -> Result<PoincareRow> {
    let mesh = section_mesh(shape, s.n_boundary, s.n_rings)?;
    let fine = section_mesh(shape, 2 * s.n_boundary, 2 * s.n_rings)?;
    let constant = korn::tangent_poincare_constant(&mesh)?.constant;
    let refined_constant = korn::tangent_poincare_constant(&fine)?.constant;
    let dilation_ratios = s
        .dilations
        .iter()
        .map(|&d| Ok((d, korn::tangent_poincare_constant(&mesh.scaled(d))?.constant / (d * d * constant))))
        .collect::<Result<Vec<_>>>()?;
    Ok(PoincareRow {
        shape: shape.clone(),
        constant,
        refined_constant,
        refinement_drift: (refined_constant - constant).abs() / refined_constant,
        dilation_ratios,
        normal_trace_bound: korn::normal_trace_bound(shape)?,
    })
}

/// Log-log SVG plot; each series is `(label, points, draw_markers)`.
pub fn loglog_svg(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>, bool)]) -> Result<()> {
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.1.iter().copied()).filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    if pts.is_empty() {
        return Err(Error::Domain("nothing positive to plot on log axes".into()));
    }
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::MAX, f64::min);
        let hi = pts.iter().map(f).fold(f64::MIN, f64::max);
        if hi > lo {
            (lo / 1.2, hi * 1.2)
        } else {
            (lo / 2.0, hi * 2.0)
        }
    };
    let (x, y) = (bounds(|p| p.0), bounds(|p| p.1));
    let plot_err = |e: &dyn std::fmt::Display| Error::Io(std::io::Error::other(e.to_string()));
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((x.0..x.1).log_scale(), (y.0..y.1).log_scale())
        .map_err(|e| plot_err(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| plot_err(&e))?;
    for (i, (label, points, markers)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(label.as_str())
            .legend(move |(a, b)| PathElement::new(vec![(a, b), (a + 16, b)], color));
        if *markers {
            chart
                .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(&e))?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
