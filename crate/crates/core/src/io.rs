//! Experiment configuration, run directories and result emission.
//!
//! A run directory holds
//!
//! ```text
//! config.json                 verbatim copy of the config bytes
//! checkpoints/000000/         one directory per recorded state
//!     metric.rflb             metric components, row-major [node][i][j]
//!     manifest.json           time, step, shape, config hash
//! curvature.csv               t, t_ancient, sup_rm, sup_ric, volume
//! PARTIAL                     present while a run is incomplete
//! manifest.json               RunManifest, written last
//! ```
//!
//! Analysis commands add their CSV and JSON outputs next to these and register
//! them in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conjugate::{conjugate_sweep, ConjugateFlow, ConjugateForm, TerminalData};
use crate::deriv::{DerivativeScheme, Differentiator};
use crate::error::{Error, Result};
use crate::estimates::{
    conjugate_bounds_check, fit_cutoff, fit_decay, volume_check, ArfParams, CurvatureSeries, DecayFit,
    DecayModel, DEFAULT_BURN_IN,
};
use crate::field::MetricField;
use crate::flow::{run_flow, FlowConfig, FlowState, Gauge, TimeScheme, Trajectory};
use crate::functionals::{check_rigidity, functional_series_from, s_key, FunctionalSeries};
use crate::geometry::Geometry;
use crate::grid::Grid;
use crate::identities::{verify_all, IdentityReport, StudySetup};
use crate::init::{smooth_random_field, InitialMetric};
use crate::spectral::{
    differential_inequality_check, eigenvalue_bound_check, gaussian_example_eval, BoundReport,
    DifferentialReport, GaussianExample, SpectrumSeries,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const BLOB_MAGIC: &[u8; 4] = b"RFLB";
pub const BLOB_VERSION: u8 = 1;
/// Worker-thread count for the global rayon pool.
pub const THREADS_ENV: &str = "RICCILAB_THREADS";

const CONFIG_FILE: &str = "config.json";
const MANIFEST_FILE: &str = "manifest.json";
const PARTIAL_FILE: &str = "PARTIAL";
const LOCK_FILE: &str = ".lock";
const MANIFEST_LOCK_FILE: &str = ".manifest.lock";
const CHECKPOINT_DIR: &str = "checkpoints";
const METRIC_BLOB: &str = "metric.rflb";
const CURVATURE_CSV: &str = "curvature.csv";

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default)]
    pub scheme: TimeScheme,
    pub t_end: f64,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    /// Checkpoint spacing; `dt` then follows from the CFL limit.
    #[serde(default)]
    pub sample_interval: Option<f64>,
    /// Explicit step. Requires `checkpoint_stride` and excludes `sample_interval`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub checkpoint_stride: Option<usize>,
    #[serde(default)]
    pub gauge: Gauge,
    #[serde(default)]
    pub derivatives: DerivativeScheme,
}

fn default_safety() -> f64 {
    0.5
}

/// Terminal datum of the conjugate flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FInit {
    #[default]
    Zero,
    SmoothRandom { amplitude: f64, kmax: i64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateSection {
    #[serde(default = "default_s_list")]
    pub s_list: Vec<f64>,
    /// Start times of the λ^∞ iterates, strictly increasing in flow time.
    /// Defaults to `t_end · {1/4, 1/2, 3/4, 1}`.
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub f_init: FInit,
    #[serde(default)]
    pub form: ConjugateForm,
    #[serde(default = "default_cauchy_tol")]
    pub cauchy_tol: f64,
}

fn default_s_list() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn default_cauchy_tol() -> f64 {
    1e-6
}

impl Default for ConjugateSection {
    fn default() -> Self {
        Self {
            s_list: default_s_list(),
            schedule: None,
            f_init: FInit::Zero,
            form: ConjugateForm::U,
            cauchy_tol: default_cauchy_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Every `sample_stride`-th checkpoint enters the spectrum series.
    #[serde(default = "default_one")]
    pub sample_stride: usize,
    /// Extra slack added to the eigenvalue-bound and differential tolerances.
    #[serde(default)]
    pub allowance: f64,
}

fn default_k_max() -> usize {
    5
}

fn default_one() -> usize {
    1
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self { k_max: default_k_max(), sample_stride: 1, allowance: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArfSection {
    pub theta: f64,
    #[serde(default)]
    pub c_k: Vec<f64>,
    #[serde(default)]
    pub t_k: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Transition time `T` of the volume cutoff. Defaults to `t_end / 4`.
    #[serde(default)]
    pub t_transition: Option<f64>,
}

fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN
}

impl Default for DecaySection {
    fn default() -> Self {
        Self { burn_in: DEFAULT_BURN_IN, t_transition: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
}

/// A complete experiment. Unknown fields anywhere are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dimension: usize,
    pub grid_size: usize,
    /// Side lengths of the torus, `2π` each when absent.
    #[serde(default)]
    pub domain_lengths: Option<Vec<f64>>,
    pub initial_metric: InitialMetric,
    pub flow: FlowSection,
    #[serde(default)]
    pub conjugate: ConjugateSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default)]
    pub arf_params: Option<ArfSection>,
    #[serde(default)]
    pub decay: DecaySection,
    /// Refinement studies run by `verify-identities`; independent of the run itself.
    #[serde(default)]
    pub identities: Option<StudySetup>,
    #[serde(default)]
    pub output: OutputSection,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes)?, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !(2..=3).contains(&self.dimension) {
            return Err(config_err("dimension", "must be 2 or 3"));
        }
        let grid = self.grid()?;
        self.initial_metric
            .build(grid)
            .map_err(|e| match e {
                Error::Config { .. } => e,
                other => config_err("initial_metric", other.to_string()),
            })?;
        let flow = self.flow_config()?;
        flow.check_cfl(&grid).map_err(|e| config_err("flow", e.to_string()))?;
        let interval = flow.sample_interval();
        let on_grid = |t: f64| {
            let k = (t / interval).round();
            t >= 0.0 && t <= self.flow.t_end * (1.0 + 1e-12) && (t - k * interval).abs() <= 1e-9 * t.max(1.0)
        };
        for (i, &s) in self.conjugate.s_list.iter().enumerate() {
            if !on_grid(s) {
                return Err(config_err(
                    &format!("conjugate.s_list[{i}]"),
                    format!("s = {s} is not a checkpoint time in [0, t_end] (spacing {interval})"),
                ));
            }
        }
        let schedule = self.schedule();
        crate::functionals::validate_schedule(&schedule).map_err(|e| config_err("conjugate.schedule", e.to_string()))?;
        if let Some(i) = schedule.iter().position(|&s| !on_grid(s)) {
            return Err(config_err(
                &format!("conjugate.schedule[{i}]"),
                format!("{} is not a checkpoint time in [0, t_end]", schedule[i]),
            ));
        }
        if !(self.conjugate.cauchy_tol > 0.0) {
            return Err(config_err("conjugate.cauchy_tol", "must be positive"));
        }
        if self.spectral.k_max == 0 || self.spectral.sample_stride == 0 {
            return Err(config_err("spectral", "k_max and sample_stride must be positive"));
        }
        if let Some(a) = &self.arf_params {
            ArfParams::new(a.theta, a.c_k.clone(), a.t_k.clone()).map_err(|e| config_err("arf_params", e.to_string()))?;
        }
        if !(0.0..1.0).contains(&self.decay.burn_in) {
            return Err(config_err("decay.burn_in", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let lengths = match &self.domain_lengths {
            Some(l) => l.clone(),
            None => vec![std::f64::consts::TAU; self.dimension],
        };
        Grid::new(self.dimension, self.grid_size, &lengths).map_err(|e| config_err("grid_size", e.to_string()))
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let f = &self.flow;
        let grid = self.grid()?;
        if !(f.t_end > 0.0) {
            return Err(config_err("flow.t_end", "must be positive"));
        }
        let mut cfg = match (f.dt, f.checkpoint_stride, f.sample_interval) {
            (None, None, interval) => {
                let interval = interval.unwrap_or(0.05);
                if !(interval > 0.0) {
                    return Err(config_err("flow.sample_interval", "must be positive"));
                }
                FlowConfig::sampled(&grid, f.cfl_safety, f.t_end, interval)
            }
            (Some(dt), Some(stride), None) => {
                if stride == 0 || stride % 2 != 0 {
                    return Err(config_err("flow.checkpoint_stride", "must be a positive even integer"));
                }
                FlowConfig { dt, checkpoint_stride: stride, ..FlowConfig::sampled(&grid, f.cfl_safety, f.t_end, 1.0) }
            }
            (Some(_), None, _) => return Err(config_err("flow.checkpoint_stride", "required when dt is given")),
            (None, Some(_), _) => return Err(config_err("flow.dt", "required when checkpoint_stride is given")),
            (Some(_), Some(_), Some(_)) => {
                return Err(config_err("flow.sample_interval", "conflicts with an explicit dt"))
            }
        };
        cfg.scheme = f.scheme;
        cfg.gauge = f.gauge;
        cfg.derivatives = f.derivatives;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Vec<f64> {
        match &self.conjugate.schedule {
            Some(s) => s.clone(),
            None => {
                let interval = self.flow_config().map(|c| c.sample_interval()).unwrap_or(1.0);
                let snap = |x: f64| (x / interval).round() * interval;
                (1..=4).map(|i| snap(self.flow.t_end * i as f64 / 4.0)).collect()
            }
        }
    }

    pub fn terminal_data(&self) -> Result<TerminalData> {
        Ok(match &self.conjugate.f_init {
            FInit::Zero => TerminalData::Zero,
            FInit::SmoothRandom { amplitude, kmax, seed } => {
                TerminalData::Field(smooth_random_field(self.grid()?, *amplitude, *kmax, *seed))
            }
        })
    }

    /// Number of recorded states, `floor(t_end / (dt · stride)) + 1`.
    pub fn checkpoint_count(&self) -> Result<usize> {
        let cfg = self.flow_config()?;
        Ok(cfg.steps() / cfg.checkpoint_stride + 1)
    }

    /// The sections that determine the recorded trajectory.
    fn run_defining(&self) -> serde_json::Value {
        serde_json::json!({
            "dimension": self.dimension,
            "grid_size": self.grid_size,
            "domain_lengths": self.domain_lengths,
            "initial_metric": self.initial_metric,
            "flow": self.flow,
        })
    }
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------------------
// Field blobs

/// `RFLB`, version byte, then little-endian `f64` values.
pub fn encode_blob(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 8 * values.len());
    out.extend_from_slice(BLOB_MAGIC);
    out.push(BLOB_VERSION);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_blob(bytes: &[u8], expected_len: usize) -> Result<Vec<f64>> {
    if bytes.len() < 5 || &bytes[..4] != BLOB_MAGIC {
        return Err(Error::Blob("bad magic".into()));
    }
    if bytes[4] != BLOB_VERSION {
        return Err(Error::Blob(format!("unsupported version {}", bytes[4])));
    }
    let body = &bytes[5..];
    if body.len() != 8 * expected_len {
        return Err(Error::Blob(format!("expected {expected_len} values, found {} bytes", body.len())));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

// ---------------------------------------------------------------------------
// Run directory plumbing

/// Per-checkpoint manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub index: usize,
    pub time: f64,
    pub step: usize,
    /// `[N; dim]` followed by `[dim, dim]`.
    pub shape: Vec<usize>,
    pub config_hash: String,
    pub blob: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckSummary {
    pub pass: bool,
    pub artifact: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub checkpoint_count: usize,
    pub final_time: f64,
    /// `sup |g(t) − g(0)|` over all checkpoints.
    pub max_metric_change: f64,
    /// `max_metric_change` and every `sup |Rm|` below `stationary_tol`.
    pub stationary: bool,
    pub stationary_tol: f64,
    pub final_sup_ric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Paths relative to the run directory, sorted.
    pub artifacts: Vec<String>,
    pub summary: RunSummary,
    pub checks: BTreeMap<String, CheckSummary>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Writes through a temporary sibling and renames, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Exclusive advisory lock, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        Self::acquire_file(&dir.join(LOCK_FILE), dir)
    }

    fn acquire_file(path: &Path, dir: &Path) -> Result<Self> {
        match fs::OpenOptions::new().write(true).create_new(true).open(path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path: path.to_path_buf() })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Short-lived lock guarding manifest updates; retries for up to ten seconds.
    fn manifest(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_LOCK_FILE);
        for _ in 0..1000 {
            match Self::acquire_file(&path, dir) {
                Err(Error::Locked(_)) => std::thread::sleep(Duration::from_millis(10)),
                other => return other,
            }
        }
        Err(Error::Locked(dir.to_path_buf()))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn checkpoint_dir(run_dir: &Path, k: usize) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("{k:06}"))
}

fn metric_shape(grid: &Grid) -> Vec<usize> {
    let n = grid.dim();
    let mut shape = vec![grid.points_per_axis(); n];
    shape.extend([n, n]);
    shape
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// A completed run loaded from disk.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub config: ExperimentConfig,
    pub config_bytes: Vec<u8>,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Opens a completed run. Refuses partial runs and active writers.
    pub fn open(path: &Path) -> Result<Self> {
        if path.join(LOCK_FILE).exists() {
            return Err(Error::Locked(path.to_path_buf()));
        }
        if path.join(PARTIAL_FILE).exists() {
            return Err(Error::PartialRun(path.to_path_buf()));
        }
        let manifest_path = path.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::PartialRun(path.to_path_buf()));
        }
        let manifest: RunManifest = read_json(&manifest_path)?;
        let (config, config_bytes) = ExperimentConfig::load(&path.join(CONFIG_FILE))?;
        if config_hash(&config_bytes) != manifest.config_hash {
            return Err(config_err(CONFIG_FILE, "hash does not match the run manifest"));
        }
        Ok(Self { path: path.to_path_buf(), config, config_bytes, manifest })
    }

    /// Replaces the analysis sections with those of `other`. The sections that
    /// define the trajectory must agree.
    pub fn override_config(&mut self, other: ExperimentConfig) -> Result<()> {
        if other.run_defining() != self.config.run_defining() {
            return Err(config_err(
                "flow",
                "override config differs from the run in grid, initial metric or flow",
            ));
        }
        self.config = other;
        Ok(())
    }

    /// Loads every checkpoint, listing all missing or unreadable ones.
    pub fn trajectory(&self) -> Result<Trajectory> {
        let cfg = self.config.flow_config()?;
        let grid = self.config.grid()?;
        let count = self.manifest.summary.checkpoint_count;
        let shape = metric_shape(&grid);
        let len = grid.len() * grid.dim() * grid.dim();
        let mut missing = vec![];
        let mut states = vec![];
        for k in 0..count {
            let dir = checkpoint_dir(&self.path, k);
            let loaded = (|| -> Result<FlowState> {
                let m: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
                if m.index != k || m.shape != shape || m.config_hash != self.manifest.config_hash {
                    return Err(Error::Blob(format!("checkpoint {k} manifest does not match the run")));
                }
                let bytes = fs::read(dir.join(&m.blob)).map_err(|e| Error::io(dir.join(&m.blob), e))?;
                let g = MetricField::new(grid, decode_blob(&bytes, len)?)?;
                let mut state = FlowState::new(g);
                state.t = m.time;
                state.step_index = m.step;
                Ok(state)
            })();
            match loaded {
                Ok(s) => states.push(s),
                Err(e) => missing.push(format!("{}: {e}", dir.display())),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingCheckpoints(missing));
        }
        Ok(Trajectory { cfg, checkpoints: states })
    }

    pub fn curvature(&self) -> Result<CurvatureSeries> {
        let path = self.path.join(CURVATURE_CSV);
        let mut r = csv::Reader::from_path(&path)?;
        let mut out = CurvatureSeries {
            dim: self.config.dimension,
            times: vec![],
            sup_riemann: vec![],
            sup_ricci: vec![],
            volume: vec![],
        };
        for row in r.records() {
            let row = row?;
            let field = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("{}: malformed row {row:?}", path.display())))
            };
            out.times.push(field(0)?);
            out.sup_riemann.push(field(2)?);
            out.sup_ricci.push(field(3)?);
            out.volume.push(field(4)?);
        }
        Ok(out)
    }

    /// Registers artifacts and check results in the manifest.
    pub fn record(&self, artifacts: &[&str], checks: &[(String, bool, &str)]) -> Result<()> {
        let _guard = RunLock::manifest(&self.path)?;
        let path = self.path.join(MANIFEST_FILE);
        let mut m: RunManifest = read_json(&path)?;
        for a in artifacts {
            if !m.artifacts.iter().any(|x| x == a) {
                m.artifacts.push(a.to_string());
            }
        }
        m.artifacts.sort();
        for (name, pass, artifact) in checks {
            m.checks.insert(name.clone(), CheckSummary { pass: *pass, artifact: artifact.to_string() });
        }
        write_json(&path, &m)
    }
}

// ---------------------------------------------------------------------------
// Reports

/// Outcome of one assertion made by a command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub pass: bool,
    pub observed: f64,
    pub threshold: f64,
    pub series_path: String,
}

impl LemmaReport {
    fn new(id: impl Into<String>, pass: bool, observed: f64, threshold: f64, series: &str) -> Self {
        Self { lemma_id: id.into(), pass, observed, threshold, series_path: series.into() }
    }
}

/// What a command wrote and whether its assertions held.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub artifacts: Vec<PathBuf>,
    pub pass: bool,
    pub summary: String,
}

fn finish(run: &RunDir, artifacts: &[&str], reports: &[LemmaReport], json_name: &str) -> Result<CommandOutcome> {
    let checks: Vec<(String, bool, &str)> = reports.iter().map(|r| (r.lemma_id.clone(), r.pass, json_name)).collect();
    run.record(artifacts, &checks)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.lemma_id.as_str()).collect();
    Ok(CommandOutcome {
        artifacts: artifacts.iter().map(|a| run.path.join(a)).collect(),
        pass: failed.is_empty(),
        summary: if failed.is_empty() {
            format!("{} checks passed", reports.len())
        } else {
            format!("{} of {} checks failed: {}", failed.len(), reports.len(), failed.join(", "))
        },
    })
}

/// Builds the global rayon pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} = {v:?} is not a positive integer")))?;
    // A pool built earlier in the process wins.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands

/// Default threshold for the stationarity summary of `run-flow`.
pub const STATIONARY_TOL: f64 = 1e-10;

/// Integrates the configured Ricci flow into `run_dir`, writing the manifest last.
pub fn cmd_run_flow(config_path: &Path, run_dir: Option<&Path>, tol: Option<f64>) -> Result<CommandOutcome> {
    let (config, bytes) = ExperimentConfig::load(config_path)?;
    let dir = run_dir
        .map(Path::to_path_buf)
        .or_else(|| config.output.run_dir.clone())
        .ok_or_else(|| config_err("output.run_dir", "no run directory given"))?;
    run_flow_into(&config, &bytes, &dir, tol.unwrap_or(STATIONARY_TOL))
}

pub fn run_flow_into(config: &ExperimentConfig, bytes: &[u8], dir: &Path, stationary_tol: f64) -> Result<CommandOutcome> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let _lock = RunLock::acquire(dir)?;
    let started = unix_now();
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let partial = dir.join(PARTIAL_FILE);
    write_atomic(&partial, b"running\n")?;
    let ckpt_root = dir.join(CHECKPOINT_DIR);
    if ckpt_root.exists() {
        fs::remove_dir_all(&ckpt_root).map_err(|e| Error::io(&ckpt_root, e))?;
    }
    write_atomic(&dir.join(CONFIG_FILE), bytes)?;
    let hash = config_hash(bytes);
    let grid = config.grid()?;
    let cfg = config.flow_config()?;
    let d = Differentiator::new(grid, cfg.derivatives);
    let g0 = config.initial_metric.build(grid)?;
    let shape = metric_shape(&grid);

    let mut rows = vec![];
    let mut index = 0;
    let mut max_change: f64 = 0.0;
    let mut max_rm: f64 = 0.0;
    let result = run_flow(&FlowState::new(g0.clone()), &cfg, |state| {
        let cdir = checkpoint_dir(dir, index);
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        write_atomic(&cdir.join(METRIC_BLOB), &encode_blob(&state.g.data))?;
        write_json(
            &cdir.join(MANIFEST_FILE),
            &CheckpointManifest {
                index,
                time: state.t,
                step: state.step_index,
                shape: shape.clone(),
                config_hash: hash.clone(),
                blob: METRIC_BLOB.into(),
            },
        )?;
        let geo = Geometry::compute(&state.g, &d)?;
        max_change = state.g.data.iter().zip(&g0.data).fold(max_change, |m, (a, b)| m.max((a - b).abs()));
        max_rm = max_rm.max(geo.sup_riemann());
        rows.push(vec![
            num(state.t),
            num(0.0 - state.t),
            num(geo.sup_riemann()),
            num(geo.sup_ricci()),
            num(geo.volume()),
        ]);
        index += 1;
        Ok(())
    });
    let states = match result {
        Ok(s) => s,
        Err(e) => {
            write_atomic(&partial, format!("failed: {e}\n").as_bytes())?;
            return Err(e);
        }
    };
    let header: Vec<String> = ["t", "t_ancient", "sup_rm", "sup_ric", "volume"].iter().map(|s| s.to_string()).collect();
    write_csv(&dir.join(CURVATURE_CSV), &header, &rows)?;

    let mut artifacts = vec![CONFIG_FILE.to_string(), CURVATURE_CSV.to_string()];
    for k in 0..states.len() {
        let rel = format!("{CHECKPOINT_DIR}/{k:06}");
        artifacts.push(format!("{rel}/{METRIC_BLOB}"));
        artifacts.push(format!("{rel}/{MANIFEST_FILE}"));
    }
    artifacts.sort();
    let expected = config.checkpoint_count()?;
    let count_ok = states.len() == expected;
    let mut checks = BTreeMap::new();
    checks.insert("checkpoint_count".to_string(), CheckSummary { pass: count_ok, artifact: CHECKPOINT_DIR.into() });
    let summary = RunSummary {
        checkpoint_count: states.len(),
        final_time: states.last().map_or(0.0, |s| s.t),
        max_metric_change: max_change,
        stationary: max_change <= stationary_tol && max_rm <= stationary_tol,
        stationary_tol,
        final_sup_ric: rows.last().and_then(|r| r[3].parse().ok()).unwrap_or(0.0),
    };
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        artifacts,
        summary,
        checks,
    };
    fs::remove_file(&partial).map_err(|e| Error::io(&partial, e))?;
    write_json(&manifest_path, &manifest)?;
    Ok(CommandOutcome {
        artifacts: vec![manifest_path],
        pass: count_ok,
        summary: format!(
            "{} checkpoints to t = {}, stationary = {}",
            manifest.summary.checkpoint_count, manifest.summary.final_time, manifest.summary.stationary
        ),
    })
}

/// Opens `run_dir`, applying an analysis override config when given.
pub fn open_run(run_dir: &Path, config: Option<&Path>) -> Result<RunDir> {
    let mut run = RunDir::open(run_dir)?;
    if let Some(p) = config {
        let (c, _) = ExperimentConfig::load(p)?;
        run.override_config(c)?;
    }
    Ok(run)
}

pub const FUNCTIONALS_CSV: &str = "functionals.csv";
pub const FUNCTIONALS_JSON: &str = "functionals.json";

/// Header of `functionals.csv` for the given `s` values.
pub fn functionals_header(s_list: &[f64]) -> Vec<String> {
    let mut h = vec!["t".to_string(), "t_ancient".into(), "lambda".into()];
    h.extend(s_list.iter().map(|&s| format!("lambda_dyn_s_{}", s_key(s))));
    h.extend(s_list.iter().map(|&s| format!("lambda_dyn_s_{}_normalized", s_key(s))));
    h.extend(
        ["lambda_dyn_inf", "lambda_dyn_inf_normalized", "rate", "sup_ric", "weighted_volume"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

pub fn functionals_rows(series: &FunctionalSeries) -> Vec<Vec<String>> {
    let absent = |v: f64| if v.is_nan() { String::new() } else { num(v) };
    series
        .records
        .iter()
        .map(|r| {
            let mut row = vec![num(r.t), num(0.0 - r.t), num(r.lambda)];
            row.extend(series.s_list.iter().map(|&s| opt(r.lambda_dyn_s.get(&s_key(s)).copied())));
            row.extend(series.s_list.iter().map(|&s| opt(r.lambda_dyn_s_normalized.get(&s_key(s)).copied())));
            row.push(opt(r.lambda_dyn_inf));
            row.push(opt(r.lambda_dyn_inf_normalized));
            row.push(absent(r.variation_rate));
            row.push(num(r.sup_ric));
            row.push(absent(r.weighted_volume));
            row
        })
        .collect()
}

/// Slack of the monotonicity check per recorded step.
pub const MONOTONICITY_SLACK: f64 = 1e-7;
pub const RATE_REL_TOL: f64 = 0.05;
pub const RATE_ABS_TOL: f64 = 1e-6;
pub const RATE_MIN_FRACTION: f64 = 0.95;
pub const LOWER_BOUND_SLACK: f64 = 1e-6;
pub const VOLUME_DRIFT_TOL: f64 = 1e-6;

/// The assertions made on a functional series.
pub fn functional_reports(series: &FunctionalSeries, tol: Option<f64>, csv_name: &str) -> Result<Vec<LemmaReport>> {
    let mut out = vec![];
    for ds in &series.dynamical[..series.s_list.len()] {
        let key = s_key(ds.s);
        let inc = ds.min_increment();
        out.push(LemmaReport::new(
            format!("monotonicity[s={key}]"),
            inc >= -MONOTONICITY_SLACK,
            inc,
            -MONOTONICITY_SLACK,
            csv_name,
        ));
        let rate = ds.rate_identity(RATE_REL_TOL, RATE_ABS_TOL);
        out.push(LemmaReport::new(
            format!("rate_identity[s={key}]"),
            rate.samples > 0 && rate.fraction >= RATE_MIN_FRACTION,
            rate.fraction,
            RATE_MIN_FRACTION,
            csv_name,
        ));
        if ds.s > ds.points[0].t {
            let rig = check_rigidity(ds, ds.points[0].t, ds.s, RATE_REL_TOL)?;
            out.push(LemmaReport::new(
                format!("rigidity[s={key}]"),
                rig.pass,
                (rig.lhs - rig.rhs).abs(),
                rig.tolerance,
                csv_name,
            ));
        }
        let drift = ds.weighted_volume_drift();
        out.push(LemmaReport::new(
            format!("weighted_volume[s={key}]"),
            drift <= VOLUME_DRIFT_TOL,
            drift,
            VOLUME_DRIFT_TOL,
            csv_name,
        ));
    }
    let slack = tol.unwrap_or(LOWER_BOUND_SLACK);
    let margin = series
        .records
        .iter()
        .filter_map(|r| r.lambda_dyn_inf_normalized.map(|v| v - r.lambda))
        .fold(f64::INFINITY, f64::min);
    out.push(LemmaReport::new("lower_bound", margin >= -slack, margin, -slack, csv_name));
    let violations = series
        .infinity
        .iter()
        .filter(|li| li.gaps.windows(2).any(|w| w[1] > w[0]))
        .count();
    out.push(LemmaReport::new("cauchy_gaps_decrease", violations == 0, violations as f64, 0.0, csv_name));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct FunctionalsJson<'a> {
    schedule: &'a [f64],
    converged: Vec<bool>,
    lambda_residual_max: f64,
    reports: &'a [LemmaReport],
}

/// λ, λ^s_dyn and λ^∞_dyn along a completed run.
pub fn cmd_functionals(run: &RunDir, tol: Option<f64>) -> Result<CommandOutcome> {
    let traj = run.trajectory()?;
    let c = &run.config;
    let series = functional_series_from(
        &traj,
        &c.conjugate.s_list,
        &c.schedule(),
        c.conjugate.cauchy_tol,
        &c.terminal_data()?,
    )?;
    write_csv(
        &run.path.join(FUNCTIONALS_CSV),
        &functionals_header(&series.s_list),
        &functionals_rows(&series),
    )?;
    let reports = functional_reports(&series, tol, FUNCTIONALS_CSV)?;
    write_json(
        &run.path.join(FUNCTIONALS_JSON),
        &FunctionalsJson {
            schedule: &series.schedule,
            converged: series.infinity.iter().map(|li| li.converged).collect(),
            lambda_residual_max: series.lambda_residual_max,
            reports: &reports,
        },
    )?;
    finish(run, &[FUNCTIONALS_CSV, FUNCTIONALS_JSON], &reports, FUNCTIONALS_JSON)
}

pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const SPECTRUM_JSON: &str = "spectrum_bounds.json";

pub fn spectrum_header(k_max: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "t_ancient".into()];
    h.extend((1..=k_max).map(|k| format!("lambda_{k}")));
    h.push("residual_max".into());
    h
}

pub fn spectrum_rows(series: &SpectrumSeries) -> Vec<Vec<String>> {
    (0..series.times.len())
        .map(|i| {
            let mut row = vec![num(series.times[i]), num(0.0 - series.times[i])];
            row.extend(series.eigenvalues[i].iter().map(|&v| num(v)));
            row.push(num(series.residuals[i]));
            row
        })
        .collect()
}

/// The conjugate flow of the coupled run: started at `t_end` from the configured datum.
pub fn coupled_flow(run: &RunDir, traj: &Trajectory) -> Result<ConjugateFlow> {
    let t_end = traj.checkpoints.last().expect("non-empty").t;
    let c = &run.config;
    Ok(conjugate_sweep(traj, &[t_end], &c.terminal_data()?, c.conjugate.form)?.remove(0))
}

#[derive(Debug, Serialize)]
struct SpectrumJson<'a> {
    bounds: &'a [BoundReport],
    differential: &'a [DifferentialReport],
    reports: &'a [LemmaReport],
}

/// Drift spectrum along the coupled run, with the eigenvalue bound checked for every `k`.
pub fn cmd_spectrum(run: &RunDir, tol: Option<f64>) -> Result<CommandOutcome> {
    let traj = run.trajectory()?;
    let sp = &run.config.spectral;
    let mut flow = coupled_flow(run, &traj)?;
    flow.samples.retain(|s| s.checkpoint % sp.sample_stride == 0);
    let series = crate::spectral::spectrum_series(&traj, &flow, sp.k_max)?;
    series.validate()?;
    write_csv(&run.path.join(SPECTRUM_CSV), &spectrum_header(sp.k_max), &spectrum_rows(&series))?;
    let allowance = tol.unwrap_or(sp.allowance);
    let t0 = series.times[0];
    let mut bounds = vec![];
    let mut diffs = vec![];
    let mut reports = vec![];
    for k in 1..=sp.k_max {
        let b = eigenvalue_bound_check(&series, k, t0, allowance)?;
        reports.push(LemmaReport::new(format!("eigenvalue_bound[k={k}]"), b.pass, b.min_margin, -b.tolerance, SPECTRUM_CSV));
        bounds.push(b);
        let dr = differential_inequality_check(&series, k, allowance)?;
        let worst = dr.samples.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min);
        reports.push(LemmaReport::new(format!("differential[k={k}]"), dr.pass, worst, 0.0, SPECTRUM_CSV));
        diffs.push(dr);
    }
    write_json(
        &run.path.join(SPECTRUM_JSON),
        &SpectrumJson { bounds: &bounds, differential: &diffs, reports: &reports },
    )?;
    finish(run, &[SPECTRUM_CSV, SPECTRUM_JSON], &reports, SPECTRUM_JSON)
}

pub const IDENTITIES_JSON: &str = "identities.json";

#[derive(Debug, Serialize)]
struct IdentitiesJson<'a> {
    setup: &'a StudySetup,
    pass: bool,
    reports: &'a [IdentityReport],
}

/// Refinement studies of the evolution identities.
pub fn cmd_verify_identities(run: &RunDir) -> Result<CommandOutcome> {
    let setup = run.config.identities.clone().unwrap_or_default();
    let reports = verify_all(&setup)?;
    let pass = reports.iter().all(|r| r.pass);
    write_json(&run.path.join(IDENTITIES_JSON), &IdentitiesJson { setup: &setup, pass, reports: &reports })?;
    let checks: Vec<(String, bool, &str)> =
        reports.iter().map(|r| (format!("identity[{}]", r.identity_id), r.pass, IDENTITIES_JSON)).collect();
    run.record(&[IDENTITIES_JSON], &checks)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.identity_id.as_str()).collect();
    Ok(CommandOutcome {
        artifacts: vec![run.path.join(IDENTITIES_JSON)],
        pass,
        summary: if pass {
            format!("{} identities verified", reports.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    })
}

/// Quantity analysed by `fit-decay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayQuantity {
    SupRic,
    SupRm,
    Volume,
    ConjugateBounds,
}

impl DecayQuantity {
    pub fn name(self) -> &'static str {
        match self {
            DecayQuantity::SupRic => "sup_ric",
            DecayQuantity::SupRm => "sup_rm",
            DecayQuantity::Volume => "volume",
            DecayQuantity::ConjugateBounds => "conjugate_bounds",
        }
    }
}

impl std::str::FromStr for DecayQuantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sup_ric" => DecayQuantity::SupRic,
            "sup_rm" => DecayQuantity::SupRm,
            "volume" => DecayQuantity::Volume,
            "conjugate_bounds" => DecayQuantity::ConjugateBounds,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown quantity {s:?} (sup_ric, sup_rm, volume, conjugate_bounds)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayJson {
    pub quantity: DecayQuantity,
    pub power: Option<DecayFit>,
    pub exponential: Option<DecayFit>,
    /// Model with the larger `r²`.
    pub selected: Option<DecayModel>,
    /// Largest increase between consecutive samples after burn-in.
    pub max_increase_after_burn_in: Option<f64>,
    pub implied_theta: Option<f64>,
    pub details: serde_json::Value,
    pub reports: Vec<LemmaReport>,
}

/// Largest `y[i+1] − y[i]` over samples after the burn-in fraction.
pub fn max_increase_after(y: &[f64], burn_in: f64) -> f64 {
    let start = (burn_in * y.len() as f64).floor() as usize;
    y[start..].windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn decay_fits(t: &[f64], y: &[f64], burn_in: f64) -> (Option<DecayFit>, Option<DecayFit>, Option<DecayModel>) {
    let pos: Vec<(f64, f64)> = t.iter().zip(y).filter(|(t, _)| **t > 0.0).map(|(a, b)| (*a, *b)).collect();
    let (ts, ys): (Vec<f64>, Vec<f64>) = pos.into_iter().unzip();
    let power = fit_decay(&ts, &ys, DecayModel::Power, burn_in).ok();
    let exponential = fit_decay(&ts, &ys, DecayModel::Exponential, burn_in).ok();
    let selected = match (&power, &exponential) {
        (Some(p), Some(e)) => Some(if e.r_squared > p.r_squared { DecayModel::Exponential } else { DecayModel::Power }),
        (Some(_), None) => Some(DecayModel::Power),
        (None, Some(_)) => Some(DecayModel::Exponential),
        (None, None) => None,
    };
    (power, exponential, selected)
}

pub fn decay_json_name(q: DecayQuantity) -> String {
    format!("fit_decay_{}.json", q.name())
}

/// Decay fits and the a-priori estimates of the recorded run.
pub fn cmd_fit_decay(run: &RunDir, quantity: DecayQuantity, tol: Option<f64>) -> Result<CommandOutcome> {
    let c = &run.config;
    let curv = run.curvature()?;
    let json_name = decay_json_name(quantity);
    let burn_in = c.decay.burn_in;
    let mut out = DecayJson {
        quantity,
        power: None,
        exponential: None,
        selected: None,
        max_increase_after_burn_in: None,
        implied_theta: None,
        details: serde_json::Value::Null,
        reports: vec![],
    };
    match quantity {
        DecayQuantity::SupRic | DecayQuantity::SupRm => {
            let y = if quantity == DecayQuantity::SupRic { &curv.sup_ricci } else { &curv.sup_riemann };
            let (p, e, sel) = decay_fits(&curv.times, y, burn_in);
            let inc = max_increase_after(y, burn_in);
            let slack = tol.unwrap_or(0.0);
            out.reports.push(LemmaReport::new(
                format!("{}_monotone_after_burn_in", quantity.name()),
                inc <= slack,
                inc,
                slack,
                CURVATURE_CSV,
            ));
            out.implied_theta = p.map(|f| crate::estimates::theta_of_beta(f.exponent_or_rate));
            if let (Some(arf), DecayQuantity::SupRm) = (&c.arf_params, quantity) {
                if let (Some(&c0), Some(&t0)) = (arf.c_k.first(), arf.t_k.first()) {
                    let params = ArfParams::new(arf.theta, arf.c_k.clone(), arf.t_k.clone())?;
                    let worst = curv
                        .times
                        .iter()
                        .zip(y)
                        .filter(|(t, _)| **t >= t0 && **t > 0.0)
                        .map(|(t, v)| v - c0 * t.powf(-params.beta.min(1e300)))
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.reports.push(LemmaReport::new("curvature_decay_bound", worst <= 0.0, worst, 0.0, CURVATURE_CSV));
                }
            }
            out.power = p;
            out.exponential = e;
            out.selected = sel;
            out.max_increase_after_burn_in = Some(inc);
        }
        DecayQuantity::Volume => {
            let t_transition = c.decay.t_transition.unwrap_or(c.flow.t_end / 4.0);
            let cutoff = fit_cutoff(&curv, t_transition)?;
            let report = volume_check(&curv, &cutoff)?;
            out.reports.push(LemmaReport::new(
                "volume_bounded",
                report.pass,
                report.max_volume,
                report.bound,
                CURVATURE_CSV,
            ));
            out.details = serde_json::to_value(&report)?;
        }
        DecayQuantity::ConjugateBounds => {
            let traj = run.trajectory()?;
            let flows = conjugate_sweep(&traj, &c.conjugate.s_list, &c.terminal_data()?, c.conjugate.form)?;
            let report = conjugate_bounds_check(&traj, &flows)?;
            out.reports.push(LemmaReport::new(
                "conjugate_lower_bound",
                report.lower_bound_pass,
                report.min_f,
                -crate::estimates::LOWER_BOUND_TOL,
                &json_name,
            ));
            let spread = report.spreads.iter().copied().fold(0.0, f64::max);
            let limit = tol.unwrap_or(crate::estimates::SPREAD_TOL);
            out.reports.push(LemmaReport::new(
                "conjugate_uniform_in_s",
                spread <= limit,
                spread,
                limit,
                &json_name,
            ));
            out.details = serde_json::to_value(&report)?;
        }
    }
    write_json(&run.path.join(&json_name), &out)?;
    finish(run, &[&json_name], &out.reports, &json_name)
}

pub const GAUSSIAN_TOL: f64 = 1e-12;

pub fn gaussian_header() -> Vec<String> {
    ["t", "u", "lambda_1", "bound", "abs_diff"].iter().map(|s| s.to_string()).collect()
}

/// Rows of the Gaussian sharpness table and the largest `|λ_1 − bound|`.
pub fn gaussian_rows(ex: &GaussianExample, samples: usize) -> Result<(Vec<Vec<String>>, f64)> {
    let (a, b) = ex.horizon();
    let mut worst: f64 = 0.0;
    let rows = (0..samples)
        .map(|i| {
            let t = a + (b - a) * i as f64 / samples as f64;
            let (l, rhs) = gaussian_example_eval(ex, t)?;
            let diff = (l - rhs).abs();
            worst = worst.max(diff);
            Ok(vec![num(t), num(ex.u(t)?), num(l), num(rhs), num(diff)])
        })
        .collect::<Result<_>>()?;
    Ok((rows, worst))
}

/// Writes the sharpness table of the shrinking Gaussian to `out`.
pub fn cmd_gaussian(n: usize, u0: f64, t0: f64, samples: usize, out: &Path, tol: Option<f64>) -> Result<CommandOutcome> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let ex = GaussianExample::new(n, u0, t0)?;
    let (rows, worst) = gaussian_rows(&ex, samples)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_csv(out, &gaussian_header(), &rows)?;
    let tol = tol.unwrap_or(GAUSSIAN_TOL);
    Ok(CommandOutcome {
        artifacts: vec![out.to_path_buf()],
        pass: worst <= tol,
        summary: format!("max |lambda_1 - bound| = {worst:e} over {samples} samples (tolerance {tol:e})"),
    })
}
