//! Config-driven sweeps: every (guidance, lambda, seed, condition) cell is
//! sampled, scored and written as one [`MetricsRecord`] row.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::conditioning::{sample_target, ConditionPair, Factor, TaskSpec};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceSpec, WeightSchedule};
use crate::metrics::{adherence, energy_distance, write_records, CellStatus, MetricsRecord};
use crate::model::VelocityModel;
use crate::neural::{MlpModel, TrainConfig};
use crate::numerics::{fnv1a, Rng, Vector};
use crate::oracle::OracleModel;
use crate::sampler::{sample_batch, Method};
use crate::schedule::{make_grid, GridParams, TimeGrid};

pub const CONFIG_VERSION: u32 = 1;

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_samples() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("results.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Oracle,
    Checkpoint { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "config_version")]
    pub format_version: u32,
    #[serde(default)]
    pub task: TaskSpec,
    pub model: ModelSource,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub method: Method,
    pub guidance: Vec<GuidanceSpec>,
    /// Overrides each guidance entry's weight when present; see
    /// [`with_lambda`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_samples")]
    pub samples_per_cell: usize,
    /// `[a, b]` pairs; every pair of the task when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Vec<[usize; 2]>>,
    /// Energy distance against fresh target draws costs O(n^2) per cell.
    #[serde(default = "default_true")]
    pub energy_distance: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn new(model: ModelSource, guidance: Vec<GuidanceSpec>) -> Self {
        Self {
            format_version: CONFIG_VERSION,
            task: TaskSpec::default(),
            model,
            grid: GridParams::default(),
            method: Method::Euler,
            guidance,
            lambdas: None,
            seeds: default_seeds(),
            samples_per_cell: default_samples(),
            conditions: None,
            energy_distance: true,
            output: default_output(),
        }
    }

    /// Reads a config; a relative checkpoint path is resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if let ModelSource::Checkpoint { path: ck } = &mut cfg.model {
            if ck.is_relative() {
                if let Some(dir) = path.parent() {
                    *ck = dir.join(&*ck);
                }
            }
        }
        Ok(cfg)
    }

    pub fn conditions(&self) -> Vec<ConditionPair> {
        match &self.conditions {
            Some(list) => list.iter().map(|&[a, b]| ConditionPair::both(a, b)).collect(),
            None => self.task.all_conditions(),
        }
    }

    /// Checks everything except the model source.
    pub fn validate_shape(&self) -> Result<()> {
        if self.format_version != CONFIG_VERSION {
            return Err(config(format!("unsupported format_version {}", self.format_version)));
        }
        self.task.validate().map_err(|e| config(e.to_string()))?;
        self.grid.build().map_err(|e| config(e.to_string()))?;
        if self.guidance.is_empty() {
            return Err(config("guidance list is empty"));
        }
        for g in &self.guidance {
            g.validate().map_err(|e| config(e.to_string()))?;
        }
        if let Some(lambdas) = &self.lambdas {
            if lambdas.is_empty() {
                return Err(config("lambdas list is empty"));
            }
            if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return Err(config("lambdas must be finite and non-negative"));
            }
        }
        if self.seeds.is_empty() {
            return Err(config("seeds list is empty"));
        }
        if self.samples_per_cell == 0 {
            return Err(config("samples_per_cell must be positive"));
        }
        let conds = self.conditions();
        if conds.is_empty() {
            return Err(config("conditions list is empty"));
        }
        for c in &conds {
            self.task.check_condition(c).map_err(|e| config(e.to_string()))?;
        }
        Ok(())
    }

    /// Full validation, including that a checkpoint exists and matches the
    /// task.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        self.load_model().map(|_| ())
    }

    pub fn load_model(&self) -> Result<Box<dyn VelocityModel>> {
        match &self.model {
            ModelSource::Oracle => Ok(Box::new(OracleModel::new(self.task.clone())?)),
            ModelSource::Checkpoint { path } => {
                let ck = Checkpoint::load(path)
                    .map_err(|e| config(format!("cannot read checkpoint {}: {e}", path.display())))?;
                if ck.task != self.task {
                    return Err(config(format!("checkpoint {} was trained on a different task", path.display())));
                }
                let model: MlpModel = ck.to_model().map_err(|e| config(e.to_string()))?;
                Ok(Box::new(model))
            }
        }
    }

    /// Hex SHA-256 of the config (output path excluded) and, for a
    /// checkpoint model, the checkpoint bytes.
    pub fn fingerprint(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        if let ModelSource::Checkpoint { path } = &mut canonical.model {
            *path = PathBuf::new();
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical)?);
        if let ModelSource::Checkpoint { path } = &self.model {
            h.update(std::fs::read(path)?);
        }
        Ok(hex::encode(&h.finalize()[..8]))
    }

    /// Cells in canonical order: guidance entry, lambda, seed, condition.
    pub fn cells(&self) -> Vec<Cell> {
        let conds = self.conditions();
        let mut cells = Vec::new();
        for g in &self.guidance {
            let lambdas = match &self.lambdas {
                Some(l) => l.iter().map(|&l| Some(l)).collect(),
                None => vec![None],
            };
            for lam in lambdas {
                let guidance = match lam {
                    Some(l) => with_lambda(g, l),
                    None => g.clone(),
                };
                let lambda = lam.unwrap_or_else(|| nominal_lambda(g));
                for &seed in &self.seeds {
                    for &cond in &conds {
                        cells.push(Cell { guidance: guidance.clone(), lambda, seed, cond });
                    }
                }
            }
        }
        cells
    }
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Sets the sweep weight of a guidance entry. Single-weight strategies take
/// it as `lambda` (a linear schedule is scaled by it instead); separated
/// strategies take it as `lambda_spk`, keeping `lambda_text`.
pub fn with_lambda(spec: &GuidanceSpec, lambda: f64) -> GuidanceSpec {
    let mut g = spec.clone();
    if g.strategy.is_separated() {
        g.lambda_spk = lambda;
        return g;
    }
    g.lambda = lambda;
    g.schedule = match g.schedule {
        WeightSchedule::Constant => WeightSchedule::Constant,
        WeightSchedule::Linear { w0, w1 } => WeightSchedule::Linear { w0: lambda * w0, w1: lambda * w1 },
        WeightSchedule::LinearClamped { w0, w1, w_min } => {
            WeightSchedule::LinearClamped { w0: lambda * w0, w1: lambda * w1, w_min: lambda * w_min }
        }
    };
    g
}

fn nominal_lambda(spec: &GuidanceSpec) -> f64 {
    if spec.strategy.is_separated() {
        spec.lambda_spk
    } else {
        spec.lambda
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub guidance: GuidanceSpec,
    pub lambda: f64,
    pub seed: u64,
    pub cond: ConditionPair,
}

impl Cell {
    /// Seed for the cell's noise, independent of its position in the sweep.
    pub fn rng(&self) -> Rng {
        let (a, b) = (self.cond.a.unwrap_or(usize::MAX), self.cond.b.unwrap_or(usize::MAX));
        Rng::new(self.seed)
            .split(fnv1a(self.guidance.strategy.name().as_bytes()))
            .split(self.lambda.to_bits())
            .split(((a as u64) << 32) ^ b as u64)
    }

    /// Seed for the target draws the cell is compared against; shared by all
    /// cells with the same seed and condition.
    pub fn reference_rng(&self) -> Rng {
        let (a, b) = (self.cond.a.unwrap_or(usize::MAX), self.cond.b.unwrap_or(usize::MAX));
        Rng::new(self.seed).split_str("reference").split(((a as u64) << 32) ^ b as u64)
    }
}

/// Builds the grid for a guidance entry; a nonzero zero-init overrides the
/// grid's own truncation.
pub fn guided_grid(params: &GridParams, guidance: &GuidanceSpec) -> Result<TimeGrid> {
    let tz = if guidance.zero_init > 0.0 { guidance.zero_init } else { params.tz };
    make_grid(params.kind, params.n_steps, tz)
}

/// Runs one cell. Integration failures produce a `failed` row; any other
/// error is returned.
pub fn run_cell<M: VelocityModel + ?Sized>(
    cfg: &ExperimentConfig,
    model: &M,
    cell: &Cell,
    fingerprint: &str,
) -> Result<MetricsRecord> {
    let grid = guided_grid(&cfg.grid, &cell.guidance)?;
    let tz = grid.tz();
    let g = &cell.guidance;
    let mut record = MetricsRecord {
        strategy: g.strategy.name().to_string(),
        lambda: cell.lambda,
        lambda_text: g.lambda_text,
        lambda_spk: g.lambda_spk,
        t_threshold: g.t_threshold,
        n_steps: cfg.grid.n_steps,
        seed: cell.seed,
        adherence_a: None,
        adherence_b: None,
        energy_distance: None,
        n_samples: cfg.samples_per_cell,
        eval_count: 0,
        tz,
        cond_a: cell.cond.a.unwrap_or(0),
        cond_b: cell.cond.b.unwrap_or(0),
        status: CellStatus::Failed,
        fingerprint: fingerprint.to_string(),
    };
    let mut rng = cell.rng();
    let out = match sample_batch(model, &cell.cond, &grid, g, &mut rng, cfg.method, cfg.samples_per_cell, false) {
        Ok(out) => out,
        Err(Error::IntegrationFailure { .. }) => return Ok(record),
        Err(e) => return Err(e),
    };
    record.eval_count = out.eval_count;
    record.adherence_a = Some(adherence(&out.samples, &cfg.task, &cell.cond, Factor::A)?);
    record.adherence_b = Some(adherence(&out.samples, &cfg.task, &cell.cond, Factor::B)?);
    if cfg.energy_distance {
        let mut rr = cell.reference_rng();
        let reference: Vec<Vector> =
            (0..cfg.samples_per_cell).map(|_| sample_target(&cfg.task, &cell.cond, &mut rr)).collect::<Result<_>>()?;
        record.energy_distance = Some(energy_distance(&out.samples, &reference)?);
    }
    record.status = CellStatus::Ok;
    Ok(record)
}

/// Runs every cell on up to `jobs` threads. Rows come back in canonical cell
/// order regardless of scheduling.
pub fn run_cells<M: VelocityModel + ?Sized>(
    cfg: &ExperimentConfig,
    model: &M,
    fingerprint: &str,
    jobs: usize,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate_shape()?;
    let cells = cfg.cells();
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<(usize, Result<MetricsRecord>)>> = Mutex::new(Vec::with_capacity(cells.len()));
    let workers = jobs.clamp(1, cells.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let row = run_cell(cfg, model, cell, fingerprint);
                rows.lock().expect("row lock").push((i, row));
            });
        }
    });
    let mut rows = rows.into_inner().expect("row lock");
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter().map(|(_, r)| r).collect()
}

/// Validates the config, loads its model, runs the sweep and writes the CSV
/// to `cfg.output`.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<MetricsRecord>> {
    cfg.validate_shape()?;
    let model = cfg.load_model()?;
    let fingerprint = cfg.fingerprint()?;
    let rows = run_cells(cfg, model.as_ref(), &fingerprint, jobs)?;
    let file = std::fs::File::create(&cfg.output)?;
    write_records(&rows, std::io::BufWriter::new(file))?;
    Ok(rows)
}

/// Config for the `train` command: a task and its optimizer settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    #[serde(default = "config_version")]
    pub format_version: u32,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

impl TrainRunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cfg.format_version != CONFIG_VERSION {
            return Err(config(format!("unsupported format_version {}", cfg.format_version)));
        }
        Ok(cfg)
    }
}

fn default_condition() -> [usize; 2] {
    [0, 0]
}

fn default_sample_count() -> usize {
    1000
}

/// Config for the `sample` and `probe` commands: one guidance spec and one
/// condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    #[serde(default = "config_version")]
    pub format_version: u32,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default = "oracle_source")]
    pub model: ModelSource,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "GuidanceSpec::none")]
    pub guidance: GuidanceSpec,
    #[serde(default = "default_condition")]
    pub condition: [usize; 2],
    #[serde(default = "default_sample_count")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn oracle_source() -> ModelSource {
    ModelSource::Oracle
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            task: TaskSpec::default(),
            model: ModelSource::Oracle,
            grid: GridParams::default(),
            method: Method::Euler,
            guidance: GuidanceSpec::none(),
            condition: default_condition(),
            n_samples: default_sample_count(),
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let ModelSource::Checkpoint { path: ck } = &mut cfg.model {
            if ck.is_relative() {
                if let Some(dir) = path.parent() {
                    *ck = dir.join(&*ck);
                }
            }
        }
        Ok(cfg)
    }

    /// The equivalent single-cell sweep config, used for validation and
    /// model loading.
    pub fn as_experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            task: self.task.clone(),
            grid: self.grid,
            method: self.method,
            seeds: vec![self.seed],
            samples_per_cell: self.n_samples,
            conditions: Some(vec![self.condition]),
            ..ExperimentConfig::new(self.model.clone(), vec![self.guidance.clone()])
        }
    }

    pub fn condition(&self) -> ConditionPair {
        ConditionPair::both(self.condition[0], self.condition[1])
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        guided_grid(&self.grid, &self.guidance)
    }
}
