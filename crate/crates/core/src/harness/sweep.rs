//! Cross-product experiments over models, fairness weights, budgets and seeds.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_stats, load_csv, synth_generate, CsvSchema, Dataset, DatasetStats, SynthParams};
use crate::error::{Error, Result};
use crate::model::RobustModel;
use crate::objective::TradeoffConfig;
use crate::rankone_defense::RankOneOptions;

use super::evaluate::{evaluate_under_attack, fit_model, AttackScheme, ModelKind};

/// Stated in every report: each model faces the attack optimized against its own coefficients.
pub const PROTOCOL: &str = "each model, robust or baseline, is evaluated against the attack optimized for its own coefficients";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Option<CsvSchemaConfig>,
        #[serde(default)]
        standardize: bool,
    },
    /// Synthetic data; each sweep seed replaces `params.seed`.
    Synth { params: SynthParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchemaConfig {
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default = "default_group")]
    pub group: String,
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

fn default_target() -> String {
    "target".into()
}

fn default_group() -> String {
    "group".into()
}

impl From<&CsvSchemaConfig> for CsvSchema {
    fn from(c: &CsvSchemaConfig) -> Self {
        CsvSchema {
            target: c.target.clone(),
            group: c.group.clone(),
            features: c.features.clone(),
        }
    }
}

/// How `eta_levels` are turned into budgets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    Absolute,
    /// Multiples of the mean row energy.
    EtaD,
    /// Multiples of the smallest singular value of the features.
    Sigma,
    /// Multiples of the point-attack budget threshold.
    EtaMin,
}

impl EtaMode {
    pub fn scale(self, stats: &DatasetStats) -> f64 {
        match self {
            EtaMode::Absolute => 1.0,
            EtaMode::EtaD => stats.eta_d,
            EtaMode::Sigma => stats.sigma_min,
            EtaMode::EtaMin => stats.eta_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub lambda_grid: Vec<f64>,
    pub eta_mode: EtaMode,
    pub eta_levels: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub scheme: AttackScheme,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_csv: Option<PathBuf>,
    #[serde(default)]
    pub output_json: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Coefficient radius for the rank-one defense.
    #[serde(default)]
    pub b_beta: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.eta_levels.is_empty() || self.models.is_empty() || self.seeds.is_empty() {
            return Err(Error::validation("lambda_grid, eta_levels, models and seeds must be nonempty"));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::validation(format!("lambda must be >= 0, got {l}")));
        }
        if let Some(e) = self.eta_levels.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::validation(format!("eta levels must be > 0, got {e}")));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers must be positive"));
        }
        if let DatasetSource::Synth { params } = &self.dataset {
            params.validate()?;
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_reader(file).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One `(model, λ, η, seed)` cell. Metric fields are `NaN` when `error` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub lambda: f64,
    pub eta_level: f64,
    pub eta: f64,
    pub seed: u64,
    pub mse_clean: f64,
    pub gap_clean: f64,
    pub r2_clean: f64,
    pub mse_poisoned: f64,
    pub gap_poisoned: f64,
    pub r2_poisoned: f64,
    pub attack_id: String,
    pub attack_value: f64,
    pub attack_reproduced: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellDetail {
    pub row: ReportRow,
    pub model: Option<RobustModel>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub protocol: String,
    pub config: ExperimentConfig,
    pub stats: Vec<(u64, DatasetStats)>,
    pub cells: Vec<CellDetail>,
}

impl Report {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.cells.iter().map(|c| &c.row)
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<report writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv_to(file)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

pub fn load_dataset(source: &DatasetSource, seed: u64) -> Result<Dataset> {
    match source {
        DatasetSource::Csv {
            path,
            schema,
            standardize,
        } => {
            let schema = schema.as_ref().map(CsvSchema::from).unwrap_or_default();
            let ds = load_csv(path, &schema)?;
            Ok(if *standardize { ds.standardized() } else { ds })
        }
        DatasetSource::Synth { params } => {
            let mut p = params.clone();
            p.seed = seed;
            synth_generate(&p)
        }
    }
}

struct Cell {
    model: ModelKind,
    lambda: f64,
    eta_level: f64,
    seed_index: usize,
}

fn run_cell(cell: &Cell, ds: &Dataset, stats: &DatasetStats, cfg: &ExperimentConfig) -> CellDetail {
    let seed = cfg.seeds[cell.seed_index];
    let eta = cell.eta_level * cfg.eta_mode.scale(stats);
    let mut row = ReportRow {
        model: cell.model,
        lambda: cell.lambda,
        eta_level: cell.eta_level,
        eta,
        seed,
        mse_clean: f64::NAN,
        gap_clean: f64::NAN,
        r2_clean: f64::NAN,
        mse_poisoned: f64::NAN,
        gap_poisoned: f64::NAN,
        r2_poisoned: f64::NAN,
        attack_id: String::new(),
        attack_value: f64::NAN,
        attack_reproduced: false,
        error: None,
    };
    let opts = RankOneOptions {
        b_beta: cfg.b_beta,
        seed,
        ..RankOneOptions::default()
    };
    let outcome = TradeoffConfig::new(cell.lambda, eta).and_then(|tc| {
        let model = fit_model(cell.model, ds, &tc, &opts)?;
        let ev = evaluate_under_attack(&model.beta, ds, &tc, cfg.scheme)?;
        Ok((model, ev))
    });
    match outcome {
        Ok((model, ev)) => {
            row.mse_clean = ev.clean.mse;
            row.gap_clean = ev.clean.gap;
            row.r2_clean = ev.clean.r2;
            row.mse_poisoned = ev.poisoned.mse;
            row.gap_poisoned = ev.poisoned.gap;
            row.r2_poisoned = ev.poisoned.r2;
            row.attack_id = ev.certificate.attack_id;
            row.attack_value = ev.certificate.poisoned_value;
            row.attack_reproduced = ev.certificate.reproduced;
            if !ev.certificate.reproduced {
                row.error = Some(format!(
                    "attack value {} not reproduced on poisoned data ({})",
                    ev.certificate.claimed_value, ev.certificate.poisoned_value
                ));
            }
            CellDetail { row, model: Some(model) }
        }
        Err(e) => {
            warn!("cell {} λ={} η={} seed={} failed: {e}", cell.model, cell.lambda, eta, seed);
            row.error = Some(e.to_string());
            CellDetail { row, model: None }
        }
    }
}

/// Runs every cell; failing cells are recorded and the sweep continues.
///
/// Rows are ordered seed, model, λ, η regardless of the worker count, and
/// written to the configured outputs.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let datasets: Vec<Dataset> = cfg
        .seeds
        .iter()
        .map(|&s| load_dataset(&cfg.dataset, s))
        .collect::<Result<_>>()?;
    let stats: Vec<DatasetStats> = datasets.iter().map(compute_stats).collect();
    let mut cells = Vec::new();
    for seed_index in 0..cfg.seeds.len() {
        for &model in &cfg.models {
            for &lambda in &cfg.lambda_grid {
                for &eta_level in &cfg.eta_levels {
                    cells.push(Cell {
                        model,
                        lambda,
                        eta_level,
                        seed_index,
                    });
                }
            }
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Solver(format!("thread pool: {e}")))?;
    let details: Vec<CellDetail> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(c, &datasets[c.seed_index], &stats[c.seed_index], cfg))
            .collect()
    });
    let report = Report {
        protocol: PROTOCOL.into(),
        config: cfg.clone(),
        stats: cfg.seeds.iter().copied().zip(stats).collect(),
        cells: details,
    };
    if let Some(p) = &cfg.output_csv {
        report.write_csv(p)?;
    }
    if let Some(p) = &cfg.output_json {
        report.write_json(p)?;
    }
    Ok(report)
}
