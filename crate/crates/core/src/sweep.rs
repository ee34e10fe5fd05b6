//! Hyperparameter grids: train every grid point, evaluate it with link
//! prediction and clustering, and correlate the two across the grid.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cep::{evaluate_cep, ClusterConfig, ClusterReport, KMeansInit};
use crate::kg::{derive_labels, read_dataset, KgError, KnowledgeGraph, LabelMap, Split};
use crate::lp::{evaluate_lp, CandidateScope, FilterMode, LpConfig, LpReport, Sides};
use crate::model::ModelKind;
use crate::stats::{correlate, Coefficient, MetricSeries, StatsError};
use crate::train::{save_model, train, ModelSidecar, TrainConfig};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("cannot parse sweep spec {path}: {message}")]
    Spec { path: String, message: String },
    #[error("invalid sweep spec: {0}")]
    Invalid(String),
    #[error("dataset: {0}")]
    Dataset(#[from] KgError),
    #[error("clustering target `{0}` is not a relation of the dataset")]
    UnknownTarget(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::TransE]
}

fn default_typed() -> Vec<bool> {
    vec![true]
}

fn default_rates() -> Vec<f64> {
    vec![0.01]
}

fn default_one() -> usize {
    1
}

fn default_epochs() -> usize {
    1000
}

fn default_eval_every() -> usize {
    25
}

/// Axes of the training grid; the run count is the product of axis sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    pub margins: Vec<f64>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_typed")]
    pub typed: Vec<bool>,
    #[serde(default = "default_rates")]
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_one")]
    pub replicas: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dims: vec![16, 32, 64],
            margins: vec![1.0, 2.0, 4.0],
            models: default_models(),
            typed: default_typed(),
            learning_rates: default_rates(),
            seeds: vec![1, 2, 3],
            replicas: 1,
            max_epochs: default_epochs(),
            eval_every: default_eval_every(),
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.models.len()
            * self.typed.len()
            * self.dims.len()
            * self.margins.len()
            * self.learning_rates.len()
            * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in a fixed nesting order: model, typed, dim, margin,
    /// learning rate, seed.
    pub fn configs(&self) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &model in &self.models {
            for &typed in &self.typed {
                for &dim in &self.dims {
                    for &gamma in &self.margins {
                        for &learning_rate in &self.learning_rates {
                            for &seed in &self.seeds {
                                out.push(TrainConfig {
                                    model,
                                    dim,
                                    gamma,
                                    learning_rate,
                                    max_epochs: self.max_epochs,
                                    replicas: self.replicas,
                                    seed,
                                    typed,
                                    eval_every: self.eval_every,
                                    ..TrainConfig::default()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn default_multiplier() -> usize {
    4
}

fn default_max_iterations() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CepSpec {
    /// Many-to-one relations whose tails label the clustered entities.
    pub targets: Vec<String>,
    #[serde(default = "default_multiplier")]
    pub multiplier: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: KMeansInit,
}

impl CepSpec {
    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            multiplier: self.multiplier,
            max_iterations: self.max_iterations,
            seed: self.seed,
            init: self.init,
        }
    }
}

/// Link-prediction settings. Without a scope, each model is evaluated with
/// typed candidates iff it was trained typed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpSpec {
    #[serde(default)]
    pub scope: Option<CandidateScope>,
    #[serde(default = "default_filter")]
    pub filter: FilterMode,
    #[serde(default = "default_sides")]
    pub sides: Sides,
    #[serde(default = "default_hits")]
    pub hits_at: Vec<usize>,
}

fn default_filter() -> FilterMode {
    FilterMode::Raw
}

fn default_sides() -> Sides {
    Sides::Both
}

fn default_hits() -> Vec<usize> {
    vec![10]
}

impl Default for LpSpec {
    fn default() -> Self {
        Self {
            scope: None,
            filter: default_filter(),
            sides: default_sides(),
            hits_at: default_hits(),
        }
    }
}

impl LpSpec {
    pub fn config_for(&self, train: &TrainConfig) -> LpConfig {
        LpConfig {
            scope: self.scope.unwrap_or(if train.typed {
                CandidateScope::Typed
            } else {
                CandidateScope::Global
            }),
            filter: self.filter,
            sides: self.sides,
            hits_at: self.hits_at.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Label used in the correlation table.
    pub name: String,
    /// Dataset directory; relative paths resolve against the spec file.
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub grid: GridSpec,
    pub cep: CepSpec,
    #[serde(default)]
    pub lp: LpSpec,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self, SweepError> {
        toml::from_str(text).map_err(|e| SweepError::Spec {
            path: "<string>".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("sweep spec serialises")
    }

    /// Load a spec file, resolving relative `dataset` and `out` paths
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut spec: Self = toml::from_str(&text).map_err(|e| SweepError::Spec {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut spec.dataset, &mut spec.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.grid.is_empty() {
            return Err(SweepError::Invalid("grid has an empty axis".into()));
        }
        if self.cep.targets.is_empty() {
            return Err(SweepError::Invalid("no clustering targets".into()));
        }
        self.cep
            .cluster_config()
            .validate()
            .map_err(|e| SweepError::Invalid(e.to_string()))?;
        for c in self.grid.configs() {
            c.validate().map_err(|e| SweepError::Invalid(e.to_string()))?;
        }
        LpConfig {
            hits_at: self.lp.hits_at.clone(),
            ..LpConfig::default()
        }
        .validate()
        .map_err(|e| SweepError::Invalid(e.to_string()))
    }

    /// Hash of everything except paths.
    pub fn content_hash(&self) -> String {
        short_hash(&serde_json::to_string(&(&self.grid, &self.cep, &self.lp)).expect("serialises"), 64)
    }
}

fn short_hash(text: &str, len: usize) -> String {
    let mut h = hex::encode(Sha256::digest(text.as_bytes()));
    h.truncate(len);
    h
}

/// Stable id of a trained model: its config and the dataset it saw.
pub fn model_id(config: &TrainConfig, dataset_hash: &str) -> String {
    let json = serde_json::to_string(config).expect("config serialises");
    short_hash(&format!("{json}\n{dataset_hash}"), 16)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowOutcome {
    Ok {
        tuning_mrr: f64,
        lp: LpReport,
        /// Keyed by target relation.
        cep: BTreeMap<String, ClusterReport>,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model_id: String,
    pub config: TrainConfig,
    /// Hash of the evaluation settings the outcome was computed under.
    pub eval_hash: String,
    pub outcome: RowOutcome,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, RowOutcome::Ok { .. })
    }

    pub fn lp(&self) -> Option<&LpReport> {
        match &self.outcome {
            RowOutcome::Ok { lp, .. } => Some(lp),
            RowOutcome::Failed { .. } => None,
        }
    }

    pub fn cep(&self, target: &str) -> Option<&ClusterReport> {
        match &self.outcome {
            RowOutcome::Ok { cep, .. } => cep.get(target),
            RowOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub name: String,
    pub dataset_hash: String,
    pub spec_hash: String,
    pub targets: Vec<String>,
    pub hits_at: Vec<usize>,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub rows: Vec<SweepRow>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn eval_hash(spec: &SweepSpec) -> String {
    short_hash(&serde_json::to_string(&(&spec.cep, &spec.lp)).expect("serialises"), 16)
}

fn run_row(
    kg: &KnowledgeGraph,
    labels: &[(String, LabelMap)],
    spec: &SweepSpec,
    config: &TrainConfig,
    models_dir: &Path,
    id: &str,
) -> RowOutcome {
    let failed = |reason: String| RowOutcome::Failed { reason };
    let (model, log) = match train(kg, config) {
        Ok(r) => r,
        Err(e) => return failed(format!("training: {e}")),
    };
    let model_path = models_dir.join(format!("{id}.bin"));
    if let Err(e) = save_model(&model_path, &model, &ModelSidecar::new(kg, config, &log)) {
        return failed(format!("saving model: {e}"));
    }
    let lp = match evaluate_lp(&model, kg, Split::Tst, &spec.lp.config_for(config)) {
        Ok(r) => r,
        Err(e) => return failed(format!("link prediction: {e}")),
    };
    let mut cep = BTreeMap::new();
    for (target, map) in labels {
        match evaluate_cep(&model, map, &spec.cep.cluster_config()) {
            Ok(r) => {
                cep.insert(target.clone(), r);
            }
            Err(e) => return failed(format!("clustering {target}: {e}")),
        }
    }
    RowOutcome::Ok {
        tuning_mrr: log.selected_log().final_tuning_mrr,
        lp,
        cep,
    }
}

/// Run (or resume) every grid point of `spec` and write the reports.
///
/// Finished rows are cached as `<out>/models/<id>.row.json` and reused on
/// rerun when their evaluation settings match.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable, SweepError> {
    spec.validate()?;
    let started = now();
    let (kg, _) = read_dataset(&spec.dataset)?;
    let dataset_hash = kg.content_hash();
    let dict = kg.dictionary();
    let labels = spec
        .cep
        .targets
        .iter()
        .map(|t| {
            let r = dict.relation_id(t).ok_or_else(|| SweepError::UnknownTarget(t.clone()))?;
            Ok((t.clone(), derive_labels(&kg, r)?))
        })
        .collect::<Result<Vec<_>, SweepError>>()?;

    let models_dir = spec.out.join("models");
    fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
    let eval = eval_hash(spec);
    let configs = spec.grid.configs();
    let total = configs.len();
    log::info!("sweep {}: {total} runs on dataset {}", spec.name, &dataset_hash[..12]);

    let rows = configs
        .into_par_iter()
        .enumerate()
        .map(|(i, config)| {
            let id = model_id(&config, &dataset_hash);
            let row_path = models_dir.join(format!("{id}.row.json"));
            if let Ok(text) = fs::read_to_string(&row_path) {
                match serde_json::from_str::<SweepRow>(&text) {
                    Ok(row) if row.eval_hash == eval && row.config == config => {
                        log::info!("[{}/{total}] {id} reused", i + 1);
                        return Ok(row);
                    }
                    _ => log::info!("[{}/{total}] {id} cached row is stale, recomputing", i + 1),
                }
            }
            let outcome = run_row(&kg, &labels, spec, &config, &models_dir, &id);
            match &outcome {
                RowOutcome::Ok { lp, .. } => log::info!("[{}/{total}] {id} MRR {:.4}", i + 1, lp.mrr),
                RowOutcome::Failed { reason } => log::warn!("[{}/{total}] {id} failed: {reason}", i + 1),
            }
            let row = SweepRow {
                model_id: id,
                config,
                eval_hash: eval.clone(),
                outcome,
            };
            let json = serde_json::to_string_pretty(&row).expect("row serialises");
            fs::write(&row_path, json + "\n").map_err(io_err(&row_path))?;
            Ok(row)
        })
        .collect::<Result<Vec<_>, SweepError>>()?;

    let table = SweepTable {
        name: spec.name.clone(),
        dataset_hash,
        spec_hash: spec.content_hash(),
        targets: spec.cep.targets.clone(),
        hits_at: spec.lp.hits_at.clone(),
        started,
        finished: now(),
        rows,
    };
    emit_reports(&table, &spec.out)?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LpMetric {
    #[serde(rename = "MRR")]
    Mrr,
    #[serde(rename = "MRank")]
    MRank,
}

impl LpMetric {
    pub const ALL: [LpMetric; 2] = [LpMetric::Mrr, LpMetric::MRank];

    pub fn as_str(self) -> &'static str {
        match self {
            LpMetric::Mrr => "MRR",
            LpMetric::MRank => "MRank",
        }
    }

    fn of(self, r: &LpReport) -> f64 {
        match self {
            LpMetric::Mrr => r.mrr,
            LpMetric::MRank => r.mrank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CepMetric {
    #[serde(rename = "aMean")]
    AMean,
    #[serde(rename = "wMean")]
    WMean,
}

impl CepMetric {
    pub const ALL: [CepMetric; 2] = [CepMetric::AMean, CepMetric::WMean];

    pub fn as_str(self) -> &'static str {
        match self {
            CepMetric::AMean => "aMean",
            CepMetric::WMean => "wMean",
        }
    }

    fn of(self, r: &ClusterReport) -> f64 {
        match self {
            CepMetric::AMean => r.a_mean,
            CepMetric::WMean => r.w_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub pearson: Coefficient,
    pub spearman: Coefficient,
    /// Rows that entered the series.
    pub n: usize,
}

/// Paired (LP, CEP) series over the successful rows, in row order.
pub fn metric_series(
    table: &SweepTable,
    lp_metric: LpMetric,
    cep_metric: CepMetric,
    target: &str,
) -> (MetricSeries, MetricSeries) {
    let (xs, ys) = table
        .rows
        .iter()
        .filter_map(|row| Some((lp_metric.of(row.lp()?), cep_metric.of(row.cep(target)?))))
        .unzip();
    (
        MetricSeries::new(lp_metric.as_str(), xs),
        MetricSeries::new(format!("{}:{target}", cep_metric.as_str()), ys),
    )
}

/// Pearson and Spearman between an LP metric and a CEP metric of `target`.
/// Failed rows are skipped.
pub fn correlate_reports(
    table: &SweepTable,
    lp_metric: LpMetric,
    cep_metric: CepMetric,
    target: &str,
) -> Result<CorrelationCell, StatsError> {
    let (x, y) = metric_series(table, lp_metric, cep_metric, target);
    let (pearson, spearman) = correlate(&x, &y)?;
    Ok(CorrelationCell {
        pearson,
        spearman,
        n: x.values.len(),
    })
}

pub const CORRELATION_HEADER: [&str; 7] = [
    "dataset",
    "target_label",
    "lp_metric",
    "pearson_aMean",
    "pearson_wMean",
    "spearman_aMean",
    "spearman_wMean",
];

/// Correlation table, one line per (target, LP metric).
pub fn correlation_csv(table: &SweepTable) -> Result<String, SweepError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CORRELATION_HEADER).expect("in-memory write");
    for target in &table.targets {
        for lp in LpMetric::ALL {
            let a = correlate_reports(table, lp, CepMetric::AMean, target)?;
            let wm = correlate_reports(table, lp, CepMetric::WMean, target)?;
            w.write_record([
                table.name.clone(),
                target.clone(),
                lp.as_str().to_owned(),
                a.pearson.to_string(),
                wm.pearson.to_string(),
                a.spearman.to_string(),
                wm.spearman.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"))
}

/// One line per row in grid order; failed rows keep their config columns.
pub fn sweep_csv(table: &SweepTable) -> String {
    let mut header: Vec<String> = [
        "model_id",
        "status",
        "model",
        "typed",
        "dim",
        "gamma",
        "learning_rate",
        "max_epochs",
        "replicas",
        "seed",
        "tuning_mrr",
        "mrank",
        "mrr",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(table.hits_at.iter().map(|n| format!("hits@{n}")));
    for t in &table.targets {
        header.push(format!("aMean_{t}"));
        header.push(format!("wMean_{t}"));
    }
    header.push("reason".into());

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for row in &table.rows {
        let c = &row.config;
        let mut rec = vec![
            row.model_id.clone(),
            if row.is_ok() { "ok" } else { "failed" }.to_owned(),
            c.model.to_string(),
            c.typed.to_string(),
            c.dim.to_string(),
            c.gamma.to_string(),
            c.learning_rate.to_string(),
            c.max_epochs.to_string(),
            c.replicas.to_string(),
            c.seed.to_string(),
        ];
        match &row.outcome {
            RowOutcome::Ok { tuning_mrr, lp, cep } => {
                rec.push(tuning_mrr.to_string());
                rec.push(lp.mrank.to_string());
                rec.push(lp.mrr.to_string());
                for n in &table.hits_at {
                    rec.push(lp.hits_at(*n).map(|v| v.to_string()).unwrap_or_default());
                }
                for t in &table.targets {
                    let r = &cep[t];
                    rec.push(r.a_mean.to_string());
                    rec.push(r.w_mean.to_string());
                }
                rec.push(String::new());
            }
            RowOutcome::Failed { reason } => {
                rec.resize(header.len() - 1, String::new());
                rec.push(reason.clone());
            }
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Write `reports/sweep.csv`, `reports/sweep.json` and `correlations.csv`
/// under `out`. Only the JSON carries timestamps.
pub fn emit_reports(table: &SweepTable, out: &Path) -> Result<(), SweepError> {
    if table.rows.is_empty() {
        return Err(SweepError::Invalid("cannot report an empty sweep".into()));
    }
    let reports = out.join("reports");
    fs::create_dir_all(&reports).map_err(io_err(&reports))?;
    let path = reports.join("sweep.csv");
    fs::write(&path, sweep_csv(table)).map_err(io_err(&path))?;
    let path = reports.join("sweep.json");
    let json = serde_json::to_string_pretty(table).expect("table serialises");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    let path = out.join("correlations.csv");
    let csv = match correlation_csv(table) {
        Ok(csv) => csv,
        Err(SweepError::Stats(e)) => {
            log::warn!("correlations not computed: {e}");
            CORRELATION_HEADER.join(",") + "\n"
        }
        Err(e) => return Err(e),
    };
    fs::write(&path, csv).map_err(io_err(&path))
}
