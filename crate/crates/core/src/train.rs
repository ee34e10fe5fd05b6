//! SGD training of translational models with a margin ranking loss.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, Side, Split, Triple};
use crate::lp::{evaluate_lp, CandidateScope, LpConfig, LpError};
use crate::model::{read_model, write_model, EmbeddingModel, HingeWorkspace, ModelIoError, ModelKind};

/// Resampling attempts before accepting a corruption that is a known
/// training triple.
pub const MAX_CORRUPTION_RETRIES: usize = 16;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("split {0} is empty; training needs LRN and TUN triples")]
    EmptySplit(Split),
    #[error("cannot corrupt entity {entity}: no other candidate in its pool")]
    EmptyCorruptionPool { entity: String },
    #[error("replica {replica} diverged at epoch {epoch} (loss {loss}); try a smaller learning rate")]
    Diverged { replica: usize, epoch: usize, loss: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("model file {path}: {source}")]
    ModelIo { path: PathBuf, source: ModelIoError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("sidecar {path}: {source}")]
    Sidecar { path: PathBuf, source: serde_json::Error },
    #[error("model was trained on dictionary {found}, expected {expected}")]
    IncompatibleModel { expected: String, found: String },
}

impl TrainError {
    /// Divergence is a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::Diverged { .. })
    }
}

/// The only tuning metric currently supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TuningMetric {
    #[default]
    #[serde(rename = "mrr")]
    Mrr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub replicas: usize,
    pub seed: u64,
    pub typed: bool,
    /// TUN MRR is logged every this many epochs; 0 logs only the start and end.
    pub eval_every: usize,
    #[serde(default)]
    pub tuning_metric: TuningMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::TransE,
            dim: 16,
            gamma: 1.0,
            learning_rate: 0.01,
            max_epochs: 1000,
            replicas: 1,
            seed: 0,
            typed: true,
            eval_every: 25,
            tuning_metric: TuningMetric::Mrr,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.dim == 0 {
            return bad("dimension must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("margin must be positive and finite");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be positive");
        }
        if self.replicas == 0 {
            return bad("at least one replica is required");
        }
        Ok(())
    }

    /// Candidate scope used for the tuning evaluation.
    pub fn lp_config(&self) -> LpConfig {
        LpConfig {
            scope: if self.typed {
                CandidateScope::Typed
            } else {
                CandidateScope::Global
            },
            ..LpConfig::default()
        }
    }
}

/// Seed of replica `index` derived from the base seed (splitmix64 finaliser).
pub fn replica_seed(base: u64, index: usize) -> u64 {
    let mut z = base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub triple: Triple,
    /// True when every retry still hit a training triple.
    pub in_training: bool,
}

/// Replace `side` of `triple` with a uniformly drawn different entity, from
/// the same type when `typed`. Resamples corruptions that are LRN triples.
pub fn corrupt_triple<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triple: &Triple,
    side: Side,
    typed: bool,
    rng: &mut R,
) -> Result<Corruption, TrainError> {
    let dict = kg.dictionary();
    let original = triple.entity(side);
    let (pool_len, skip) = if typed {
        let members = dict.members_of(dict.entity_type(original));
        (members.len(), dict.rank_in_type(original))
    } else {
        (dict.num_entities(), original.index())
    };
    if pool_len < 2 {
        return Err(TrainError::EmptyCorruptionPool {
            entity: dict.entity_name(original).to_owned(),
        });
    }
    let pick = |rng: &mut R| {
        let mut j = rng.gen_range(0..pool_len - 1);
        if j >= skip {
            j += 1;
        }
        if typed {
            dict.members_of(dict.entity_type(original))[j]
        } else {
            EntityId::from_index(j)
        }
    };
    let mut candidate = triple.with_entity(side, pick(rng));
    for _ in 0..MAX_CORRUPTION_RETRIES {
        if !kg.in_training(&candidate) {
            return Ok(Corruption {
                triple: candidate,
                in_training: false,
            });
        }
        candidate = triple.with_entity(side, pick(rng));
    }
    Ok(Corruption {
        in_training: kg.in_training(&candidate),
        triple: candidate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaLog {
    pub replica: usize,
    pub seed: u64,
    /// Mean hinge loss per epoch, epoch 1 first.
    pub epoch_loss: Vec<f64>,
    /// `(epoch, TUN MRR)`; epoch 0 is the random initialisation.
    pub tuning: Vec<(usize, f64)>,
    pub final_tuning_mrr: f64,
    /// Corruptions that stayed in LRN after all retries.
    pub unchecked_corruptions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub selected: usize,
    pub replicas: Vec<ReplicaLog>,
}

impl TrainingLog {
    pub fn selected_log(&self) -> &ReplicaLog {
        &self.replicas[self.selected]
    }
}

fn tuning_mrr(model: &EmbeddingModel, kg: &KnowledgeGraph, lp: &LpConfig) -> Result<f64, TrainError> {
    Ok(evaluate_lp(model, kg, Split::Tun, lp)?.mrr)
}

fn train_replica(
    kg: &KnowledgeGraph,
    config: &TrainConfig,
    replica: usize,
) -> Result<(EmbeddingModel, ReplicaLog), TrainError> {
    let seed = replica_seed(config.seed, replica);
    let mut model = EmbeddingModel::init(kg.dictionary(), config.model, config.dim, config.typed, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let lp = config.lp_config();
    let lrn = kg.split(Split::Lrn);
    let mut order: Vec<usize> = (0..lrn.len()).collect();
    let mut ws = HingeWorkspace::new(config.dim);
    let mut log = ReplicaLog {
        replica,
        seed,
        epoch_loss: Vec::with_capacity(config.max_epochs),
        tuning: vec![(0, tuning_mrr(&model, kg, &lp)?)],
        final_tuning_mrr: f64::NAN,
        unchecked_corruptions: 0,
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let pos = lrn[i];
            let side = if rng.gen::<bool>() { Side::Head } else { Side::Tail };
            let neg = corrupt_triple(kg, &pos, side, config.typed, &mut rng)?;
            log.unchecked_corruptions += usize::from(neg.in_training);
            let loss = ws.step(&mut model, &pos, &neg.triple, config.gamma, config.learning_rate);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { replica, epoch, loss });
            }
            total += loss;
        }
        model.project_entities();
        let mean = total / lrn.len() as f64;
        if !model.is_finite() {
            return Err(TrainError::Diverged {
                replica,
                epoch,
                loss: mean,
            });
        }
        log.epoch_loss.push(mean);
        if epoch == config.max_epochs || (config.eval_every > 0 && epoch % config.eval_every == 0) {
            let mrr = tuning_mrr(&model, kg, &lp)?;
            log::debug!("replica {replica} epoch {epoch}: loss {mean:.5}, TUN MRR {mrr:.4}");
            log.tuning.push((epoch, mrr));
        }
    }
    if log.unchecked_corruptions > 0 {
        log::warn!(
            "replica {replica}: {} corruptions were training triples after {MAX_CORRUPTION_RETRIES} retries",
            log.unchecked_corruptions
        );
    }
    log.final_tuning_mrr = log.tuning.last().expect("final evaluation").1;
    Ok((model, log))
}

/// Train `config.replicas` independent replicas and keep the one with the
/// best final TUN MRR (lowest replica index on ties).
pub fn train(kg: &KnowledgeGraph, config: &TrainConfig) -> Result<(EmbeddingModel, TrainingLog), TrainError> {
    config.validate()?;
    for split in [Split::Lrn, Split::Tun] {
        if kg.split(split).is_empty() {
            return Err(TrainError::EmptySplit(split));
        }
    }
    let results = (0..config.replicas)
        .into_par_iter()
        .map(|r| train_replica(kg, config, r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut selected = 0;
    for (i, (_, log)) in results.iter().enumerate() {
        if log.final_tuning_mrr > results[selected].1.final_tuning_mrr {
            selected = i;
        }
    }
    let mut logs = Vec::with_capacity(results.len());
    let mut chosen = None;
    for (i, (model, log)) in results.into_iter().enumerate() {
        if i == selected {
            chosen = Some(model);
        }
        logs.push(log);
    }
    Ok((
        chosen.expect("at least one replica"),
        TrainingLog {
            selected,
            replicas: logs,
        },
    ))
}

/// JSON stored next to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub config: TrainConfig,
    pub dictionary_hash: String,
    pub selected_replica: usize,
    pub tuning_mrr: f64,
}

impl ModelSidecar {
    pub fn new(kg: &KnowledgeGraph, config: &TrainConfig, log: &TrainingLog) -> Self {
        Self {
            config: config.clone(),
            dictionary_hash: kg.dictionary().content_hash(),
            selected_replica: log.selected,
            tuning_mrr: log.selected_log().final_tuning_mrr,
        }
    }

    pub fn check(&self, kg: &KnowledgeGraph) -> Result<(), TrainError> {
        let expected = kg.dictionary().content_hash();
        if self.dictionary_hash != expected {
            return Err(TrainError::IncompatibleModel {
                expected,
                found: self.dictionary_hash.clone(),
            });
        }
        Ok(())
    }
}

/// `model.bin` -> `model.json`.
pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

pub fn save_model(path: &Path, model: &EmbeddingModel, sidecar: &ModelSidecar) -> Result<(), TrainError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    let file = File::create(path).map_err(io_err(path))?;
    write_model(BufWriter::new(file), model).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar).map_err(|source| TrainError::Sidecar {
        path: side.clone(),
        source,
    })?;
    std::fs::write(&side, json + "\n").map_err(io_err(&side))
}

/// Load a model and its sidecar, if one exists.
pub fn load_model(path: &Path) -> Result<(EmbeddingModel, Option<ModelSidecar>), TrainError> {
    let file = File::open(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let model = read_model(BufReader::new(file)).map_err(|source| TrainError::ModelIo {
        path: path.to_path_buf(),
        source,
    })?;
    let side = sidecar_path(path);
    let sidecar = match std::fs::read_to_string(&side) {
        Ok(text) => Some(
            serde_json::from_str(&text).map_err(|source| TrainError::Sidecar { path: side, source })?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(source) => return Err(TrainError::Io { path: side, source }),
    };
    Ok((model, sidecar))
}
