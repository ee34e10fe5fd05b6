//! Link-prediction evaluation: rank the true head or tail of each triple
//! among corrupted alternatives and aggregate MRank, MRR and Hits@N.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, Side, Split, Triple};
use crate::model::EmbeddingModel;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("split {0} has no triples to evaluate")]
    EmptySplit(Split),
    #[error("empty candidate pool for triple {0}")]
    EmptyPool(Triple),
    #[error("invalid link-prediction config: {0}")]
    InvalidConfig(String),
    #[error("model has {model_entities} entities / {model_relations} relations but the graph has {kg_entities} / {kg_relations}")]
    ShapeMismatch {
        model_entities: usize,
        model_relations: usize,
        kg_entities: usize,
        kg_relations: usize,
    },
}

/// Which entities may replace the true one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateScope {
    /// Every entity in the dictionary.
    Global,
    /// Only entities sharing the replaced entity's type.
    Typed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Keep candidates that form other known triples.
    Raw,
    /// Drop candidates forming a triple present in any split.
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sides {
    Head,
    Tail,
    Both,
}

impl Sides {
    fn sides(self) -> &'static [Side] {
        match self {
            Sides::Head => &[Side::Head],
            Sides::Tail => &[Side::Tail],
            Sides::Both => &[Side::Head, Side::Tail],
        }
    }
}

macro_rules! from_str_lower {
    ($ty:ty { $($s:literal => $v:expr),+ $(,)? }) => {
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(format!("unrecognised value `{other}`")),
                }
            }
        }
    };
}

from_str_lower!(CandidateScope { "global" => CandidateScope::Global, "typed" => CandidateScope::Typed });
from_str_lower!(FilterMode { "raw" => FilterMode::Raw, "filtered" => FilterMode::Filtered });
from_str_lower!(Sides { "head" => Sides::Head, "tail" => Sides::Tail, "both" => Sides::Both });

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LpConfig {
    pub scope: CandidateScope,
    pub filter: FilterMode,
    pub sides: Sides,
    pub hits_at: Vec<usize>,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            scope: CandidateScope::Global,
            filter: FilterMode::Raw,
            sides: Sides::Both,
            hits_at: vec![10],
        }
    }
}

impl LpConfig {
    /// Raw, both sides, Hits@10, with typed candidates iff the model was
    /// trained with typed corruption.
    pub fn for_model(model: &EmbeddingModel) -> Self {
        Self {
            scope: if model.typed {
                CandidateScope::Typed
            } else {
                CandidateScope::Global
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LpError> {
        if self.hits_at.is_empty() {
            return Err(LpError::InvalidConfig("hits levels must be nonempty".into()));
        }
        if self.hits_at.contains(&0) {
            return Err(LpError::InvalidConfig("hits levels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Aggregate ranking metrics over a set of ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpMetrics {
    pub mrank: f64,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub evaluated: usize,
}

impl LpMetrics {
    /// Sums run in slice order, so the result does not depend on how the
    /// ranks were computed.
    pub fn from_ranks(ranks: &[usize], hits_at: &[usize]) -> Self {
        let n = ranks.len() as f64;
        let mrank = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits = hits_at
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect();
        Self {
            mrank,
            mrr,
            hits,
            evaluated: ranks.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    pub mrank: f64,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub evaluated: usize,
    /// Keyed by relation name.
    pub per_relation: BTreeMap<String, LpMetrics>,
}

impl LpReport {
    pub fn hits_at(&self, n: usize) -> Option<f64> {
        self.hits.get(&n).copied()
    }

    pub fn csv_header(&self) -> String {
        let mut s = String::from("config_hash,mrank,mrr");
        for n in self.hits.keys() {
            let _ = write!(s, ",hits@{n}");
        }
        s
    }

    /// One-line summary: config hash, MRank, MRR, Hits@N...
    pub fn csv_row(&self, config_hash: &str) -> String {
        let mut s = format!("{config_hash},{},{}", self.mrank, self.mrr);
        for v in self.hits.values() {
            let _ = write!(s, ",{v}");
        }
        s
    }
}

/// `1 + #{others scoring ≤ true}`: ties count against the true entity.
pub fn pessimistic_rank(true_score: f64, others: impl IntoIterator<Item = f64>) -> usize {
    1 + others.into_iter().filter(|&s| s <= true_score).count()
}

/// Rank `triple` on `side` against an explicit candidate list.
///
/// The true entity is skipped if present in `candidates`, as is any
/// candidate whose corrupted triple satisfies `exclude`.
pub fn rank_among(
    model: &EmbeddingModel,
    triple: &Triple,
    side: Side,
    candidates: &[EntityId],
    exclude: impl Fn(&Triple) -> bool,
) -> Result<usize, LpError> {
    if candidates.is_empty() {
        return Err(LpError::EmptyPool(*triple));
    }
    let truth = triple.entity(side);
    let true_score = model.score(triple);
    let others = candidates.iter().filter(|&&c| c != truth).filter_map(|&c| {
        let corrupted = triple.with_entity(side, c);
        (!exclude(&corrupted)).then(|| model.score(&corrupted))
    });
    Ok(pessimistic_rank(true_score, others))
}

/// Candidate pool for replacing `side` of `triple` under `scope`.
pub fn candidate_pool<'a>(
    kg: &'a KnowledgeGraph,
    triple: &Triple,
    side: Side,
    scope: CandidateScope,
    all: &'a [EntityId],
) -> &'a [EntityId] {
    match scope {
        CandidateScope::Global => all,
        CandidateScope::Typed => {
            let dict = kg.dictionary();
            dict.members_of(dict.entity_type(triple.entity(side)))
        }
    }
}

fn all_entities(kg: &KnowledgeGraph) -> Vec<EntityId> {
    (0..kg.dictionary().num_entities()).map(EntityId::from_index).collect()
}

fn check_shape(model: &EmbeddingModel, kg: &KnowledgeGraph) -> Result<(), LpError> {
    let d = kg.dictionary();
    if model.num_entities() != d.num_entities() || model.num_relations() != d.num_relations() {
        return Err(LpError::ShapeMismatch {
            model_entities: model.num_entities(),
            model_relations: model.num_relations(),
            kg_entities: d.num_entities(),
            kg_relations: d.num_relations(),
        });
    }
    Ok(())
}

/// Rank of the true entity on `side` of `triple`.
pub fn rank_triple(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    triple: &Triple,
    side: Side,
    config: &LpConfig,
) -> Result<usize, LpError> {
    check_shape(model, kg)?;
    let all = match config.scope {
        CandidateScope::Global => all_entities(kg),
        CandidateScope::Typed => Vec::new(),
    };
    rank_in_graph(model, kg, triple, side, config, &all)
}

fn rank_in_graph(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    triple: &Triple,
    side: Side,
    config: &LpConfig,
    all: &[EntityId],
) -> Result<usize, LpError> {
    let pool = candidate_pool(kg, triple, side, config.scope, all);
    match config.filter {
        FilterMode::Raw => rank_among(model, triple, side, pool, |_| false),
        FilterMode::Filtered => rank_among(model, triple, side, pool, |t| kg.is_known(t)),
    }
}

/// Every rank for `split`, in (triple index, head-then-tail) order.
pub fn split_ranks(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    split: Split,
    config: &LpConfig,
) -> Result<Vec<(Triple, Side, usize)>, LpError> {
    config.validate()?;
    check_shape(model, kg)?;
    let triples = kg.split(split);
    if triples.is_empty() {
        return Err(LpError::EmptySplit(split));
    }
    let all = all_entities(kg);
    let queries: Vec<(Triple, Side)> = triples
        .iter()
        .flat_map(|t| config.sides.sides().iter().map(move |&s| (*t, s)))
        .collect();
    queries
        .par_iter()
        .map(|&(t, side)| rank_in_graph(model, kg, &t, side, config, &all).map(|r| (t, side, r)))
        .collect()
}

/// MRank, MRR and Hits@N of `model` over `split`, overall and per relation.
pub fn evaluate_lp(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    split: Split,
    config: &LpConfig,
) -> Result<LpReport, LpError> {
    let ranked = split_ranks(model, kg, split, config)?;
    let ranks: Vec<usize> = ranked.iter().map(|&(_, _, r)| r).collect();
    let overall = LpMetrics::from_ranks(&ranks, &config.hits_at);
    let mut by_relation: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (t, _, r) in &ranked {
        by_relation
            .entry(kg.dictionary().relation(t.relation).name.clone())
            .or_default()
            .push(*r);
    }
    Ok(LpReport {
        mrank: overall.mrank,
        mrr: overall.mrr,
        hits: overall.hits,
        evaluated: overall.evaluated,
        per_relation: by_relation
            .into_iter()
            .map(|(name, rs)| (name, LpMetrics::from_ranks(&rs, &config.hits_at)))
            .collect(),
    })
}
