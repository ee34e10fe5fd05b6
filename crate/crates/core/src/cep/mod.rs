//! Clustering evaluation: K-means over labelled target-type entity vectors,
//! scored by how predominant one label is inside each cluster.

mod accuracy;
mod kmeans;

pub use accuracy::{a_mean, cluster_accuracy, w_mean, w_mean_forms, ClusterStats, W_MEAN_FORM_TOLERANCE};
pub use kmeans::{assign_points, kmeans, wcss, KMeansConfig, KMeansInit, KMeansResult};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::LabelMap;
use crate::model::{EmbeddingModel, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum CepError {
    #[error("cannot form {clusters} clusters from {points} points")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("cluster count must be at least 1")]
    NoClusters,
    #[error("points contain non-finite values")]
    NonFinitePoints,
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
    #[error("no cluster accuracies to aggregate")]
    EmptyAccuracies,
    #[error("{accs} accuracies but {weights} weights")]
    LengthMismatch { accs: usize, weights: usize },
    #[error("weights must be non-negative with a positive total")]
    ZeroWeight,
    #[error("weighted-mean forms disagree: {scaled} vs {plain}")]
    WMeanFormsDisagree { scaled: f64, plain: f64 },
    #[error("labelled entity {0} has no vector in the model")]
    MissingEntity(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// `K = multiplier × L`; one of 1, 2, 4.
    pub multiplier: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub init: KMeansInit,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            multiplier: 4,
            max_iterations: 100,
            seed: 0,
            init: KMeansInit::KMeansPlusPlus,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), CepError> {
        if ![1, 2, 4].contains(&self.multiplier) {
            return Err(CepError::InvalidConfig(format!(
                "multiplier must be 1, 2 or 4, got {}",
                self.multiplier
            )));
        }
        if self.max_iterations == 0 {
            return Err(CepError::InvalidConfig("max iterations must be positive".into()));
        }
        Ok(())
    }

    fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            max_iterations: self.max_iterations,
            seed: self.seed,
            init: self.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub relation: String,
    /// Number of clusters requested.
    pub k: usize,
    /// Clusters with at least one labelled member.
    pub n: usize,
    /// Labelled entities clustered.
    pub l_total: usize,
    /// Distinct labels.
    pub label_count: usize,
    pub multiplier: usize,
    pub label_names: Vec<String>,
    pub clusters: Vec<ClusterStats>,
    pub a_mean: f64,
    pub w_mean: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wcss: f64,
}

impl ClusterReport {
    pub const CSV_HEADER: &'static str = "config_hash,K,N,aMean,wMean";

    pub fn csv_row(&self, config_hash: &str) -> String {
        format!("{config_hash},{},{},{},{}", self.k, self.n, self.a_mean, self.w_mean)
    }

    /// One row per cluster: size, predominant label, then a count per label.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("cluster,size,labelled,predominant,acc");
        for name in &self.label_names {
            let _ = write!(s, ",{name}");
        }
        s.push('\n');
        for c in &self.clusters {
            let _ = write!(
                s,
                "{},{},{},{},{}",
                c.cluster, c.size, c.labelled, self.label_names[c.predominant as usize], c.acc
            );
            for l in 0..self.label_names.len() as u32 {
                let _ = write!(s, ",{}", c.histogram.get(&l).copied().unwrap_or(0));
            }
            s.push('\n');
        }
        s
    }
}

/// Cluster the labelled entities of `labels` with `K = multiplier × L` and
/// score the result.
pub fn evaluate_cep(model: &EmbeddingModel, labels: &LabelMap, config: &ClusterConfig) -> Result<ClusterReport, CepError> {
    config.validate()?;
    let k = config.multiplier * labels.label_count();
    let mut data = Vec::with_capacity(labels.len() * model.dim);
    let mut point_labels = Vec::with_capacity(labels.len());
    for (&e, &l) in &labels.labels {
        if e.index() >= model.num_entities() {
            return Err(CepError::MissingEntity(e.0));
        }
        data.extend_from_slice(model.entity(e));
        point_labels.push(Some(l));
    }
    let points = Matrix::from_vec(point_labels.len(), model.dim, data);
    let result = kmeans(&points, k, &config.kmeans())?;
    let clusters = cluster_accuracy(&result.assignment, &point_labels);
    let accs: Vec<f64> = clusters.iter().map(|c| c.acc).collect();
    let weights: Vec<f64> = clusters.iter().map(|c| c.t_k as f64).collect();
    let l_total = point_labels.len();
    Ok(ClusterReport {
        relation: labels.relation_name.clone(),
        k,
        n: clusters.len(),
        l_total,
        label_count: labels.label_count(),
        multiplier: config.multiplier,
        label_names: labels.label_names.clone(),
        a_mean: a_mean(&accs)?,
        w_mean: w_mean(&accs, &weights, l_total as f64)?,
        clusters,
        iterations: result.iterations,
        converged: result.converged,
        wcss: result.wcss(),
    })
}
