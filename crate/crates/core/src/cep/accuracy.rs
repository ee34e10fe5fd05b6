use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CepError;
use crate::kg::LabelId;

/// Largest tolerated gap between the two algebraic forms of wMean.
pub const W_MEAN_FORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster: usize,
    /// All members, labelled or not.
    pub size: usize,
    pub labelled: usize,
    pub predominant: LabelId,
    /// Members carrying the predominant label.
    pub t_k: usize,
    /// `t_k / labelled`.
    pub acc: f64,
    pub histogram: BTreeMap<LabelId, usize>,
}

/// Per-cluster predominant label and accuracy. `labels[i]` is the label of
/// point `i`, if any. Clusters without labelled members are left out.
pub fn cluster_accuracy(assignment: &[usize], labels: &[Option<LabelId>]) -> Vec<ClusterStats> {
    assert_eq!(assignment.len(), labels.len(), "assignment and labels differ in length");
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut hist: BTreeMap<usize, BTreeMap<LabelId, usize>> = BTreeMap::new();
    for (&c, l) in assignment.iter().zip(labels) {
        *sizes.entry(c).or_default() += 1;
        if let Some(l) = l {
            *hist.entry(c).or_default().entry(*l).or_default() += 1;
        }
    }
    hist.into_iter()
        .map(|(cluster, histogram)| {
            let labelled: usize = histogram.values().sum();
            // Ascending label order, so a strict `>` keeps the smallest id on ties.
            let (mut predominant, mut t_k) = (0, 0);
            for (&l, &count) in &histogram {
                if count > t_k {
                    predominant = l;
                    t_k = count;
                }
            }
            ClusterStats {
                cluster,
                size: sizes[&cluster],
                labelled,
                predominant,
                t_k,
                acc: t_k as f64 / labelled as f64,
                histogram,
            }
        })
        .collect()
}

/// Arithmetic mean of the per-cluster accuracies.
pub fn a_mean(accs: &[f64]) -> Result<f64, CepError> {
    if accs.is_empty() {
        return Err(CepError::EmptyAccuracies);
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Both forms of the weighted mean: `Σ(Acc·T/L) / Σ(T/L)` and `Σ(Acc·T) / ΣT`.
pub fn w_mean_forms(accs: &[f64], weights: &[f64], l_total: f64) -> Result<(f64, f64), CepError> {
    if accs.is_empty() {
        return Err(CepError::EmptyAccuracies);
    }
    if accs.len() != weights.len() {
        return Err(CepError::LengthMismatch {
            accs: accs.len(),
            weights: weights.len(),
        });
    }
    if !(l_total > 0.0) || weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(CepError::ZeroWeight);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(CepError::ZeroWeight);
    }
    let scaled_num: f64 = accs.iter().zip(weights).map(|(a, t)| a * (t / l_total)).sum();
    let scaled_den: f64 = weights.iter().map(|t| t / l_total).sum();
    let plain_num: f64 = accs.iter().zip(weights).map(|(a, t)| a * t).sum();
    Ok((scaled_num / scaled_den, plain_num / total))
}

/// Weighted mean of accuracies by predominant-label counts `T_k`. The
/// normaliser `L` cancels; both forms are computed and must agree.
pub fn w_mean(accs: &[f64], weights: &[f64], l_total: f64) -> Result<f64, CepError> {
    let (scaled, plain) = w_mean_forms(accs, weights, l_total)?;
    if (scaled - plain).abs() > W_MEAN_FORM_TOLERANCE {
        return Err(CepError::WMeanFormsDisagree { scaled, plain });
    }
    Ok(plain)
}
