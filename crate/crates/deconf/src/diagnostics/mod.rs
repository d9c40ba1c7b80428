//! Metrics and probes for quantifying score-nuisance dependence.
//!
//! The ROC/AUROC machinery is rank-based with midrank tie handling, so the
//! trapezoidal area under [`roc_curve`] and the pair-counting probability
//! returned by [`auroc`] agree exactly.

mod attribution;
mod embedding;
mod ks;
mod probe;

pub use attribution::{clip_attributions, expected_gradients, AttributionVector, EgOptions};
pub use embedding::{orthogonality, pca_embed, OrthogonalityReport, PcaResult};
pub use ks::{ks_statistic, pairwise_subgroup_ks, KsResult, SubgroupKs};
pub use probe::{probe_nuisance, ProbeMetric, ProbeReport};

use crate::{Error, Result};

/// One point of a ROC sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// A full ROC sweep plus its trapezoidal area.
#[derive(Debug, Clone)]
pub struct RocResult {
    /// Monotone non-decreasing in both coordinates, from (0,0) to (1,1).
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

fn validate_binary_labels(scores: &[f64], labels: &[f64]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "scores and labels lengths differ ({} vs {})",
            scores.len(),
            labels.len()
        )));
    }
    let mut n_pos = 0usize;
    let mut n_neg = 0usize;
    for &l in labels {
        match l {
            x if x == 0.0 => n_neg += 1,
            x if x == 1.0 => n_pos += 1,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "labels must be 0 or 1, got {other}"
                )))
            }
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(
            "both classes must be present".to_string(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores contain non-finite values".to_string()));
    }
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve: the probability that a random positive outranks
/// a random negative, ties counted one half.
///
/// Computed by rank sum with midranks, `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (n_pos, n_neg) = validate_binary_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank shared by the tie group [i, j).
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1.0 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC sweep with one point per distinct score threshold.
pub fn roc_curve(scores: &[f64], labels: &[f64]) -> Result<RocResult> {
    let (n_pos, n_neg) = validate_binary_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending by score; each distinct score becomes one threshold.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
        i = j;
    }
    let mut area = 0.0;
    for w in points.windows(2) {
        area += (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0;
    }
    Ok(RocResult { points, auroc: area })
}
