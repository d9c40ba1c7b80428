use ndarray::ArrayView1;

use crate::{Error, Result};

/// Scores are clamped into `[BCE_EPSILON, 1 - BCE_EPSILON]` before the logs
/// in the cross-entropy, so a saturated sigmoid never produces NaN.
pub const BCE_EPSILON: f64 = 1e-7;

/// Which loss a training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Binary cross-entropy; targets in {0, 1}, scores in (0, 1).
    Bce,
    /// Mean squared error.
    Mse,
}

fn check_lengths(a: ArrayView1<f64>, b: ArrayView1<f64>, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "{what}: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub(crate) fn clamp_score(s: f64) -> f64 {
    s.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

/// Binary cross-entropy, averaged over the batch.
///
/// With `weights` given, the average is weighted: `sum(w_i * l_i) / sum(w_i)`,
/// so any uniform weight vector reproduces the unweighted loss. An all-zero
/// weight vector yields 0.
pub fn bce_loss(
    scores: ArrayView1<f64>,
    labels: ArrayView1<f64>,
    weights: Option<ArrayView1<f64>>,
) -> Result<f64> {
    check_lengths(scores, labels, "bce_loss")?;
    if scores.is_empty() {
        return Err(Error::Degenerate("bce_loss on empty batch".to_string()));
    }
    if let Some(w) = weights {
        check_lengths(scores, w, "bce_loss weights")?;
        if w.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig(
                "bce_loss weights must be >= 0".to_string(),
            ));
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        let s = clamp_score(scores[i]);
        let y = labels[i];
        num += w * -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
        den += w;
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Mean squared error.
pub fn mse_loss(predictions: ArrayView1<f64>, targets: ArrayView1<f64>) -> Result<f64> {
    check_lengths(predictions, targets, "mse_loss")?;
    if predictions.is_empty() {
        return Err(Error::Degenerate("mse_loss on empty batch".to_string()));
    }
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n)
}
