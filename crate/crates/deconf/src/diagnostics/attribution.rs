use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::{backward_from_output_grad, forward, forward_with_output_offset, NetworkParams, NetworkSpec};
use crate::synthgen::Dataset;
use crate::{Error, Result};

/// Monte-Carlo settings for [`expected_gradients`].
#[derive(Debug, Clone)]
pub struct EgOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Constant added to the final pre-activation (a covariate head
    /// evaluated at its neutral value). Zero for plain models.
    pub output_offset: f64,
}

impl Default for EgOptions {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            seed: 0,
            output_offset: 0.0,
        }
    }
}

/// Per-feature attribution of one sample's score.
#[derive(Debug, Clone)]
pub struct AttributionVector {
    pub values: Vec<f64>,
    /// Identifies the reference set the expectation was taken over.
    pub reference_id: String,
    pub n_samples: usize,
}

/// Expected Gradients attribution for `x` against a reference dataset.
///
/// Monte-Carlo average over reference draws `x'` and path positions
/// `alpha ~ U(0,1)` of `(x_i - x'_i) * d f(x' + alpha (x - x')) / d x_i`,
/// using the network's exact input gradients. Deterministic per seed.
pub fn expected_gradients(
    spec: &NetworkSpec,
    params: &NetworkParams,
    x: &[f64],
    references: &Dataset,
    opts: &EgOptions,
) -> Result<AttributionVector> {
    let d = spec.input_dim();
    if x.len() != d {
        return Err(Error::Dimension(format!(
            "sample has {} features, network input dim is {d}",
            x.len()
        )));
    }
    if references.dim() != d {
        return Err(Error::Dimension(format!(
            "references have dim {}, network input dim is {d}",
            references.dim()
        )));
    }
    if references.is_empty() {
        return Err(Error::Degenerate("reference set is empty".to_string()));
    }
    if opts.n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be >= 1".to_string()));
    }
    if spec.output_dim() != 1 {
        return Err(Error::Dimension(
            "expected_gradients requires a single-output network".to_string(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.n_samples;
    let m = references.len();
    let mut points = Array2::zeros((n, d));
    let mut diffs = Array2::zeros((n, d));
    for i in 0..n {
        let r = &references.samples()[rng.gen_range(0..m)].features;
        let alpha: f64 = rng.gen();
        for k in 0..d {
            let diff = x[k] - r[k];
            diffs[[i, k]] = diff;
            points[[i, k]] = r[k] + alpha * diff;
        }
    }

    let trace = if opts.output_offset == 0.0 {
        forward(spec, params, points.view())?
    } else {
        let offset = Array1::from_elem(n, opts.output_offset);
        forward_with_output_offset(spec, params, points.view(), offset.view())?
    };
    // Seed the backward pass with d(score)/d(score) = 1 to get input
    // gradients of the raw score.
    let ones = Array2::ones((n, 1));
    let (_, input_grads) = backward_from_output_grad(spec, params, &trace, ones.view())?;

    let values: Vec<f64> = (0..d)
        .map(|k| {
            let mut acc = 0.0;
            for i in 0..n {
                acc += diffs[[i, k]] * input_grads[[i, k]];
            }
            acc / n as f64
        })
        .collect();
    let reference_id = references
        .meta
        .config_hash
        .clone()
        .unwrap_or_else(|| format!("unhashed-{}-samples", m));
    Ok(AttributionVector {
        values,
        reference_id,
        n_samples: n,
    })
}

/// Clamp attribution magnitudes at the given percentile of `|attrs|`
/// (linear-interpolation percentile); signs are preserved.
pub fn clip_attributions(attrs: &[f64], percentile: f64) -> Result<Vec<f64>> {
    if attrs.is_empty() {
        return Err(Error::Degenerate("no attributions to clip".to_string()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidConfig(format!(
            "percentile must be in [0, 100], got {percentile}"
        )));
    }
    let mut mags: Vec<f64> = attrs.iter().map(|a| a.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = percentile / 100.0 * (mags.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let threshold = if lo + 1 < mags.len() {
        mags[lo] + frac * (mags[lo + 1] - mags[lo])
    } else {
        mags[lo]
    };
    Ok(attrs
        .iter()
        .map(|&a| a.signum() * a.abs().min(threshold))
        .collect())
}
