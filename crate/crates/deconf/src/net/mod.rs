//! Dense feedforward networks with exact analytic gradients.
//!
//! A network is described by a [`NetworkSpec`] (layer sizes and activations)
//! and instantiated by a [`NetworkParams`] (one weight matrix and bias vector
//! per layer). [`forward`] evaluates a minibatch and records every pre- and
//! post-activation in a [`ForwardTrace`] so that [`backward`](grad::backward)
//! can produce exact gradients. All math is `f64`.

mod grad;
mod loss;
mod optim;

pub use grad::{backward, backward_from_output_grad, backward_with_input_grad, Gradients};
pub use loss::{bce_loss, mse_loss, LossKind, BCE_EPSILON};
pub use optim::{sgd_step, OptimizerState};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Activation applied between hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenActivation {
    Relu,
}

/// Activation applied to the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    /// Squashes to (0, 1); for probability scores.
    Sigmoid,
    /// Identity; for regression outputs.
    Linear,
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    ScaledUniform,
}

/// Topology of a dense feedforward network.
///
/// `layer_sizes[0]` is the input dimension, the last entry the output
/// dimension; every consecutive pair defines one affine layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layer_sizes: Vec<usize>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
}

impl NetworkSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a network needs at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig(
                "all layer sizes must be >= 1".to_string(),
            ));
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }
}

/// One affine layer: `weights` is `out_dim x in_dim`, `bias` is `out_dim`.
///
/// Also used as the container for per-layer gradients and momentum buffers,
/// which share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// All parameters of a network, one [`DenseLayer`] per affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<DenseLayer>,
}

impl NetworkParams {
    /// Zero-valued parameters shaped for `spec`.
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| DenseLayer::zeros(w[1], w[0]))
            .collect();
        Self { layers }
    }

    /// True when layer shapes are consistent with `spec`.
    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layers.len() == spec.n_layers()
            && self
                .layers
                .iter()
                .zip(spec.layer_sizes.windows(2))
                .all(|(l, w)| l.in_dim() == w[0] && l.out_dim() == w[1] && l.bias.len() == w[1])
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

/// Draw fresh parameters for `spec`. Deterministic for a fixed seed.
///
/// `ScaledUniform` draws each weight uniform in
/// `±sqrt(6 / (fan_in + fan_out))` and sets every bias to zero.
pub fn init_params(spec: &NetworkSpec, seed: u64, scheme: InitScheme) -> NetworkParams {
    let InitScheme::ScaledUniform = scheme;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_sizes
        .windows(2)
        .map(|w| {
            let (in_dim, out_dim) = (w[0], w[1]);
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let weights =
                Array2::from_shape_fn((out_dim, in_dim), |_| dist.sample(&mut rng));
            DenseLayer {
                weights,
                bias: Array1::zeros(out_dim),
            }
        })
        .collect();
    NetworkParams { layers }
}

/// Every intermediate value of one forward pass over a minibatch.
///
/// Row `i` of each matrix belongs to sample `i` of the batch. `pre[l]` and
/// `post[l]` are the pre- and post-activation values of layer `l`;
/// `post.last()` is the network output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn batch_len(&self) -> usize {
        self.input.nrows()
    }

    pub fn input(&self) -> ArrayView2<'_, f64> {
        self.input.view()
    }

    pub fn pre_activation(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.pre[layer].view()
    }

    pub fn post_activation(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.post[layer].view()
    }

    /// Final network outputs, `batch x output_dim`.
    pub fn outputs(&self) -> ArrayView2<'_, f64> {
        self.post.last().unwrap().view()
    }

    /// Final outputs of a single-output network as a vector.
    ///
    /// Panics if the output dimension is not 1.
    pub fn scores(&self) -> Array1<f64> {
        let out = self.outputs();
        assert_eq!(out.ncols(), 1, "scores() requires a single-output network");
        out.column(0).to_owned()
    }

    /// Post-activation values of the last hidden layer.
    ///
    /// For a single-layer network this is the input itself.
    pub fn last_hidden(&self) -> ArrayView2<'_, f64> {
        if self.post.len() >= 2 {
            self.post[self.post.len() - 2].view()
        } else {
            self.input.view()
        }
    }
}

fn check_forward_args(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &ArrayView2<f64>,
) -> Result<()> {
    if !params.matches(spec) {
        return Err(Error::Dimension(
            "params do not match the network spec".to_string(),
        ));
    }
    if batch.ncols() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "batch has {} columns, network input dim is {}",
            batch.ncols(),
            spec.input_dim()
        )));
    }
    Ok(())
}

/// Evaluate the network on a minibatch (rows are samples).
pub fn forward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: ArrayView2<f64>,
) -> Result<ForwardTrace> {
    forward_inner(spec, params, batch, None)
}

/// Like [`forward`], but adds `offset[i]` to sample `i`'s final
/// pre-activation before the output activation.
///
/// This is how a covariate-extended head (an extra scalar input appended to
/// the last hidden layer) is evaluated: the extra term `w_v * v_i` is affine
/// in the covariate and independent of every network parameter.
pub fn forward_with_output_offset(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: ArrayView2<f64>,
    offset: ArrayView1<f64>,
) -> Result<ForwardTrace> {
    if offset.len() != batch.nrows() {
        return Err(Error::Dimension(format!(
            "offset length {} does not match batch size {}",
            offset.len(),
            batch.nrows()
        )));
    }
    if spec.output_dim() != 1 {
        return Err(Error::Dimension(
            "output offset requires a single-output network".to_string(),
        ));
    }
    forward_inner(spec, params, batch, Some(offset))
}

fn forward_inner(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: ArrayView2<f64>,
    output_offset: Option<ArrayView1<f64>>,
) -> Result<ForwardTrace> {
    check_forward_args(spec, params, &batch)?;
    let n_layers = spec.n_layers();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post = Vec::with_capacity(n_layers);
    let mut current = batch.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = current.dot(&layer.weights.t());
        z += &layer.bias;
        if l == n_layers - 1 {
            if let Some(offset) = output_offset {
                let mut col = z.column_mut(0);
                col += &offset;
            }
        }
        let activated = if l == n_layers - 1 {
            match spec.output_activation {
                OutputActivation::Sigmoid => z.mapv(sigmoid),
                OutputActivation::Linear => z.clone(),
            }
        } else {
            match spec.hidden_activation {
                HiddenActivation::Relu => z.mapv(|v| v.max(0.0)),
            }
        };
        pre.push(z);
        current = activated.clone();
        post.push(activated);
    }
    Ok(ForwardTrace {
        input: batch.to_owned(),
        pre,
        post,
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
