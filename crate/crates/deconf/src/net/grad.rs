use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use super::loss::{clamp_score, LossKind};
use super::{DenseLayer, ForwardTrace, HiddenActivation, NetworkParams, NetworkSpec, OutputActivation};
use crate::{Error, Result};

/// Partial derivatives of a scalar loss with respect to every weight and
/// bias, shaped exactly like the [`NetworkParams`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// `self += scale * other`, entry-wise.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }
}

fn check_trace(spec: &NetworkSpec, params: &NetworkParams, trace: &ForwardTrace) -> Result<()> {
    if !params.matches(spec) {
        return Err(Error::Dimension(
            "params do not match the network spec".to_string(),
        ));
    }
    if trace.input.ncols() != spec.input_dim()
        || trace.pre.len() != spec.n_layers()
        || trace
            .pre
            .iter()
            .zip(&params.layers)
            .any(|(z, l)| z.ncols() != l.out_dim() || z.nrows() != trace.input.nrows())
    {
        return Err(Error::Dimension(
            "trace shapes do not match params; was it produced by forward on the same network?"
                .to_string(),
        ));
    }
    Ok(())
}

/// Exact gradient of the mean (optionally weighted) loss over the traced
/// minibatch with respect to every parameter.
///
/// Requires a single-output network; `targets[i]` is sample `i`'s label. An
/// all-zero weight vector gives a zero gradient, matching the zero loss.
pub fn backward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    trace: &ForwardTrace,
    loss: LossKind,
    targets: ArrayView1<f64>,
    sample_weights: Option<ArrayView1<f64>>,
) -> Result<Gradients> {
    backward_with_input_grad(spec, params, trace, loss, targets, sample_weights)
        .map(|(grads, _)| grads)
}

/// [`backward`] that also returns the gradient with respect to the batch
/// input, `batch x input_dim`. The input gradient is what lets an upstream
/// network (the classifier feeding the adversary) receive the chain-rule
/// continuation of this network's loss.
pub fn backward_with_input_grad(
    spec: &NetworkSpec,
    params: &NetworkParams,
    trace: &ForwardTrace,
    loss: LossKind,
    targets: ArrayView1<f64>,
    sample_weights: Option<ArrayView1<f64>>,
) -> Result<(Gradients, Array2<f64>)> {
    check_trace(spec, params, trace)?;
    if spec.output_dim() != 1 {
        return Err(Error::Dimension(
            "loss-driven backward requires a single-output network".to_string(),
        ));
    }
    let n = trace.batch_len();
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "targets length {} does not match batch size {}",
            targets.len(),
            n
        )));
    }
    if let Some(w) = sample_weights {
        if w.len() != n {
            return Err(Error::Dimension(format!(
                "sample_weights length {} does not match batch size {}",
                w.len(),
                n
            )));
        }
        if w.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig(
                "sample weights must be >= 0".to_string(),
            ));
        }
    }
    let total_weight = match sample_weights {
        Some(w) => w.sum(),
        None => n as f64,
    };
    if total_weight == 0.0 {
        return Ok((Gradients::zeros_like(params), Array2::zeros((n, spec.input_dim()))));
    }

    let scores = trace.outputs().column(0).to_owned();
    let mut d_z_last = Array2::zeros((n, 1));
    for i in 0..n {
        let w = sample_weights.map_or(1.0, |w| w[i]) / total_weight;
        let s = scores[i];
        let y = targets[i];
        // d loss / d z for the final layer, folded per (loss, activation).
        let dz = match (loss, spec.output_activation()) {
            // BCE through its own sigmoid collapses to s - y.
            (LossKind::Bce, OutputActivation::Sigmoid) => s - y,
            (LossKind::Bce, OutputActivation::Linear) => {
                let sc = clamp_score(s);
                (sc - y) / (sc * (1.0 - sc))
            }
            (LossKind::Mse, OutputActivation::Linear) => 2.0 * (s - y),
            (LossKind::Mse, OutputActivation::Sigmoid) => 2.0 * (s - y) * s * (1.0 - s),
        };
        d_z_last[[i, 0]] = w * dz;
    }
    Ok(backprop_core(spec, params, trace, d_z_last))
}

/// Backward pass seeded with an arbitrary gradient with respect to the
/// network outputs (post-activation), `batch x output_dim`.
///
/// Returns parameter gradients and the gradient with respect to the input.
pub fn backward_from_output_grad(
    spec: &NetworkSpec,
    params: &NetworkParams,
    trace: &ForwardTrace,
    d_outputs: ArrayView2<f64>,
) -> Result<(Gradients, Array2<f64>)> {
    check_trace(spec, params, trace)?;
    if d_outputs.nrows() != trace.batch_len() || d_outputs.ncols() != spec.output_dim() {
        return Err(Error::Dimension(format!(
            "d_outputs is {}x{}, expected {}x{}",
            d_outputs.nrows(),
            d_outputs.ncols(),
            trace.batch_len(),
            spec.output_dim()
        )));
    }
    let outputs = trace.outputs();
    let d_z_last = match spec.output_activation() {
        OutputActivation::Sigmoid => {
            let mut d = d_outputs.to_owned();
            d.zip_mut_with(&outputs, |g, &s| *g *= s * (1.0 - s));
            d
        }
        OutputActivation::Linear => d_outputs.to_owned(),
    };
    Ok(backprop_core(spec, params, trace, d_z_last))
}

fn backprop_core(
    spec: &NetworkSpec,
    params: &NetworkParams,
    trace: &ForwardTrace,
    d_z_last: Array2<f64>,
) -> (Gradients, Array2<f64>) {
    let n_layers = spec.n_layers();
    let mut layer_grads: Vec<Option<DenseLayer>> = vec![None; n_layers];
    let mut d_z = d_z_last;
    let mut d_input = Array2::zeros((0, 0));
    for l in (0..n_layers).rev() {
        let h_prev = if l == 0 {
            trace.input()
        } else {
            trace.post_activation(l - 1)
        };
        let d_w = d_z.t().dot(&h_prev);
        let d_b = d_z.sum_axis(Axis(0));
        let d_h_prev = d_z.dot(&params.layers[l].weights);
        layer_grads[l] = Some(DenseLayer {
            weights: d_w,
            bias: d_b,
        });
        if l == 0 {
            d_input = d_h_prev;
        } else {
            let HiddenActivation::Relu = spec.hidden_activation();
            let pre_prev = trace.pre_activation(l - 1);
            let mut masked = d_h_prev;
            masked.zip_mut_with(&pre_prev, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            d_z = masked;
        }
    }
    (
        Gradients {
            layers: layer_grads.into_iter().map(Option::unwrap).collect(),
        },
        d_input,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{bce_loss, forward, init_params, mse_loss, InitScheme};
    use ndarray::{array, Array1};
    use rand::distributions::{Distribution, Uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(sizes: &[usize], out: OutputActivation) -> NetworkSpec {
        NetworkSpec::new(sizes.to_vec(), HiddenActivation::Relu, out).unwrap()
    }

    fn loss_value(
        spec: &NetworkSpec,
        params: &NetworkParams,
        batch: &Array2<f64>,
        loss: LossKind,
        targets: &Array1<f64>,
        weights: Option<&Array1<f64>>,
    ) -> f64 {
        let trace = forward(spec, params, batch.view()).unwrap();
        let scores = trace.scores();
        match loss {
            LossKind::Bce => {
                bce_loss(scores.view(), targets.view(), weights.map(|w| w.view())).unwrap()
            }
            LossKind::Mse => mse_loss(scores.view(), targets.view()).unwrap(),
        }
    }

    /// Central finite differences over every parameter.
    fn fd_gradients(
        spec: &NetworkSpec,
        params: &NetworkParams,
        batch: &Array2<f64>,
        loss: LossKind,
        targets: &Array1<f64>,
        weights: Option<&Array1<f64>>,
        h: f64,
    ) -> Gradients {
        let mut p = params.clone();
        let mut out = Gradients::zeros_like(params);
        for l in 0..p.layers.len() {
            for idx in 0..p.layers[l].weights.len() {
                let flat = p.layers[l].weights.as_slice_mut().unwrap();
                let orig = flat[idx];
                flat[idx] = orig + h;
                let plus = loss_value(spec, &p, batch, loss, targets, weights);
                let flat = p.layers[l].weights.as_slice_mut().unwrap();
                flat[idx] = orig - h;
                let minus = loss_value(spec, &p, batch, loss, targets, weights);
                let flat = p.layers[l].weights.as_slice_mut().unwrap();
                flat[idx] = orig;
                out.layers[l].weights.as_slice_mut().unwrap()[idx] = (plus - minus) / (2.0 * h);
            }
            for idx in 0..p.layers[l].bias.len() {
                let orig = p.layers[l].bias[idx];
                p.layers[l].bias[idx] = orig + h;
                let plus = loss_value(spec, &p, batch, loss, targets, weights);
                p.layers[l].bias[idx] = orig - h;
                let minus = loss_value(spec, &p, batch, loss, targets, weights);
                p.layers[l].bias[idx] = orig;
                out.layers[l].bias[idx] = (plus - minus) / (2.0 * h);
            }
        }
        out
    }

    /// Relative error with a small absolute floor for components near zero;
    /// the floor sits far above the ~1e-12 roundoff of the f64 central
    /// difference itself.
    fn grad_close(analytic: &Gradients, numeric: &Gradients, rel_tol: f64) -> (bool, f64) {
        let mut worst = 0.0_f64;
        for (a, n) in analytic.layers.iter().zip(&numeric.layers) {
            let pairs = a
                .weights
                .iter()
                .zip(n.weights.iter())
                .chain(a.bias.iter().zip(n.bias.iter()));
            for (&av, &nv) in pairs {
                let diff = (av - nv).abs();
                if diff <= 1e-8 {
                    continue;
                }
                let rel = diff / av.abs().max(nv.abs());
                worst = worst.max(rel);
            }
        }
        (worst < rel_tol, worst)
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        let dist = Uniform::new(-1.5, 1.5);
        Array2::from_shape_fn((n, d), |_| dist.sample(rng))
    }

    #[test]
    fn backward_matches_finite_differences_bce() {
        let s = spec(&[3, 5, 4, 1], OutputActivation::Sigmoid);
        let p = init_params(&s, 2, InitScheme::ScaledUniform);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = random_batch(&mut rng, 6, 3);
        let targets = array![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let analytic = backward(&s, &p, &trace, LossKind::Bce, targets.view(), None).unwrap();
        let numeric = fd_gradients(&s, &p, &batch, LossKind::Bce, &targets, None, 1e-5);
        let (ok, worst) = grad_close(&analytic, &numeric, 1e-4);
        assert!(ok, "worst relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences_mse_linear() {
        let s = spec(&[4, 6, 1], OutputActivation::Linear);
        let p = init_params(&s, 3, InitScheme::ScaledUniform);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = random_batch(&mut rng, 5, 4);
        let targets = array![0.2, -0.7, 1.3, 0.0, 2.1];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let analytic = backward(&s, &p, &trace, LossKind::Mse, targets.view(), None).unwrap();
        let numeric = fd_gradients(&s, &p, &batch, LossKind::Mse, &targets, None, 1e-5);
        let (ok, worst) = grad_close(&analytic, &numeric, 1e-4);
        assert!(ok, "worst relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences_weighted() {
        let s = spec(&[3, 4, 1], OutputActivation::Sigmoid);
        let p = init_params(&s, 4, InitScheme::ScaledUniform);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = random_batch(&mut rng, 5, 3);
        let targets = array![1.0, 0.0, 0.0, 1.0, 0.0];
        let weights = array![0.5, 2.0, 0.0, 1.5, 3.0];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let analytic = backward(
            &s,
            &p,
            &trace,
            LossKind::Bce,
            targets.view(),
            Some(weights.view()),
        )
        .unwrap();
        let numeric =
            fd_gradients(&s, &p, &batch, LossKind::Bce, &targets, Some(&weights), 1e-5);
        let (ok, worst) = grad_close(&analytic, &numeric, 1e-4);
        assert!(ok, "worst relative error {worst}");
    }

    #[test]
    fn zero_sample_weights_give_zero_gradient() {
        let s = spec(&[3, 4, 1], OutputActivation::Sigmoid);
        let p = init_params(&s, 5, InitScheme::ScaledUniform);
        let batch = array![[0.1, 0.2, -0.5], [1.0, -1.0, 0.0]];
        let targets = array![1.0, 0.0];
        let weights = array![0.0, 0.0];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let grads = backward(
            &s,
            &p,
            &trace,
            LossKind::Bce,
            targets.view(),
            Some(weights.view()),
        )
        .unwrap();
        for l in &grads.layers {
            assert!(l.weights.iter().all(|&v| v == 0.0));
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identical_units_receive_identical_gradients() {
        // Two hidden units with identical incoming and outgoing weights are
        // exchangeable, so their gradients must agree exactly.
        let s = spec(&[2, 2, 1], OutputActivation::Sigmoid);
        let mut p = NetworkParams::zeros(&s);
        p.layers[0].weights = array![[0.3, -0.4], [0.3, -0.4]];
        p.layers[0].bias = array![0.2, 0.2];
        p.layers[1].weights = array![[0.7, 0.7]];
        let batch = array![[1.0, 0.5], [-0.2, 0.9]];
        let targets = array![1.0, 0.0];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let g = backward(&s, &p, &trace, LossKind::Bce, targets.view(), None).unwrap();
        assert_eq!(g.layers[0].weights.row(0), g.layers[0].weights.row(1));
        assert_eq!(g.layers[0].bias[0], g.layers[0].bias[1]);
        assert_eq!(g.layers[1].weights[[0, 0]], g.layers[1].weights[[0, 1]]);
    }

    #[test]
    fn symmetric_init_zero_input_keeps_symmetry() {
        let s = spec(&[2, 2, 1], OutputActivation::Sigmoid);
        let mut p = NetworkParams::zeros(&s);
        p.layers[0].bias = array![0.5, 0.5];
        p.layers[1].weights = array![[0.3, 0.3]];
        let batch = array![[0.0, 0.0]];
        let targets = array![1.0];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let g = backward(&s, &p, &trace, LossKind::Bce, targets.view(), None).unwrap();
        assert_eq!(g.layers[0].bias[0], g.layers[0].bias[1]);
        // Zero inputs mean zero first-layer weight gradients.
        assert!(g.layers[0].weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let s = spec(&[3, 5, 1], OutputActivation::Sigmoid);
        let p = init_params(&s, 6, InitScheme::ScaledUniform);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut batch = random_batch(&mut rng, 4, 3);
        let targets = array![1.0, 0.0, 1.0, 0.0];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let (_, d_input) = backward_with_input_grad(
            &s,
            &p,
            &trace,
            LossKind::Bce,
            targets.view(),
            None,
        )
        .unwrap();
        let h = 1e-6;
        for r in 0..4 {
            for c in 0..3 {
                let orig = batch[[r, c]];
                batch[[r, c]] = orig + h;
                let plus = loss_value(&s, &p, &batch, LossKind::Bce, &targets, None);
                batch[[r, c]] = orig - h;
                let minus = loss_value(&s, &p, &batch, LossKind::Bce, &targets, None);
                batch[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = d_input[[r, c]];
                assert!(
                    (analytic - numeric).abs() <= 1e-7 + 1e-4 * numeric.abs(),
                    "({r},{c}): analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn output_grad_seed_on_linear_single_layer() {
        // f(x) = w.x + b, seeded with d_out = 1: dW = x, db = 1, d_input = w.
        let s = spec(&[3, 1], OutputActivation::Linear);
        let mut p = NetworkParams::zeros(&s);
        p.layers[0].weights = array![[0.5, -1.0, 2.0]];
        p.layers[0].bias = array![0.1];
        let batch = array![[1.0, 2.0, 3.0]];
        let trace = forward(&s, &p, batch.view()).unwrap();
        let (g, d_in) =
            backward_from_output_grad(&s, &p, &trace, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weights, array![[1.0, 2.0, 3.0]]);
        assert_eq!(g.layers[0].bias, array![1.0]);
        assert_eq!(d_in, array![[0.5, -1.0, 2.0]]);
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let s1 = spec(&[3, 4, 1], OutputActivation::Sigmoid);
        let p1 = init_params(&s1, 1, InitScheme::ScaledUniform);
        let s2 = spec(&[3, 5, 1], OutputActivation::Sigmoid);
        let p2 = init_params(&s2, 1, InitScheme::ScaledUniform);
        let batch = array![[0.1, 0.2, 0.3]];
        let trace = forward(&s1, &p1, batch.view()).unwrap();
        let err = backward(&s2, &p2, &trace, LossKind::Bce, array![1.0].view(), None);
        assert!(err.is_err());
    }
}
