use super::{DenseLayer, Gradients, NetworkParams};
use crate::{Error, Result};

/// SGD-with-momentum state: one velocity buffer per parameter tensor plus
/// the current learning rate. Learning-rate decay is the trainer's job; the
/// optimizer just applies whatever `lr` currently holds.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: Vec<DenseLayer>,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, lr: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }
        Ok(Self {
            velocity: params
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            lr,
        })
    }
}

/// One SGD-with-momentum update:
///
/// `v <- momentum * v + grad + weight_decay * param` (decay on weights only,
/// never biases), then `param <- param - lr * v`.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.layers.len() != params.layers.len()
        || state.velocity.len() != params.layers.len()
    {
        return Err(Error::Dimension(
            "gradient/velocity layer count does not match params".to_string(),
        ));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite(
            "gradients contain NaN or infinite entries".to_string(),
        ));
    }
    let lr = state.lr;
    for ((p, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.velocity.iter_mut())
    {
        if p.weights.dim() != g.weights.dim() || p.bias.len() != g.bias.len() {
            return Err(Error::Dimension(
                "gradient tensor shape does not match params".to_string(),
            ));
        }
        azip_update(&mut v.weights, &g.weights, &p.weights, momentum, weight_decay);
        p.weights.zip_mut_with(&v.weights, |pv, &vv| *pv -= lr * vv);
        for i in 0..p.bias.len() {
            v.bias[i] = momentum * v.bias[i] + g.bias[i];
            p.bias[i] -= lr * v.bias[i];
        }
    }
    Ok(())
}

fn azip_update(
    v: &mut ndarray::Array2<f64>,
    g: &ndarray::Array2<f64>,
    p: &ndarray::Array2<f64>,
    momentum: f64,
    weight_decay: f64,
) {
    ndarray::Zip::from(v).and(g).and(p).for_each(|v, &g, &p| {
        *v = momentum * *v + g + weight_decay * p;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, HiddenActivation, InitScheme, NetworkSpec, OutputActivation};
    use ndarray::array;

    fn one_param_setup(w: f64, g: f64) -> (NetworkParams, Gradients) {
        let spec = NetworkSpec::new(
            vec![1, 1],
            HiddenActivation::Relu,
            OutputActivation::Linear,
        )
        .unwrap();
        let mut p = NetworkParams::zeros(&spec);
        p.layers[0].weights[[0, 0]] = w;
        let mut grads = Gradients::zeros_like(&p);
        grads.layers[0].weights[[0, 0]] = g;
        (p, grads)
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let (mut p, grads) = one_param_setup(1.5, 0.0);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 0.01).unwrap();
        sgd_step(&mut p, &grads, &mut st, 0.9, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_matches_hand_arithmetic() {
        // w=1.0, g=0.5, momentum 0.9, wd 1e-4, lr 0.01:
        //   v1 = 0.5 + 1e-4 * 1.0 = 0.5001, w1 = 1.0 - 0.01 * 0.5001 = 0.994999
        // Second identical gradient:
        //   v2 = 0.9 * 0.5001 + 0.5 + 1e-4 * 0.994999 = 0.95019949990...
        //   w2 = 0.994999 - 0.01 * v2
        let (mut p, grads) = one_param_setup(1.0, 0.5);
        let mut st = OptimizerState::new(&p, 0.01).unwrap();
        sgd_step(&mut p, &grads, &mut st, 0.9, 1e-4).unwrap();
        assert!((p.layers[0].weights[[0, 0]] - 0.994999).abs() < 1e-12);
        let v2 = 0.9 * 0.5001 + 0.5 + 1e-4 * 0.994999;
        let w2 = 0.994999 - 0.01 * v2;
        sgd_step(&mut p, &grads, &mut st, 0.9, 1e-4).unwrap();
        assert!((p.layers[0].weights[[0, 0]] - w2).abs() < 1e-12);
    }

    #[test]
    fn biases_never_receive_weight_decay() {
        let spec = NetworkSpec::new(
            vec![1, 1],
            HiddenActivation::Relu,
            OutputActivation::Linear,
        )
        .unwrap();
        let mut p = NetworkParams::zeros(&spec);
        p.layers[0].bias[0] = 2.0;
        let grads = Gradients::zeros_like(&p);
        let mut st = OptimizerState::new(&p, 0.1).unwrap();
        sgd_step(&mut p, &grads, &mut st, 0.9, 0.5).unwrap();
        // With decay applied to biases this would have shrunk.
        assert_eq!(p.layers[0].bias[0], 2.0);
        // Weights do decay.
        let mut p2 = NetworkParams::zeros(&spec);
        p2.layers[0].weights[[0, 0]] = 2.0;
        let mut st2 = OptimizerState::new(&p2, 0.1).unwrap();
        sgd_step(&mut p2, &grads, &mut st2, 0.9, 0.5).unwrap();
        assert!((p2.layers[0].weights[[0, 0]] - (2.0 - 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let (mut p, mut grads) = one_param_setup(1.0, 0.5);
        grads.layers[0].weights[[0, 0]] = f64::NAN;
        let mut st = OptimizerState::new(&p, 0.01).unwrap();
        assert!(sgd_step(&mut p, &grads, &mut st, 0.9, 1e-4).is_err());
    }

    #[test]
    fn update_sequences_are_bit_identical() {
        let spec = NetworkSpec::new(
            vec![3, 4, 1],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        let run = || {
            let mut p = init_params(&spec, 17, InitScheme::ScaledUniform);
            let mut st = OptimizerState::new(&p, 0.05).unwrap();
            for step in 0..10 {
                let mut g = Gradients::zeros_like(&p);
                for l in &mut g.layers {
                    l.weights.mapv_inplace(|_| 0.01 * (step as f64 + 1.0));
                    l.bias.mapv_inplace(|_| -0.02);
                }
                sgd_step(&mut p, &g, &mut st, 0.9, 1e-4).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_lr_is_rejected_by_state() {
        let (p, _) = one_param_setup(1.0, 0.5);
        assert!(OptimizerState::new(&p, 0.0).is_err());
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (mut p, grads) = one_param_setup(1.0, 0.5);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 0.01).unwrap();
        st.lr = 0.0;
        sgd_step(&mut p, &grads, &mut st, 0.9, 1e-4).unwrap();
        assert_eq!(p, before);
        let _ = array![0.0];
    }
}
