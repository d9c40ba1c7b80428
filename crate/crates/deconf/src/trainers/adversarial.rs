use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    derive_seeds, run_erm_with_split, take_rows, AdvConfig, Adversary, ErmMode, JointEpochRecord,
    TrainConfig, TrainedModel,
};
use crate::diagnostics::auroc;
use crate::net::{
    backward, backward_from_output_grad, backward_with_input_grad, bce_loss, forward,
    init_params, mse_loss, sgd_step, Gradients, InitScheme, LossKind, NetworkParams,
    NetworkSpec, OptimizerState,
};
use crate::synthgen::{Dataset, NuisanceKind};
use crate::{Error, Result};

const ADVERSARY_MOMENTUM: f64 = 0.9;
const ADVERSARY_WEIGHT_DECAY: f64 = 1e-4;
const DEFAULT_ADVERSARY_BATCH: usize = 128;

/// Standardization constants for a continuous nuisance; identity for a
/// binary one. Keeping the adversary's MSE in O(1) units is what lets
/// `lambda = 1` weight the two objectives sensibly.
#[derive(Debug, Clone, Copy)]
struct TargetScale {
    mean: f64,
    sd: f64,
}

impl TargetScale {
    fn identity() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }

    fn fit(values: &Array1<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.sum() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            sd: var.sqrt().max(1e-12),
        }
    }

    fn apply(&self, values: &Array1<f64>) -> Array1<f64> {
        values.mapv(|v| (v - self.mean) / self.sd)
    }
}

fn adversary_loss_kind(kind: NuisanceKind) -> LossKind {
    match kind {
        NuisanceKind::Binary => LossKind::Bce,
        NuisanceKind::Continuous => LossKind::Mse,
    }
}

fn check_kind(dataset: &Dataset, adv_config: &AdvConfig) -> Result<()> {
    adv_config.validate()?;
    if dataset.nuisance_kind() != adv_config.nuisance_kind {
        return Err(Error::InvalidConfig(format!(
            "dataset nuisance is {:?} but the adversary is configured for {:?}",
            dataset.nuisance_kind(),
            adv_config.nuisance_kind
        )));
    }
    Ok(())
}

fn scores_as_input(scores: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_vec((scores.len(), 1), scores.to_vec()).expect("shape matches")
}

/// One epoch of adversary training on frozen classifier scores.
fn adversary_epoch(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    opt: &mut OptimizerState,
    scores: &Array1<f64>,
    targets: &Array1<f64>,
    loss: LossKind,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    let inputs = scores_as_input(scores);
    for chunk in order.chunks(batch_size) {
        let xb = take_rows(&inputs, chunk);
        let tb: Array1<f64> = chunk.iter().map(|&i| targets[i]).collect();
        let trace = forward(spec, params, xb.view())?;
        let grads = backward(spec, params, &trace, loss, tb.view(), None)?;
        sgd_step(params, &grads, opt, ADVERSARY_MOMENTUM, ADVERSARY_WEIGHT_DECAY)?;
    }
    Ok(())
}

/// Held-out adversary quality: AUROC against a binary nuisance (0.5 when the
/// held-out labels are degenerate), MSE in standardized units otherwise.
fn adversary_val_metric(
    adversary: &Adversary,
    scores: &Array1<f64>,
    targets: &Array1<f64>,
    kind: NuisanceKind,
) -> Result<f64> {
    let preds = forward(&adversary.spec, &adversary.params, scores_as_input(scores).view())?
        .scores();
    Ok(match kind {
        NuisanceKind::Binary => {
            auroc(&preds.to_vec(), &targets.to_vec()).unwrap_or(0.5)
        }
        NuisanceKind::Continuous => mse_loss(preds.view(), targets.view())?,
    })
}

/// Train a fresh adversary to predict the nuisance from the frozen
/// classifier's scores, for `adversary_pretrain_epochs` epochs. The
/// classifier is never touched. For a continuous nuisance the adversary
/// predicts values standardized against this dataset.
pub fn pretrain_adversary(
    model: &TrainedModel,
    dataset: &Dataset,
    adv_config: &AdvConfig,
    seed: u64,
) -> Result<Adversary> {
    check_kind(dataset, adv_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_seed: u64 = rng.gen();
    let scores = model.scores(dataset.features_matrix().view())?;
    let nuisance = dataset.nuisance_values();
    let scale = match adv_config.nuisance_kind {
        NuisanceKind::Binary => TargetScale::identity(),
        NuisanceKind::Continuous => TargetScale::fit(&nuisance),
    };
    let targets = scale.apply(&nuisance);
    let mut params = init_params(&adv_config.adversary_spec, init_seed, InitScheme::ScaledUniform);
    let mut opt = OptimizerState::new(&params, adv_config.adversary_lr)?;
    let loss = adversary_loss_kind(adv_config.nuisance_kind);
    for _ in 0..adv_config.adversary_pretrain_epochs {
        adversary_epoch(
            &adv_config.adversary_spec,
            &mut params,
            &mut opt,
            &scores,
            &targets,
            loss,
            DEFAULT_ADVERSARY_BATCH,
            &mut rng,
        )?;
    }
    Ok(Adversary {
        spec: adv_config.adversary_spec.clone(),
        params,
    })
}

/// One classifier minibatch step of the joint minimax objective: descend
///
/// `grad_f [ BCE(f(x), y) - lambda * L_adv(g(f(x)), v) ]`
///
/// so the classifier keeps predicting the label while pushing the frozen
/// adversary's loss up. Returns the gradient actually applied.
#[allow(clippy::too_many_arguments)]
pub(crate) fn classifier_joint_step(
    f_spec: &NetworkSpec,
    f_params: &mut NetworkParams,
    f_opt: &mut OptimizerState,
    g_spec: &NetworkSpec,
    g_params: &NetworkParams,
    xb: &Array2<f64>,
    yb: &Array1<f64>,
    vb_targets: &Array1<f64>,
    lambda: f64,
    adversary_loss: LossKind,
    config: &TrainConfig,
) -> Result<Gradients> {
    let trace_f = forward(f_spec, f_params, xb.view())?;
    let mut grads = backward(f_spec, f_params, &trace_f, LossKind::Bce, yb.view(), None)?;
    if lambda != 0.0 {
        let scores = trace_f.scores();
        let trace_g = forward(g_spec, g_params, scores_as_input(&scores).view())?;
        // d L_adv / d s, via the adversary's input gradient.
        let (_, d_scores) = backward_with_input_grad(
            g_spec,
            g_params,
            &trace_g,
            adversary_loss,
            vb_targets.view(),
            None,
        )?;
        let (adv_grads, _) = backward_from_output_grad(f_spec, f_params, &trace_f, d_scores.view())?;
        grads.add_scaled(&adv_grads, -lambda);
    }
    sgd_step(f_params, &grads, f_opt, config.momentum, config.weight_decay)?;
    Ok(grads)
}

/// Adversarial deconfounding.
///
/// The classifier is first trained with the full standard early-stopping
/// protocol, the adversary is pretrained on its frozen scores, and then each
/// joint epoch (i) trains the adversary for one full pass over the training
/// minibatches with the classifier frozen and (ii) applies a single
/// classifier minibatch step of the minimax objective with the adversary
/// frozen. The returned model carries the final classifier and adversary,
/// with per-joint-epoch validation traces in the report.
pub fn train_adversarial(
    dataset: &Dataset,
    config: &TrainConfig,
    adv_config: &AdvConfig,
) -> Result<TrainedModel> {
    check_kind(dataset, adv_config)?;
    let outcome = run_erm_with_split(dataset, config, ErmMode::Standard)?;
    let mut model = outcome.model;
    let train = outcome.train;
    let val = outcome.val;

    let seeds = derive_seeds(config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.joint);

    let x_train = train.features_matrix();
    let y_train = train.labels();
    let x_val = val.features_matrix();
    let y_val = val.labels();
    let v_train_raw = train.nuisance_values();
    let v_val_raw = val.nuisance_values();
    let scale = match adv_config.nuisance_kind {
        NuisanceKind::Binary => TargetScale::identity(),
        NuisanceKind::Continuous => TargetScale::fit(&v_train_raw),
    };
    let v_train = scale.apply(&v_train_raw);
    let v_val = scale.apply(&v_val_raw);
    let adversary_loss = adversary_loss_kind(adv_config.nuisance_kind);

    let mut g_params = init_params(
        &adv_config.adversary_spec,
        seeds.adversary_init,
        InitScheme::ScaledUniform,
    );
    let mut g_opt = OptimizerState::new(&g_params, adv_config.adversary_lr)?;

    // Adversary pretraining against the frozen, early-stopped classifier.
    let mut scores_train = forward(&model.spec, &model.params, x_train.view())?.scores();
    for _ in 0..adv_config.adversary_pretrain_epochs {
        adversary_epoch(
            &adv_config.adversary_spec,
            &mut g_params,
            &mut g_opt,
            &scores_train,
            &v_train,
            adversary_loss,
            config.batch_size,
            &mut rng,
        )?;
    }

    // The classifier's joint phase starts from the best-validation
    // parameters with a fresh optimizer at the initial learning rate.
    let mut f_opt = OptimizerState::new(&model.params, config.initial_lr)?;
    let n_train = train.len();
    let mut joint = Vec::with_capacity(adv_config.joint_epochs);
    for _ in 0..adv_config.joint_epochs {
        adversary_epoch(
            &adv_config.adversary_spec,
            &mut g_params,
            &mut g_opt,
            &scores_train,
            &v_train,
            adversary_loss,
            config.batch_size,
            &mut rng,
        )?;

        let batch_len = config.batch_size.min(n_train);
        let idx: Vec<usize> = rand::seq::index::sample(&mut rng, n_train, batch_len).into_vec();
        let xb = take_rows(&x_train, &idx);
        let yb: Array1<f64> = idx.iter().map(|&i| y_train[i]).collect();
        let vb: Array1<f64> = idx.iter().map(|&i| v_train[i]).collect();
        classifier_joint_step(
            &model.spec,
            &mut model.params,
            &mut f_opt,
            &adv_config.adversary_spec,
            &g_params,
            &xb,
            &yb,
            &vb,
            adv_config.lambda_weight,
            adversary_loss,
            config,
        )?;

        scores_train = forward(&model.spec, &model.params, x_train.view())?.scores();
        let val_scores = forward(&model.spec, &model.params, x_val.view())?.scores();
        let classifier_val_bce = bce_loss(val_scores.view(), y_val.view(), None)?;
        if !classifier_val_bce.is_finite() {
            return Err(Error::NonFinite(
                "validation loss became non-finite during joint training".to_string(),
            ));
        }
        let adversary = Adversary {
            spec: adv_config.adversary_spec.clone(),
            params: g_params.clone(),
        };
        let adversary_val_metric =
            adversary_val_metric(&adversary, &val_scores, &v_val, adv_config.nuisance_kind)?;
        joint.push(JointEpochRecord {
            classifier_val_bce,
            adversary_val_metric,
        });
    }

    model.report.joint = joint;
    model.adversary = Some(Adversary {
        spec: adv_config.adversary_spec.clone(),
        params: g_params,
    });
    Ok(model)
}
