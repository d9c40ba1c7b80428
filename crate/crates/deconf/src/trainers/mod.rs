//! The five training strategies, sharing one early-stopping protocol.
//!
//! Every trainer follows the same outer loop: a group-level train/validation
//! split, minibatch SGD with momentum, and early stopping driven by
//! validation BCE (no improvement drops the learning rate by
//! `lr_decay_factor`; `patience_epochs` consecutive non-improvements stop
//! training and the best-validation parameters are returned). What differs
//! is how minibatches are assembled and what the classifier head sees:
//!
//! - [`train_standard`]: plain ERM.
//! - [`train_adversarial`](adversarial::train_adversarial): minimax against
//!   an adversary predicting the nuisance from the score.
//! - [`train_instance_weighted`](weighting::train_instance_weighted):
//!   minibatches drawn with probability proportional to `P(Y) / P(Y|V)`.
//! - [`match_subsample`](weighting::match_subsample) + [`train_standard`]:
//!   equalize base rates by deleting negatives, then train normally.
//! - [`train_covariate`]: append the nuisance to the last hidden layer and
//!   neutralize it at evaluation time.

mod adversarial;
mod model_io;
mod weighting;

pub use adversarial::{pretrain_adversary, train_adversarial};
pub use model_io::{load_model, save_model};
pub use weighting::{
    compute_instance_weights, match_subsample, train_instance_weighted, InstanceWeightTable,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{
    backward, bce_loss, forward, forward_with_output_offset, init_params, sgd_step,
    ForwardTrace, HiddenActivation, InitScheme, LossKind, NetworkParams, NetworkSpec,
    OptimizerState, OutputActivation,
};
use crate::synthgen::{Dataset, NuisanceKind};
use crate::{Error, Result};

/// Hyperparameters shared by every trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_decay_factor: f64,
    pub patience_epochs: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            lr_decay_factor: 10.0,
            patience_epochs: 3,
            val_fraction: 0.05,
            max_epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_lr <= 0.0
            || self.lr_decay_factor <= 1.0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience_epochs == 0
        {
            return Err(Error::InvalidConfig(
                "learning rate, decay factor, batch size, epochs and patience must be positive"
                    .to_string(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "momentum must be in [0, 1), weight_decay >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// Adversarial-phase hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvConfig {
    /// Weight of the adversarial term in the classifier's joint objective.
    pub lambda_weight: f64,
    /// Adversary topology; input dim must be 1 (the score).
    pub adversary_spec: NetworkSpec,
    pub adversary_pretrain_epochs: usize,
    /// Number of joint epochs: each is one full adversary epoch plus a
    /// single classifier minibatch step.
    pub joint_epochs: usize,
    pub adversary_lr: f64,
    /// Binary pairs a sigmoid output with BCE, continuous a linear output
    /// with MSE (on internally standardized nuisance values).
    pub nuisance_kind: NuisanceKind,
}

impl AdvConfig {
    /// The default adversary: three hidden layers of 32 on the scalar score.
    pub fn for_kind(kind: NuisanceKind) -> Self {
        let out = match kind {
            NuisanceKind::Binary => OutputActivation::Sigmoid,
            NuisanceKind::Continuous => OutputActivation::Linear,
        };
        Self {
            lambda_weight: 1.0,
            adversary_spec: NetworkSpec::new(
                vec![1, 32, 32, 32, 1],
                HiddenActivation::Relu,
                out,
            )
            .expect("static spec is valid"),
            adversary_pretrain_epochs: 1,
            joint_epochs: 200,
            adversary_lr: 1e-2,
            nuisance_kind: kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_weight < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_weight must be >= 0, got {}",
                self.lambda_weight
            )));
        }
        if self.adversary_lr <= 0.0 {
            return Err(Error::InvalidConfig("adversary_lr must be > 0".to_string()));
        }
        if self.adversary_spec.input_dim() != 1 || self.adversary_spec.output_dim() != 1 {
            return Err(Error::InvalidConfig(
                "adversary must map the scalar score to a scalar prediction".to_string(),
            ));
        }
        let expected = match self.nuisance_kind {
            NuisanceKind::Binary => OutputActivation::Sigmoid,
            NuisanceKind::Continuous => OutputActivation::Linear,
        };
        if self.adversary_spec.output_activation() != expected {
            return Err(Error::InvalidConfig(format!(
                "{:?} nuisance requires adversary output activation {expected:?}",
                self.nuisance_kind
            )));
        }
        Ok(())
    }
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self::for_kind(NuisanceKind::Binary)
    }
}

/// Per-joint-epoch trace of adversarial training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEpochRecord {
    pub classifier_val_bce: f64,
    /// Held-out adversary quality: AUROC for a binary nuisance, MSE (in
    /// standardized units) for a continuous one.
    pub adversary_val_metric: f64,
}

/// Loss curves and the early-stopping outcome of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub lr_trace: Vec<f64>,
    /// Epochs actually run before early stopping (or the epoch cap).
    pub stop_epoch: usize,
    /// Zero-based epoch whose parameters were returned.
    pub best_epoch: usize,
    /// Present only for adversarial training.
    pub joint: Vec<JointEpochRecord>,
}

/// The covariate-head extension: one extra weight on the nuisance appended
/// to the last hidden layer, plus the training-set nuisance mean used to
/// neutralize it at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateHead {
    pub weight: f64,
    pub v_mean: f64,
}

/// A trained adversary (spec plus parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct Adversary {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
}

/// A frozen classifier with its training report and optional extras.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub covariate: Option<CovariateHead>,
    pub adversary: Option<Adversary>,
    pub report: TrainingReport,
}

impl TrainedModel {
    /// Evaluation-time scores. A covariate head is neutralized by fixing the
    /// nuisance at its stored training mean for every sample.
    pub fn scores(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        let trace = self.eval_trace(features)?;
        Ok(trace.scores())
    }

    pub(crate) fn eval_trace(&self, features: ArrayView2<f64>) -> Result<ForwardTrace> {
        match &self.covariate {
            None => forward(&self.spec, &self.params, features),
            Some(head) => {
                let offset = Array1::from_elem(features.nrows(), head.weight * head.v_mean);
                forward_with_output_offset(&self.spec, &self.params, features, offset.view())
            }
        }
    }

    /// Training-mode scores for a covariate model: each sample's actual
    /// nuisance value enters the head. Models without a covariate head
    /// ignore `nuisance`.
    pub fn scores_with_nuisance(
        &self,
        features: ArrayView2<f64>,
        nuisance: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        match &self.covariate {
            None => self.scores(features),
            Some(head) => {
                let offset = nuisance.mapv(|v| head.weight * v);
                let trace = forward_with_output_offset(
                    &self.spec,
                    &self.params,
                    features,
                    offset.view(),
                )?;
                Ok(trace.scores())
            }
        }
    }

    /// Post-activation values of the last hidden layer for each sample.
    pub fn hidden_embedding(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let trace = forward(&self.spec, &self.params, features)?;
        Ok(trace.last_hidden().to_owned())
    }
}

/// Scores from a covariate-trained model with the nuisance fixed at its
/// training mean. Errors when the model has no covariate head.
pub fn eval_covariate(model: &TrainedModel, dataset: &Dataset) -> Result<Array1<f64>> {
    if model.covariate.is_none() {
        return Err(Error::InvalidConfig(
            "model was not trained with a covariate head".to_string(),
        ));
    }
    model.scores(dataset.features_matrix().view())
}

/// The desk-scale classifier topology: two ReLU hidden layers on the input
/// dimension, sigmoid score output.
pub fn default_classifier_spec(input_dim: usize) -> NetworkSpec {
    NetworkSpec::new(
        vec![input_dim, 64, 32, 1],
        HiddenActivation::Relu,
        OutputActivation::Sigmoid,
    )
    .expect("static spec is valid")
}

/// Split a dataset into train and validation parts at the group level:
/// every group lands entirely on one side. Deterministic per seed.
pub fn split_train_val(
    dataset: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut groups: Vec<u64> = dataset.samples().iter().map(|s| s.group_id).collect();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        return Err(Error::Degenerate(
            "need at least 2 distinct group ids to split".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let n_val = ((groups.len() as f64 * val_fraction).round() as usize)
        .clamp(1, groups.len() - 1);
    let mut val_groups: Vec<u64> = groups[..n_val].to_vec();
    val_groups.sort_unstable();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        if val_groups.binary_search(&s.group_id).is_ok() {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    Ok((dataset.subset(&train_idx), dataset.subset(&val_idx)))
}

/// Standard ERM training with the shared early-stopping protocol.
pub fn train_standard(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    run_erm(dataset, config, ErmMode::Standard)
}

/// Covariate-inclusion training: the nuisance is appended to the last
/// hidden layer as one extra logistic-regression input, trained jointly.
pub fn train_covariate(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    run_erm(dataset, config, ErmMode::Covariate)
}

/// Seeds for the independent random streams of one training run, all
/// derived from the run seed.
pub(crate) struct DerivedSeeds {
    pub split: u64,
    pub init: u64,
    pub epochs: u64,
    pub adversary_init: u64,
    pub joint: u64,
}

pub(crate) fn derive_seeds(seed: u64) -> DerivedSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DerivedSeeds {
        split: rng.gen(),
        init: rng.gen(),
        epochs: rng.gen(),
        adversary_init: rng.gen(),
        joint: rng.gen(),
    }
}

pub(crate) enum ErmMode {
    Standard,
    /// Minibatches drawn with replacement, probability proportional to the
    /// per-sample weight.
    InstanceWeighted(Vec<f64>),
    Covariate,
}

pub(crate) struct ErmOutcome {
    pub model: TrainedModel,
    pub train: Dataset,
    pub val: Dataset,
}

pub(crate) fn run_erm(
    dataset: &Dataset,
    config: &TrainConfig,
    mode: ErmMode,
) -> Result<TrainedModel> {
    run_erm_with_split(dataset, config, mode).map(|o| o.model)
}

pub(crate) fn run_erm_with_split(
    dataset: &Dataset,
    config: &TrainConfig,
    mode: ErmMode,
) -> Result<ErmOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Degenerate("cannot train on an empty dataset".to_string()));
    }
    let seeds = derive_seeds(config.seed);
    let (train, val) = split_train_val(dataset, config.val_fraction, seeds.split)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Degenerate("train/validation split is empty".to_string()));
    }

    let spec = default_classifier_spec(dataset.dim());
    let mut params = init_params(&spec, seeds.init, InitScheme::ScaledUniform);
    let mut opt = OptimizerState::new(&params, config.initial_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.epochs);

    let x_train = train.features_matrix();
    let y_train = train.labels();
    let v_train = train.nuisance_values();
    let x_val = val.features_matrix();
    let y_val = val.labels();
    let v_val = val.nuisance_values();
    let n_train = train.len();

    // The covariate mean is taken over the full provided training data.
    let v_mean = dataset.nuisance_values().sum() / dataset.len() as f64;
    let mut cov = match mode {
        ErmMode::Covariate => Some(CovariateState::new(v_mean)),
        _ => None,
    };
    let sampler = match &mode {
        ErmMode::InstanceWeighted(weights) => {
            if weights.len() != dataset.len() {
                return Err(Error::Dimension(
                    "instance weights length does not match dataset".to_string(),
                ));
            }
            // Weights follow the split: recover each train sample's weight
            // by position in the original dataset.
            let train_weights = weights_for_subset(dataset, &train, weights)?;
            Some(weighting::WeightedSampler::new(&train_weights)?)
        }
        _ => None,
    };

    let mut report = TrainingReport::default();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut best_cov = cov.as_ref().map(|c| c.head());
    let mut bad_streak = 0usize;

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..config.max_epochs {
        report.lr_trace.push(opt.lr);
        let batches: Vec<Vec<usize>> = match &sampler {
            None => {
                order.shuffle(&mut rng);
                order
                    .chunks(config.batch_size)
                    .map(|c| c.to_vec())
                    .collect()
            }
            Some(s) => {
                let k = n_train.div_ceil(config.batch_size);
                (0..k)
                    .map(|_| s.sample_batch(&mut rng, config.batch_size))
                    .collect()
            }
        };
        let mut loss_sum = 0.0;
        let mut loss_count = 0.0;
        for batch in &batches {
            let xb = take_rows(&x_train, batch);
            let yb: Array1<f64> = batch.iter().map(|&i| y_train[i]).collect();
            let (trace, loss) = match &mut cov {
                None => {
                    let trace = forward(&spec, &params, xb.view())?;
                    let loss = bce_loss(trace.scores().view(), yb.view(), None)?;
                    (trace, loss)
                }
                Some(c) => {
                    let vb: Array1<f64> = batch.iter().map(|&i| v_train[i]).collect();
                    let offset = vb.mapv(|v| c.weight * v);
                    let trace =
                        forward_with_output_offset(&spec, &params, xb.view(), offset.view())?;
                    let loss = bce_loss(trace.scores().view(), yb.view(), None)?;
                    c.pending_batch = Some(vb);
                    (trace, loss)
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became non-finite at epoch {epoch}"
                )));
            }
            let grads = backward(&spec, &params, &trace, LossKind::Bce, yb.view(), None)?;
            if let Some(c) = &mut cov {
                // d loss / d w_v = mean((s - y) * v): the head weight sees
                // the same fused BCE-through-sigmoid gradient as the final
                // layer, with the nuisance as its input.
                let vb = c.pending_batch.take().expect("set above");
                let scores = trace.scores();
                let m = batch.len() as f64;
                let mut g = 0.0;
                for i in 0..batch.len() {
                    g += (scores[i] - yb[i]) * vb[i];
                }
                g = g / m + config.weight_decay * c.weight;
                c.velocity = config.momentum * c.velocity + g;
                c.weight -= opt.lr * c.velocity;
            }
            sgd_step(&mut params, &grads, &mut opt, config.momentum, config.weight_decay)?;
            loss_sum += loss * batch.len() as f64;
            loss_count += batch.len() as f64;
        }
        report.train_losses.push(loss_sum / loss_count);

        let val_scores = match &cov {
            None => forward(&spec, &params, x_val.view())?.scores(),
            Some(c) => {
                let offset = v_val.mapv(|v| c.weight * v);
                forward_with_output_offset(&spec, &params, x_val.view(), offset.view())?
                    .scores()
            }
        };
        let val_loss = bce_loss(val_scores.view(), y_val.view(), None)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss became non-finite at epoch {epoch}"
            )));
        }
        report.val_losses.push(val_loss);
        report.stop_epoch = epoch + 1;

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
            best_cov = cov.as_ref().map(|c| c.head());
            bad_streak = 0;
        } else {
            bad_streak += 1;
            opt.lr /= config.lr_decay_factor;
            if bad_streak >= config.patience_epochs {
                break;
            }
        }
    }
    report.best_epoch = best_epoch;

    let model = TrainedModel {
        spec,
        params: best_params,
        covariate: best_cov,
        adversary: None,
        report,
    };
    Ok(ErmOutcome { model, train, val })
}

struct CovariateState {
    weight: f64,
    velocity: f64,
    v_mean: f64,
    pending_batch: Option<Array1<f64>>,
}

impl CovariateState {
    fn new(v_mean: f64) -> Self {
        Self {
            weight: 0.0,
            velocity: 0.0,
            v_mean,
            pending_batch: None,
        }
    }

    fn head(&self) -> CovariateHead {
        CovariateHead {
            weight: self.weight,
            v_mean: self.v_mean,
        }
    }
}

/// Map per-sample weights on `dataset` onto the rows of `subset` (a subset
/// produced by [`split_train_val`], which preserves sample order).
fn weights_for_subset(dataset: &Dataset, subset: &Dataset, weights: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(subset.len());
    let mut cursor = 0usize;
    for s in subset.samples() {
        while cursor < dataset.len() && dataset.samples()[cursor] != *s {
            cursor += 1;
        }
        if cursor == dataset.len() {
            return Err(Error::Dimension(
                "subset sample not found in parent dataset".to_string(),
            ));
        }
        out.push(weights[cursor]);
        cursor += 1;
    }
    Ok(out)
}

pub(crate) fn take_rows(m: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), m.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}
