use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{auroc, roc_curve, RocResult};
use crate::net::{
    backward, forward, init_params, mse_loss, sgd_step, InitScheme, LossKind, NetworkParams,
    NetworkSpec, OptimizerState, OutputActivation,
};
use crate::synthgen::NuisanceKind;
use crate::{Error, Result};

/// Fewer samples than this and the held-out probe metric is noise.
pub const PROBE_MIN_SAMPLES: usize = 200;

const PROBE_TRAIN_FRACTION: f64 = 0.7;
const PROBE_EPOCHS: usize = 12;
const PROBE_BATCH: usize = 128;
const PROBE_LR: f64 = 1e-2;
const PROBE_MOMENTUM: f64 = 0.9;
const PROBE_WEIGHT_DECAY: f64 = 1e-4;

/// Held-out performance of a probe trained to predict the nuisance from the
/// score alone.
#[derive(Debug, Clone)]
pub enum ProbeMetric {
    Binary { auroc: f64, roc: RocResult },
    Continuous { r2: f64, mse: f64 },
}

/// Result of [`probe_nuisance`]: how recoverable the nuisance is from the
/// score distribution, measured on a held-out split.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub probe_spec: NetworkSpec,
    pub probe_params: NetworkParams,
    pub n_train: usize,
    pub n_test: usize,
    pub metric: ProbeMetric,
}

impl ProbeReport {
    /// The scalar summary: AUROC for a binary nuisance, R^2 for continuous.
    pub fn headline(&self) -> f64 {
        match &self.metric {
            ProbeMetric::Binary { auroc, .. } => *auroc,
            ProbeMetric::Continuous { r2, .. } => *r2,
        }
    }
}

/// Train a probe network to predict the nuisance from the scalar score and
/// report its held-out performance on a 70/30 split (stratified by class for
/// a binary nuisance). Deterministic per seed.
///
/// A score distribution carrying no nuisance information yields AUROC near
/// 0.5 (binary) or R^2 near 0 (continuous).
pub fn probe_nuisance(
    scores: &[f64],
    nuisance: &[f64],
    kind: NuisanceKind,
    probe_spec: &NetworkSpec,
    seed: u64,
) -> Result<ProbeReport> {
    if scores.len() != nuisance.len() {
        return Err(Error::Dimension(format!(
            "scores and nuisance lengths differ ({} vs {})",
            scores.len(),
            nuisance.len()
        )));
    }
    if scores.len() < PROBE_MIN_SAMPLES {
        return Err(Error::Degenerate(format!(
            "probe needs at least {PROBE_MIN_SAMPLES} samples, got {}",
            scores.len()
        )));
    }
    if probe_spec.input_dim() != 1 {
        return Err(Error::InvalidConfig(
            "probe network input dimension must be 1 (the score)".to_string(),
        ));
    }
    if probe_spec.output_dim() != 1 {
        return Err(Error::InvalidConfig(
            "probe network output dimension must be 1".to_string(),
        ));
    }
    let expected_activation = match kind {
        NuisanceKind::Binary => OutputActivation::Sigmoid,
        NuisanceKind::Continuous => OutputActivation::Linear,
    };
    if probe_spec.output_activation() != expected_activation {
        return Err(Error::InvalidConfig(format!(
            "nuisance kind {kind:?} requires output activation {expected_activation:?}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, test_idx) = split_indices(nuisance, kind, &mut rng)?;

    let x_train = column_matrix(scores, &train_idx);
    let x_test = column_matrix(scores, &test_idx);
    let v_train: Array1<f64> = train_idx.iter().map(|&i| nuisance[i]).collect();
    let v_test: Vec<f64> = test_idx.iter().map(|&i| nuisance[i]).collect();

    // Continuous targets are standardized for training so the MSE gradients
    // are O(1) regardless of the nuisance's unit; reported MSE is raw-scale.
    let (train_targets, target_mean, target_sd) = match kind {
        NuisanceKind::Binary => (v_train.clone(), 0.0, 1.0),
        NuisanceKind::Continuous => {
            let mean = v_train.sum() / v_train.len() as f64;
            let var =
                v_train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / v_train.len() as f64;
            let sd = var.sqrt().max(1e-12);
            (v_train.mapv(|v| (v - mean) / sd), mean, sd)
        }
    };
    let loss_kind = match kind {
        NuisanceKind::Binary => LossKind::Bce,
        NuisanceKind::Continuous => LossKind::Mse,
    };

    let mut params = init_params(probe_spec, rng.gen_seed(), InitScheme::ScaledUniform);
    let mut opt = OptimizerState::new(&params, PROBE_LR)?;
    let n_train = train_idx.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    for _ in 0..PROBE_EPOCHS {
        order.shuffle(&mut rng);
        for chunk in order.chunks(PROBE_BATCH) {
            let xb = rows(&x_train, chunk);
            let tb: Array1<f64> = chunk.iter().map(|&i| train_targets[i]).collect();
            let trace = forward(probe_spec, &params, xb.view())?;
            let grads = backward(probe_spec, &params, &trace, loss_kind, tb.view(), None)?;
            sgd_step(&mut params, &grads, &mut opt, PROBE_MOMENTUM, PROBE_WEIGHT_DECAY)?;
        }
    }

    let test_trace = forward(probe_spec, &params, x_test.view())?;
    let preds = test_trace.scores();
    let metric = match kind {
        NuisanceKind::Binary => {
            let p: Vec<f64> = preds.to_vec();
            ProbeMetric::Binary {
                auroc: auroc(&p, &v_test)?,
                roc: roc_curve(&p, &v_test)?,
            }
        }
        NuisanceKind::Continuous => {
            let raw_preds: Array1<f64> = preds.mapv(|p| p * target_sd + target_mean);
            let targets = Array1::from_vec(v_test.clone());
            let mse = mse_loss(raw_preds.view(), targets.view())?;
            let test_mean = v_test.iter().sum::<f64>() / v_test.len() as f64;
            let ss_tot: f64 = v_test.iter().map(|v| (v - test_mean).powi(2)).sum();
            let ss_res: f64 = raw_preds
                .iter()
                .zip(&v_test)
                .map(|(p, t)| (p - t).powi(2))
                .sum();
            let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
            ProbeMetric::Continuous { r2, mse }
        }
    };
    Ok(ProbeReport {
        probe_spec: probe_spec.clone(),
        probe_params: params,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        metric,
    })
}

/// The adversary topology doubles as the default probe.
#[cfg(test)]
pub(crate) fn default_probe_spec(kind: NuisanceKind) -> NetworkSpec {
    let out = match kind {
        NuisanceKind::Binary => OutputActivation::Sigmoid,
        NuisanceKind::Continuous => OutputActivation::Linear,
    };
    NetworkSpec::new(vec![1, 32, 32, 32, 1], crate::net::HiddenActivation::Relu, out)
        .expect("static spec is valid")
}

fn split_indices(
    nuisance: &[f64],
    kind: NuisanceKind,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    match kind {
        NuisanceKind::Binary => {
            let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (i, &v) in nuisance.iter().enumerate() {
                if v == 0.0 {
                    by_class[0].push(i);
                } else if v == 1.0 {
                    by_class[1].push(i);
                } else {
                    return Err(Error::InvalidConfig(format!(
                        "binary nuisance must be 0 or 1, got {v}"
                    )));
                }
            }
            for class in &mut by_class {
                if class.len() < 10 {
                    return Err(Error::Degenerate(
                        "each nuisance class needs at least 10 samples".to_string(),
                    ));
                }
                class.shuffle(rng);
                let cut = (class.len() as f64 * PROBE_TRAIN_FRACTION).floor() as usize;
                train.extend_from_slice(&class[..cut]);
                test.extend_from_slice(&class[cut..]);
            }
            train.sort_unstable();
            test.sort_unstable();
        }
        NuisanceKind::Continuous => {
            let mut idx: Vec<usize> = (0..nuisance.len()).collect();
            idx.shuffle(rng);
            let cut = (idx.len() as f64 * PROBE_TRAIN_FRACTION).floor() as usize;
            train = idx[..cut].to_vec();
            test = idx[cut..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
        }
    }
    Ok((train, test))
}

fn column_matrix(values: &[f64], indices: &[usize]) -> Array2<f64> {
    let mut m = Array2::zeros((indices.len(), 1));
    for (r, &i) in indices.iter().enumerate() {
        m[[r, 0]] = values[i];
    }
    m
}

fn rows(m: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), m.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

trait SeedFrom {
    fn gen_seed(&mut self) -> u64;
}

impl SeedFrom for ChaCha8Rng {
    fn gen_seed(&mut self) -> u64 {
        rand::Rng::gen(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn binary_spec() -> NetworkSpec {
        default_probe_spec(NuisanceKind::Binary)
    }

    #[test]
    fn shuffled_nuisance_is_unpredictable() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let n = 3000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let nuisance: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let report =
            probe_nuisance(&scores, &nuisance, NuisanceKind::Binary, &binary_spec(), 5).unwrap();
        let a = report.headline();
        assert!((0.45..=0.55).contains(&a), "auroc {a}");
    }

    #[test]
    fn near_perfect_dependence_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let n = 1500;
        let nuisance: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let scores: Vec<f64> = nuisance
            .iter()
            .map(|&v| 0.3 + 0.4 * v + rng.gen_range(-0.02..0.02))
            .collect();
        let report =
            probe_nuisance(&scores, &nuisance, NuisanceKind::Binary, &binary_spec(), 6).unwrap();
        assert!(report.headline() > 0.95, "auroc {}", report.headline());
    }

    #[test]
    fn probe_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let n = 400;
        let nuisance: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let scores: Vec<f64> = nuisance
            .iter()
            .map(|&v| 0.4 + 0.1 * v + rng.gen_range(-0.2..0.2))
            .collect();
        let a = probe_nuisance(&scores, &nuisance, NuisanceKind::Binary, &binary_spec(), 9)
            .unwrap();
        let b = probe_nuisance(&scores, &nuisance, NuisanceKind::Binary, &binary_spec(), 9)
            .unwrap();
        assert_eq!(a.headline(), b.headline());
        assert_eq!(a.probe_params, b.probe_params);
    }

    #[test]
    fn continuous_probe_recovers_linear_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let n = 2000;
        let ages: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..100.0)).collect();
        let scores: Vec<f64> = ages
            .iter()
            .map(|&a| (a - 60.0) / 80.0 + rng.gen_range(-0.05..0.05))
            .collect();
        let spec = default_probe_spec(NuisanceKind::Continuous);
        let report =
            probe_nuisance(&scores, &ages, NuisanceKind::Continuous, &spec, 11).unwrap();
        match report.metric {
            ProbeMetric::Continuous { r2, mse } => {
                assert!(r2 > 0.8, "r2 {r2}");
                assert!(mse < 120.0, "mse {mse}");
            }
            _ => panic!("expected continuous metric"),
        }
    }

    #[test]
    fn continuous_probe_on_independent_scores_reports_no_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let n = 2000;
        let ages: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..100.0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let spec = default_probe_spec(NuisanceKind::Continuous);
        let report =
            probe_nuisance(&scores, &ages, NuisanceKind::Continuous, &spec, 12).unwrap();
        match report.metric {
            ProbeMetric::Continuous { r2, .. } => {
                assert!(r2 < 0.05 && r2 > -0.25, "r2 {r2}");
            }
            _ => panic!("expected continuous metric"),
        }
    }

    #[test]
    fn too_few_samples_or_degenerate_classes_are_rejected() {
        let scores = vec![0.5; 100];
        let nuisance = vec![0.0; 100];
        assert!(
            probe_nuisance(&scores, &nuisance, NuisanceKind::Binary, &binary_spec(), 1).is_err()
        );
        let scores = vec![0.5; 300];
        let nuisance = vec![1.0; 300];
        assert!(
            probe_nuisance(&scores, &nuisance, NuisanceKind::Binary, &binary_spec(), 1).is_err()
        );
    }

    #[test]
    fn kind_activation_mismatch_is_rejected() {
        let scores = vec![0.5; 300];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nuisance: Vec<f64> = (0..300).map(|_| rng.gen_range(0..2) as f64).collect();
        let wrong = default_probe_spec(NuisanceKind::Continuous);
        assert!(
            probe_nuisance(&scores, &nuisance, NuisanceKind::Binary, &wrong, 1).is_err()
        );
    }

    /// Spec invariant: on independently shuffled nuisance the probe stays in
    /// [0.45, 0.55] almost always.
    #[test]
    fn null_probe_is_calibrated_across_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let n = 3000;
        let mut pass = 0;
        let trials = 100;
        for t in 0..trials {
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let nuisance: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
            let report = probe_nuisance(
                &scores,
                &nuisance,
                NuisanceKind::Binary,
                &binary_spec(),
                t as u64,
            )
            .unwrap();
            if (0.45..=0.55).contains(&report.headline()) {
                pass += 1;
            }
        }
        assert!(pass >= 95, "only {pass}/{trials} trials inside [0.45, 0.55]");
    }
}
