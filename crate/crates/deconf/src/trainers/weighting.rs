use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{run_erm, ErmMode, TrainConfig, TrainedModel};
use crate::synthgen::{Dataset, NuisanceKind};
use crate::{Error, Result};

/// Per-(Y, V) instance weights `P(Y=y) / P(Y=y | V=v)` from empirical
/// counts, together with the densities they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceWeightTable {
    /// Indexed `[y][v]`.
    pub weights: [[f64; 2]; 2],
    pub p_y: [f64; 2],
    /// Indexed `[y][v]`.
    pub p_y_given_v: [[f64; 2]; 2],
}

impl InstanceWeightTable {
    pub fn weight_for(&self, label: u8, nuisance: u8) -> f64 {
        self.weights[label as usize][nuisance as usize]
    }
}

/// Empirical instance weights for a binary nuisance. Errors when any (Y, V)
/// cell is empty or the nuisance is continuous.
pub fn compute_instance_weights(dataset: &Dataset) -> Result<InstanceWeightTable> {
    if dataset.nuisance_kind() != NuisanceKind::Binary {
        return Err(Error::InvalidConfig(
            "instance weighting requires a binary nuisance".to_string(),
        ));
    }
    let cells = dataset.cell_counts()?;
    for y in 0..2 {
        for v in 0..2 {
            if cells[y][v] == 0 {
                return Err(Error::Degenerate(format!(
                    "empty cell: no samples with label {y} and nuisance {v}"
                )));
            }
        }
    }
    let n = dataset.len() as f64;
    let n_v = [
        (cells[0][0] + cells[1][0]) as f64,
        (cells[0][1] + cells[1][1]) as f64,
    ];
    let mut p_y = [0.0; 2];
    let mut p_y_given_v = [[0.0; 2]; 2];
    let mut weights = [[0.0; 2]; 2];
    for y in 0..2 {
        p_y[y] = (cells[y][0] + cells[y][1]) as f64 / n;
        for v in 0..2 {
            p_y_given_v[y][v] = cells[y][v] as f64 / n_v[v];
            weights[y][v] = p_y[y] / p_y_given_v[y][v];
        }
    }
    Ok(InstanceWeightTable {
        weights,
        p_y,
        p_y_given_v,
    })
}

/// Draws sample indices with replacement, probability proportional to each
/// sample's weight.
pub(crate) struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let dist = WeightedIndex::new(weights.iter().copied()).map_err(|e| {
            Error::InvalidConfig(format!("invalid sampling weights: {e}"))
        })?;
        Ok(Self { dist })
    }

    pub fn sample_batch(&self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<usize> {
        (0..batch_size).map(|_| self.dist.sample(rng)).collect()
    }
}

/// ERM where each minibatch is drawn with replacement, sampling probability
/// proportional to `P(Y) / P(Y|V)`; otherwise identical to standard
/// training (the loss itself stays unweighted).
pub fn train_instance_weighted(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    let table = compute_instance_weights(dataset)?;
    let weights: Vec<f64> = dataset
        .samples()
        .iter()
        .map(|s| table.weight_for(s.label, s.nuisance as u8))
        .collect();
    run_erm(dataset, config, ErmMode::InstanceWeighted(weights))
}

/// Equalize the label base rate across the two nuisance subgroups by
/// randomly deleting label-negative samples from the lower-rate subgroup
/// (positives are never deleted). Deterministic per seed; a dataset whose
/// rates already match is returned unchanged.
pub fn match_subsample(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    if dataset.nuisance_kind() != NuisanceKind::Binary {
        return Err(Error::InvalidConfig(
            "matching requires a binary nuisance".to_string(),
        ));
    }
    let cells = dataset.cell_counts()?;
    let pos = [cells[1][0] as f64, cells[1][1] as f64];
    let neg = [cells[0][0] as f64, cells[0][1] as f64];
    let n_view = [pos[0] + neg[0], pos[1] + neg[1]];
    if n_view[0] == 0.0 || n_view[1] == 0.0 {
        return Err(Error::Degenerate("a nuisance subgroup is empty".to_string()));
    }
    let rate = [pos[0] / n_view[0], pos[1] / n_view[1]];
    if rate[0] == rate[1] {
        return Ok(dataset.clone());
    }
    // `low` is the subgroup with the smaller positive rate (equivalently
    // the larger negative share); deleting its negatives raises its rate.
    let low = if rate[0] < rate[1] { 0usize } else { 1usize };
    let high = 1 - low;
    if pos[low] == 0.0 {
        return Err(Error::Infeasible(
            "a subgroup has no positives; rates cannot be matched by deleting negatives"
                .to_string(),
        ));
    }
    // Solve pos_low / (pos_low + neg_low') = pos_high / (pos_high + neg_high).
    let neg_target = (pos[low] * neg[high] / pos[high]).round();
    let delete_count = (neg[low] - neg_target) as usize;
    let mut candidates: Vec<usize> = dataset
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == 0 && s.nuisance as usize == low)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut drop: Vec<usize> = candidates.into_iter().take(delete_count).collect();
    drop.sort_unstable();
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|i| drop.binary_search(i).is_err())
        .collect();
    Ok(dataset.subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{engineered_imbalance, realize_counts, GenConfig};
    use crate::trainers::test_support::easy_dataset;
    use rand::Rng;

    fn imbalanced_dataset(ratio: f64, seed: u64) -> Dataset {
        let counts = engineered_imbalance(ratio, 10_000, 0.05).unwrap();
        realize_counts(
            &counts,
            &GenConfig {
                seed,
                ..GenConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn balanced_cells_give_unit_weights() {
        let ds = imbalanced_dataset(1.0, 1);
        let t = compute_instance_weights(&ds).unwrap();
        for y in 0..2u8 {
            for v in 0..2u8 {
                assert!((t.weight_for(y, v) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hundred_to_one_minority_cell_weight_is_fifty() {
        // Cells (10, 9990, 990, 9010): P(Y=1) = 0.05, P(Y=1|V=0) = 0.001.
        let ds = imbalanced_dataset(100.0, 2);
        let t = compute_instance_weights(&ds).unwrap();
        assert!((t.weight_for(1, 0) - 50.0).abs() < 1e-9, "{}", t.weight_for(1, 0));
        assert!((t.p_y[1] - 0.05).abs() < 1e-12);
        assert!((t.p_y_given_v[1][0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn weight_identity_against_count_arithmetic() {
        let ds = imbalanced_dataset(10.0, 3);
        let t = compute_instance_weights(&ds).unwrap();
        let cells = ds.cell_counts().unwrap();
        let n = ds.len() as f64;
        for y in 0..2usize {
            for v in 0..2usize {
                let n_y = (cells[y][0] + cells[y][1]) as f64;
                let n_v = (cells[0][v] + cells[1][v]) as f64;
                let direct = (n_y * n_v) / (n * cells[y][v] as f64);
                assert!((t.weights[y][v] - direct).abs() < 1e-12);
            }
        }
        // Sum over samples of their weight equals sum over cells of
        // count * weight.
        let per_sample: f64 = ds
            .samples()
            .iter()
            .map(|s| t.weight_for(s.label, s.nuisance as u8))
            .sum();
        let per_cell: f64 = (0..2)
            .flat_map(|y| (0..2).map(move |v| (y, v)))
            .map(|(y, v)| cells[y][v] as f64 * t.weights[y][v])
            .sum();
        assert!((per_sample - per_cell).abs() < 1e-6);
    }

    #[test]
    fn empty_cell_and_continuous_nuisance_are_rejected() {
        let counts = crate::synthgen::ImbalanceCounts {
            pos_v0: 0,
            neg_v0: 100,
            pos_v1: 10,
            neg_v1: 90,
        };
        let ds = realize_counts(&counts, &GenConfig::default()).unwrap();
        assert!(compute_instance_weights(&ds).is_err());
        let cont = crate::synthgen::continuous_nuisance_variant(
            &GenConfig {
                n_samples: 500,
                ..GenConfig::default()
            },
            0.5,
        )
        .unwrap();
        assert!(compute_instance_weights(&cont).is_err());
    }

    #[test]
    fn uniform_weights_sample_uniformly() {
        let n = 50usize;
        let sampler = WeightedSampler::new(&vec![1.0; n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 100_000usize;
        let mut counts = vec![0usize; n];
        for idx in sampler.sample_batch(&mut rng, draws) {
            counts[idx] += 1;
        }
        // Chi-square goodness of fit against uniform; 49 dof, p=0.001
        // critical value is ~85.4.
        let expect = draws as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        assert!(chi2 < 85.4, "chi-square {chi2}");
    }

    #[test]
    fn sampled_cell_frequencies_follow_count_times_weight() {
        let ds = imbalanced_dataset(100.0, 5);
        let t = compute_instance_weights(&ds).unwrap();
        let weights: Vec<f64> = ds
            .samples()
            .iter()
            .map(|s| t.weight_for(s.label, s.nuisance as u8))
            .collect();
        let sampler = WeightedSampler::new(&weights).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = 100_000usize;
        let mut cell_draws = [[0usize; 2]; 2];
        for idx in sampler.sample_batch(&mut rng, draws) {
            let s = &ds.samples()[idx];
            cell_draws[s.label as usize][s.nuisance as usize] += 1;
        }
        let cells = ds.cell_counts().unwrap();
        let total_mass: f64 = (0..2)
            .flat_map(|y| (0..2).map(move |v| (y, v)))
            .map(|(y, v)| cells[y][v] as f64 * t.weights[y][v])
            .sum();
        for y in 0..2usize {
            for v in 0..2usize {
                let p = cells[y][v] as f64 * t.weights[y][v] / total_mass;
                let got = cell_draws[y][v] as f64 / draws as f64;
                let se = (p * (1.0 - p) / draws as f64).sqrt();
                assert!(
                    (got - p).abs() <= 3.0 * se,
                    "cell ({y},{v}): drew {got}, expected {p} (se {se})"
                );
            }
        }
    }

    #[test]
    fn instance_weighted_training_runs_and_is_deterministic() {
        let ds = imbalanced_dataset(2.0, 7);
        let cfg = TrainConfig {
            max_epochs: 4,
            seed: 8,
            ..TrainConfig::default()
        };
        let a = train_instance_weighted(&ds, &cfg).unwrap();
        let b = train_instance_weighted(&ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn matching_leaves_balanced_data_unchanged() {
        let ds = imbalanced_dataset(1.0, 9);
        let matched = match_subsample(&ds, 1).unwrap();
        assert_eq!(matched.samples(), ds.samples());
    }

    #[test]
    fn matching_equalizes_rates_within_tolerance() {
        for ratio in [2.0, 10.0, 100.0] {
            let ds = imbalanced_dataset(ratio, 10);
            let matched = match_subsample(&ds, 2).unwrap();
            let cells = matched.cell_counts().unwrap();
            let n0 = (cells[0][0] + cells[1][0]) as f64;
            let n1 = (cells[0][1] + cells[1][1]) as f64;
            let r0 = cells[1][0] as f64 / n0;
            let r1 = cells[1][1] as f64 / n1;
            assert!(
                (r0 - r1).abs() < 1.0 / n0.min(n1),
                "ratio {ratio}: rates {r0} vs {r1}"
            );
        }
    }

    #[test]
    fn matching_deletes_exactly_the_computed_count_of_negatives() {
        let ds = imbalanced_dataset(100.0, 11);
        let cells = ds.cell_counts().unwrap();
        // V=0 has the lower rate; its negatives shrink to
        // round(pos_v0 * neg_v1 / pos_v1).
        let target =
            (cells[1][0] as f64 * cells[0][1] as f64 / cells[1][1] as f64).round() as usize;
        let expected_deletions = cells[0][0] - target;
        let matched = match_subsample(&ds, 3).unwrap();
        assert_eq!(ds.len() - matched.len(), expected_deletions);
        let after = matched.cell_counts().unwrap();
        assert_eq!(after[0][0], target);
        // Positives and the other subgroup are untouched.
        assert_eq!(after[1][0], cells[1][0]);
        assert_eq!(after[1][1], cells[1][1]);
        assert_eq!(after[0][1], cells[0][1]);
    }

    #[test]
    fn matching_is_deterministic_per_seed() {
        let ds = imbalanced_dataset(10.0, 12);
        let a = match_subsample(&ds, 5).unwrap();
        let b = match_subsample(&ds, 5).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = match_subsample(&ds, 6).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn matching_without_positives_is_infeasible() {
        let counts = crate::synthgen::ImbalanceCounts {
            pos_v0: 0,
            neg_v0: 100,
            pos_v1: 20,
            neg_v1: 80,
        };
        let ds = realize_counts(&counts, &GenConfig::default()).unwrap();
        assert!(matches!(
            match_subsample(&ds, 1),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn weighted_sampler_rejects_all_zero_weights() {
        assert!(WeightedSampler::new(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn instance_weighted_on_easy_data_still_learns() {
        let ds = easy_dataset(3000, 13);
        let cfg = TrainConfig {
            max_epochs: 10,
            seed: 14,
            ..TrainConfig::default()
        };
        let model = train_instance_weighted(&ds, &cfg).unwrap();
        let test = easy_dataset(1500, 15);
        let scores = model.scores(test.features_matrix().view()).unwrap();
        let a = crate::diagnostics::auroc(&scores.to_vec(), &test.labels().to_vec()).unwrap();
        assert!(a > 0.9, "auroc {a}");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _: f64 = rng.gen();
    }
}
