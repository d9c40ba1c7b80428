use crate::synthgen::age_bin;
use crate::{Error, Result};

/// Two-sample Kolmogorov-Smirnov D statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// `sup_x |F_a(x) - F_b(x)|` over the pooled sample points.
    pub d_statistic: f64,
    pub n: usize,
    pub m: usize,
}

/// One pairwise subgroup comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgroupKs {
    pub bin_a: usize,
    pub bin_b: usize,
    pub ks: KsResult,
}

/// Exact two-sample KS statistic: the supremum of the absolute difference of
/// the two empirical CDFs, evaluated over the pooled sample points.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("ks_statistic needs non-empty samples".to_string()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ks_statistic inputs must be finite".to_string()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut best = 0.0f64;
    // Advance past every sample at the current pooled value before
    // comparing, so ties contribute the CDF values just after the jump.
    while i < n || j < m {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < n && sa[i] == x {
            i += 1;
        }
        while j < m && sb[j] == x {
            j += 1;
        }
        let fa = i as f64 / n as f64;
        let fb = j as f64 / m as f64;
        best = best.max((fa - fb).abs());
    }
    Ok(KsResult {
        d_statistic: best,
        n,
        m,
    })
}

/// KS D statistics between every pair of nuisance bins.
///
/// `bin_edges` must be ascending; values fall into `edges.len() + 1` bins
/// (the default age edges `[45, 65, 85]` give four). Errors if any bin is
/// empty.
pub fn pairwise_subgroup_ks(
    scores: &[f64],
    nuisance: &[f64],
    bin_edges: &[f64],
) -> Result<Vec<SubgroupKs>> {
    if scores.len() != nuisance.len() {
        return Err(Error::Dimension(format!(
            "scores and nuisance lengths differ ({} vs {})",
            scores.len(),
            nuisance.len()
        )));
    }
    if bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("bin edges must be ascending".to_string()));
    }
    let n_bins = bin_edges.len() + 1;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (s, v) in scores.iter().zip(nuisance) {
        bins[age_bin(*v, bin_edges)].push(*s);
    }
    for (k, b) in bins.iter().enumerate() {
        if b.is_empty() {
            return Err(Error::Degenerate(format!("nuisance bin {k} is empty")));
        }
    }
    let mut out = Vec::with_capacity(n_bins * (n_bins - 1) / 2);
    for a in 0..n_bins {
        for b in (a + 1)..n_bins {
            out.push(SubgroupKs {
                bin_a: a,
                bin_b: b,
                ks: ks_statistic(&bins[a], &bins[b])?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: evaluate both empirical CDFs at every pooled
    /// point by direct counting.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for &x in a.iter().chain(b.iter()) {
            let fa = a.iter().filter(|&&v| v <= x).count() as f64 / a.len() as f64;
            let fb = b.iter().filter(|&&v| v <= x).count() as f64 / b.len() as f64;
            best = best.max((fa - fb).abs());
        }
        best
    }

    #[test]
    fn identical_samples_give_zero() {
        let a = [1.0, 2.0, 3.0];
        let r = ks_statistic(&a, &a).unwrap();
        assert_eq!(r.d_statistic, 0.0);
    }

    #[test]
    fn disjoint_supports_give_one() {
        let r = ks_statistic(&[1.0, 2.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(r.d_statistic, 1.0);
        assert_eq!((r.n, r.m), (2, 3));
    }

    #[test]
    fn shifted_triplet_gives_one_third() {
        let r = ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.d_statistic - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..60 {
            let n = rng.gen_range(1..80);
            let m = rng.gen_range(1..80);
            // Small integer grid so ties across the two samples are common.
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0..10) as f64 + 0.5 * ((trial % 2) as f64)).collect();
            let got = ks_statistic(&a, &b).unwrap().d_statistic;
            let expect = ks_brute(&a, &b);
            assert!(
                (got - expect).abs() < 1e-12,
                "trial {trial}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn symmetric_and_transform_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let a: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..70).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let d_ab = ks_statistic(&a, &b).unwrap().d_statistic;
        let d_ba = ks_statistic(&b, &a).unwrap().d_statistic;
        assert_eq!(d_ab, d_ba);
        let warp = |v: f64| v.exp() + v;
        let wa: Vec<f64> = a.iter().map(|&v| warp(v)).collect();
        let wb: Vec<f64> = b.iter().map(|&v| warp(v)).collect();
        let d_w = ks_statistic(&wa, &wb).unwrap().d_statistic;
        assert!((d_ab - d_w).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(ks_statistic(&[], &[1.0]).is_err());
        assert!(ks_statistic(&[1.0], &[]).is_err());
    }

    #[test]
    fn four_bins_give_six_pairs() {
        let nuisance: Vec<f64> = vec![30.0, 50.0, 70.0, 90.0, 40.0, 60.0, 80.0, 99.0];
        let scores: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let pairs = pairwise_subgroup_ks(&scores, &nuisance, &[45.0, 65.0, 85.0]).unwrap();
        assert_eq!(pairs.len(), 6);
        let keys: Vec<(usize, usize)> = pairs.iter().map(|p| (p.bin_a, p.bin_b)).collect();
        assert_eq!(keys, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn identical_distribution_across_bins_gives_small_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 8000;
        let nuisance: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..100.0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pairs = pairwise_subgroup_ks(&scores, &nuisance, &[45.0, 65.0, 85.0]).unwrap();
        for p in pairs {
            assert!(p.ks.d_statistic < 0.08, "pair {:?}", p);
        }
    }

    #[test]
    fn empty_bin_is_rejected() {
        let nuisance = vec![30.0, 50.0, 70.0]; // nothing above 85
        let scores = vec![0.1, 0.2, 0.3];
        assert!(pairwise_subgroup_ks(&scores, &nuisance, &[45.0, 65.0, 85.0]).is_err());
    }
}
