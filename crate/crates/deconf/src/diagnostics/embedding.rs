use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Mean-centered projection onto the leading principal directions.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// `n x k` projected coordinates.
    pub embedding: Array2<f64>,
    /// `k x d` orthonormal component rows.
    pub components: Array2<f64>,
    /// Per-component sample variance (eigenvalues of the covariance with
    /// the `n - 1` denominator), descending.
    pub explained_variance: Vec<f64>,
    /// Set when a requested component has (numerically) zero variance; its
    /// variance is reported as exactly 0.
    pub rank_deficient: bool,
}

/// How aligned the nuisance axis and the label axis are in an embedding.
#[derive(Debug, Clone)]
pub struct OrthogonalityReport {
    /// First two principal coordinates of the embedding, `n x 2`.
    pub embedding: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub view_weights: [f64; 2],
    pub view_bias: f64,
    pub pathology_weights: [f64; 2],
    pub pathology_bias: f64,
    /// Normalized inner product (cosine) of the two logistic-regression
    /// weight vectors: 0 means the separating axes are orthogonal, +/-1
    /// that they coincide.
    pub weight_correlation: f64,
}

/// PCA via a cyclic Jacobi eigendecomposition of the sample covariance.
pub fn pca_embed(data: ArrayView2<f64>, k: usize) -> Result<PcaResult> {
    let (n, d) = data.dim();
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".to_string()));
    }
    if d < k || n < k {
        return Err(Error::Dimension(format!(
            "pca_embed needs at least k={k} rows and columns, got {n}x{d}"
        )));
    }
    if n < 2 {
        return Err(Error::Degenerate("pca_embed needs at least 2 rows".to_string()));
    }
    let mean = data.mean_axis(Axis(0)).unwrap();
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let (eigvals, eigvecs) = jacobi_eigh(&cov);
    let scale = eigvals.first().copied().unwrap_or(0.0).max(1.0);
    let tol = 1e-12 * scale;
    let mut rank_deficient = false;
    let mut explained_variance = Vec::with_capacity(k);
    let mut components = Array2::zeros((k, d));
    for c in 0..k {
        let lambda = eigvals[c];
        if lambda <= tol {
            rank_deficient = true;
            explained_variance.push(0.0);
        } else {
            explained_variance.push(lambda);
        }
        components.row_mut(c).assign(&eigvecs.column(c));
    }
    let embedding = centered.dot(&components.t());
    Ok(PcaResult {
        embedding,
        components,
        explained_variance,
        rank_deficient,
    })
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns.
fn jacobi_eigh(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = matrix.nrows();
    let mut a = matrix.clone();
    let mut v: Array2<f64> = Array2::eye(d);
    let off = |a: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for p in 0..d {
            for q in 0..d {
                if p != q {
                    s += a[[p, q]] * a[[p, q]];
                }
            }
        }
        s.sqrt()
    };
    let fro = {
        let mut s = 0.0;
        for x in a.iter() {
            s += x * x;
        }
        s.sqrt().max(f64::MIN_POSITIVE)
    };
    for _sweep in 0..100 {
        if off(&a) <= 1e-14 * fro {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = c * aip - s * aiq;
                    a[[i, q]] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[[p, j]];
                    let aqj = a[[q, j]];
                    a[[p, j]] = c * apj - s * aqj;
                    a[[q, j]] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| a[[i, i]].max(0.0)).collect();
    let mut vecs = Array2::zeros((d, d));
    for (col, &i) in order.iter().enumerate() {
        vecs.column_mut(col).assign(&v.column(i));
    }
    (eigvals, vecs)
}

/// Unregularized logistic regression on a small design matrix by plain
/// gradient descent: stops when the gradient max-norm falls below 1e-8 or
/// after 1e5 steps (separable data never converges in norm; the direction,
/// which is all the cosine needs, does).
fn fit_logistic(features: &Array2<f64>, labels: &[f64]) -> (Array1<f64>, f64) {
    let (n, d) = features.dim();
    let n_f = n as f64;
    // 1/L step size from the trace bound on the logistic Hessian.
    let mean_sq: f64 = features.iter().map(|x| x * x).sum::<f64>() / n_f + 1.0;
    let lr = 1.0 / (0.25 * mean_sq);
    let mut w = Array1::zeros(d);
    let mut b = 0.0;
    for _ in 0..100_000 {
        let mut grad_w = Array1::<f64>::zeros(d);
        let mut grad_b = 0.0;
        let logits = features.dot(&w) + b;
        for i in 0..n {
            let p = crate::net::sigmoid(logits[i]);
            let err = (p - labels[i]) / n_f;
            grad_b += err;
            for j in 0..d {
                grad_w[j] += err * features[[i, j]];
            }
        }
        let max_norm = grad_w
            .iter()
            .fold(grad_b.abs(), |acc, g| acc.max(g.abs()));
        if max_norm < 1e-8 {
            break;
        }
        w.scaled_add(-lr, &grad_w);
        b -= lr * grad_b;
    }
    (w, b)
}

/// Project an embedding onto its first two principal components, fit one
/// logistic regression per label set on those coordinates, and report the
/// cosine between the two weight vectors (bias excluded).
pub fn orthogonality(
    hidden: ArrayView2<f64>,
    view_labels: &[f64],
    pathology_labels: &[f64],
) -> Result<OrthogonalityReport> {
    let n = hidden.nrows();
    for (name, labels) in [("view", view_labels), ("pathology", pathology_labels)] {
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{name} labels length {} does not match {n} rows",
                labels.len()
            )));
        }
        let pos = labels.iter().filter(|&&l| l == 1.0).count();
        if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
            return Err(Error::InvalidConfig(format!(
                "{name} labels must be 0 or 1"
            )));
        }
        if pos == 0 || pos == n {
            return Err(Error::Degenerate(format!(
                "{name} labels are single-class"
            )));
        }
    }
    let pca = pca_embed(hidden, 2)?;
    let (wv, bv) = fit_logistic(&pca.embedding, view_labels);
    let (wp, bp) = fit_logistic(&pca.embedding, pathology_labels);
    let dot = wv.dot(&wp);
    let norm = wv.dot(&wv).sqrt() * wp.dot(&wp).sqrt();
    let weight_correlation = if norm > 0.0 { dot / norm } else { 0.0 };
    Ok(OrthogonalityReport {
        embedding: pca.embedding,
        explained_variance: pca.explained_variance,
        view_weights: [wv[0], wv[1]],
        view_bias: bv,
        pathology_weights: [wp[0], wp[1]],
        pathology_bias: bp,
        weight_correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn line_in_2d_loads_on_first_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200;
        let data = Array2::from_shape_fn((n, 2), |(i, j)| {
            let t = i as f64 / n as f64 - 0.5;
            let v = if j == 0 { t } else { 2.0 * t };
            v + 1e-9 * rng.gen_range(-1.0..1.0)
        });
        let pca = pca_embed(data.view(), 2).unwrap();
        let total: f64 = pca.explained_variance.iter().sum();
        assert!(pca.explained_variance[0] / total > 0.999999);
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_matrix(&mut rng, 120, 6);
        let pca = pca_embed(data.view(), 3).unwrap();
        let gram = pca.components.dot(&pca.components.t());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[[i, j]] - expect).abs() < 1e-10,
                    "gram[{i},{j}] = {}",
                    gram[[i, j]]
                );
            }
        }
    }

    #[test]
    fn reconstruction_error_equals_discarded_eigenvalue_mass() {
        // Route one: project to k components, reconstruct, measure the
        // squared error directly. Route two: (n-1) times the sum of the
        // discarded eigenvalues. These must agree.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let d = 5;
        let data = random_matrix(&mut rng, n, d);
        let k = 2;
        let pca = pca_embed(data.view(), k).unwrap();
        let full = pca_embed(data.view(), d).unwrap();
        let mean = data.mean_axis(Axis(0)).unwrap();
        let centered = &data - &mean;
        let recon = pca.embedding.dot(&pca.components);
        let sse: f64 = (&centered - &recon).iter().map(|v| v * v).sum();
        let discarded: f64 = full.explained_variance[k..].iter().sum();
        let expect = discarded * (n as f64 - 1.0);
        assert!(
            (sse - expect).abs() < 1e-8 * expect.max(1.0),
            "sse {sse} vs eigenvalue mass {expect}"
        );
    }

    #[test]
    fn full_projection_is_a_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_matrix(&mut rng, 40, 4);
        let pca = pca_embed(data.view(), 4).unwrap();
        let mean = data.mean_axis(Axis(0)).unwrap();
        let centered = &data - &mean;
        // Pairwise inner products of centered rows survive a full-rank
        // orthonormal projection.
        for i in (0..40).step_by(7) {
            for j in (0..40).step_by(11) {
                let orig = centered.row(i).dot(&centered.row(j));
                let proj = pca.embedding.row(i).dot(&pca.embedding.row(j));
                assert!((orig - proj).abs() < 1e-9, "({i},{j}): {orig} vs {proj}");
            }
        }
    }

    #[test]
    fn rank_deficiency_is_flagged_and_padded_with_zero_variance() {
        let n = 30;
        // Second column is a multiple of the first: rank 1.
        let data = Array2::from_shape_fn((n, 2), |(i, j)| {
            let t = i as f64;
            if j == 0 {
                t
            } else {
                3.0 * t
            }
        });
        let pca = pca_embed(data.view(), 2).unwrap();
        assert!(pca.rank_deficient);
        assert_eq!(pca.explained_variance[1], 0.0);
        assert!(pca.explained_variance[0] > 0.0);
    }

    #[test]
    fn too_few_rows_or_columns_rejected() {
        let data = Array2::<f64>::zeros((1, 3));
        assert!(pca_embed(data.view(), 2).is_err());
        let data = Array2::<f64>::zeros((10, 1));
        assert!(pca_embed(data.view(), 2).is_err());
    }

    #[test]
    fn identical_tasks_have_aligned_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let hidden = Array2::from_shape_fn((n, 4), |(i, j)| {
            let class = (i % 2) as f64;
            class * 0.8 + rng.gen_range(-0.5..0.5) + j as f64 * 0.0
        });
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let report = orthogonality(hidden.view(), &labels, &labels).unwrap();
        assert!(
            report.weight_correlation.abs() > 0.999,
            "correlation {}",
            report.weight_correlation
        );
    }

    #[test]
    fn orthogonal_tasks_have_orthogonal_weights() {
        // Two independent coordinates each drive one label set; 5% label
        // noise keeps the fits non-separable. Cosine is rotation-invariant,
        // so the PCA basis choice cannot break this.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 800;
        let hidden = random_matrix(&mut rng, n, 2);
        let noisy = |raw: bool, rng: &mut ChaCha8Rng| {
            let flip = rng.gen_range(0.0..1.0) < 0.05;
            ((raw != flip) as u8) as f64
        };
        let mut view = Vec::with_capacity(n);
        let mut path = Vec::with_capacity(n);
        for i in 0..n {
            view.push(noisy(hidden[[i, 0]] > 0.0, &mut rng));
            path.push(noisy(hidden[[i, 1]] > 0.0, &mut rng));
        }
        let report = orthogonality(hidden.view(), &view, &path).unwrap();
        assert!(
            report.weight_correlation.abs() < 0.15,
            "correlation {}",
            report.weight_correlation
        );
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hidden = random_matrix(&mut rng, 50, 3);
        let ones = vec![1.0; 50];
        let mixed: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
        assert!(orthogonality(hidden.view(), &ones, &mixed).is_err());
        assert!(orthogonality(hidden.view(), &mixed, &ones).is_err());
    }
}
