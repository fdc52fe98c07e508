//! Principal component analysis by symmetric eigendecomposition of the
//! smaller of the Gram and covariance matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// `n x k` projected coordinates.
    pub scores: Vec<Vec<f64>>,
    /// `k x p` orthonormal principal axes.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

fn check_rows(x: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Validation(format!("PCA needs at least 2 rows, got {n}")));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(Error::Validation("PCA rows must be non-empty and of equal length".into()));
    }
    Ok((n, p))
}

/// Projects mean-centered rows onto the top `k` principal axes. `k` is
/// reduced to `min(n - 1, p)` with a warning when larger. Each axis is
/// signed so that its largest-magnitude coordinate is positive.
pub fn pca_reduce(x: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let (n, p) = check_rows(x)?;
    let bound = (n - 1).min(p);
    let k = if k > bound {
        log::warn!("PCA target {k} exceeds min(n - 1, p) = {bound}; using {bound}");
        bound
    } else {
        k
    };
    let mut mean = vec![0.0; p];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - mean[j]);
    let dof = (n - 1) as f64;

    // top-k covariance eigenpairs, largest first, and the total variance
    let (explained_variance, axes, total): (Vec<f64>, Vec<Vec<f64>>, f64) = if n <= p {
        let gram = &xc * xc.transpose();
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut values = Vec::new();
        let mut axes = Vec::new();
        for &i in order.iter().take(k) {
            let lambda = eig.eigenvalues[i].max(0.0);
            let u = eig.eigenvectors.column(i);
            let v = xc.transpose() * u;
            let norm = v.norm();
            let axis = if norm > 0.0 { v / norm } else { v };
            values.push(lambda / dof);
            axes.push(axis.iter().copied().collect());
        }
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum::<f64>() / dof;
        (values, axes, total)
    } else {
        let cov = xc.transpose() * &xc / dof;
        let total = cov.trace();
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut values = Vec::new();
        let mut axes = Vec::new();
        for &i in order.iter().take(k) {
            values.push(eig.eigenvalues[i].max(0.0));
            axes.push(eig.eigenvectors.column(i).iter().copied().collect());
        }
        (values, axes, total)
    };

    let mut components: Vec<Vec<f64>> = axes;
    for axis in &mut components {
        let lead = axis
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let scores = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|axis| (0..p).map(|j| xc[(i, j)] * axis[j]).sum())
                .collect()
        })
        .collect();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaResult {
        scores,
        components,
        mean,
        explained_variance,
        explained_variance_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Cyclic Jacobi eigenvalues of a symmetric matrix.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (n, p) = (x.len(), x[0].len());
        let mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        (0..p)
            .map(|a| {
                (0..p)
                    .map(|b| x.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn collinear_points() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let r = pca_reduce(&x, 3).unwrap();
        assert!((r.explained_variance_ratio[0] - 1.0).abs() < 1e-10);
        assert!(r.explained_variance_ratio[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = crate::rng::seeded(4);
        use rand::Rng;
        let x: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let r = pca_reduce(&x, 4).unwrap();
        for (i, row) in x.iter().enumerate() {
            for j in 0..4 {
                let rec: f64 = r.mean[j] + (0..4).map(|c| r.scores[i][c] * r.components[c][j]).sum::<f64>();
                assert!((rec - row[j]).abs() < 1e-8);
            }
        }
        assert!((r.explained_variance_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn saturates_k_and_signs_components() {
        let x: Vec<Vec<f64>> = (0..3).map(|i| (0..10).map(|j| ((i * 7 + j * 3) % 5) as f64).collect()).collect();
        let r = pca_reduce(&x, 100).unwrap();
        assert_eq!(r.components.len(), 2);
        for axis in &r.components {
            let lead = axis.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(lead > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn ratios_match_jacobi_oracle(n in 2usize..12, p in 1usize..9, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let k = (n - 1).min(p);
            let r = pca_reduce(&x, k).unwrap();
            let ev = jacobi_eigenvalues(covariance(&x));
            let total: f64 = ev.iter().sum();
            for i in 0..k {
                prop_assert!((r.explained_variance_ratio[i] - ev[i] / total).abs() < 1e-8);
            }
            for w in r.explained_variance_ratio.windows(2) {
                prop_assert!(w[0] >= w[1] - 1e-12);
            }
            // orthonormal axes
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = (0..p).map(|j| r.components[a][j] * r.components[b][j]).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-8);
                }
            }
        }
    }
}
