//! Exact t-SNE.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneParams {
    pub out_dim: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            out_dim: 3,
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

impl TsneParams {
    /// Requires `n > 3 * perplexity`.
    pub fn check(&self, n: usize) -> Result<()> {
        if !(self.perplexity.is_finite() && self.perplexity > 0.0) {
            return Err(Error::Validation(format!("tsne.perplexity must be > 0, got {}", self.perplexity)));
        }
        if (n as f64) <= 3.0 * self.perplexity {
            return Err(Error::Validation(format!(
                "tsne.perplexity {} is infeasible for {n} points (need n > 3 * perplexity)",
                self.perplexity
            )));
        }
        if self.out_dim == 0 {
            return Err(Error::Validation("tsne.out_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sum that depends only on the multiset of terms, so that permuting the
/// points permutes the layout bit-for-bit.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row-conditional affinities whose entropy matches `ln(perplexity)` to
/// within 1e-5 nats, found by bisection on the Gaussian precision.
fn conditional_affinities(d: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let dmin = (0..n).filter(|&j| j != i).map(|j| d[i * n + j]).fold(f64::INFINITY, f64::min);
        for _ in 0..200 {
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[i * n + j] - dmin) * beta).exp() };
            }
            scratch.copy_from_slice(&row);
            let sum = canonical_sum(&mut scratch);
            for j in 0..n {
                scratch[j] = row[j] * (d[i * n + j] - dmin);
            }
            let weighted = canonical_sum(&mut scratch);
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        scratch.copy_from_slice(&row);
        let sum = canonical_sum(&mut scratch);
        for j in 0..n {
            p[i * n + j] = row[j] / sum;
        }
    }
    p
}

/// Entropy in nats of each row of the conditional affinities.
pub fn row_entropies(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let p = conditional_affinities(&squared_distances(x), n, perplexity);
    (0..n)
        .map(|i| {
            -(0..n)
                .map(|j| p[i * n + j])
                .filter(|&v| v > 0.0)
                .map(|v| v * v.ln())
                .sum::<f64>()
        })
        .collect()
}

/// Initial layout with i.i.d. N(0, 1e-4) coordinates.
pub fn initial_layout(n: usize, out_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| (0..out_dim).map(|_| 1e-4 * r.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Embeds the rows of `x` into `params.out_dim` dimensions.
pub fn tsne_embed(x: &[Vec<f64>], params: &TsneParams) -> Result<Vec<Vec<f64>>> {
    let init = initial_layout(x.len(), params.out_dim, params.seed);
    tsne_embed_from(x, init, params)
}

/// [`tsne_embed`] starting from an explicit layout.
pub fn tsne_embed_from(x: &[Vec<f64>], init: Vec<Vec<f64>>, params: &TsneParams) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    params.check(n)?;
    if init.len() != n || init.iter().any(|r| r.len() != params.out_dim) {
        return Err(Error::Validation("initial layout does not match the input size".into()));
    }
    let dim = params.out_dim;
    let cond = conditional_affinities(&squared_distances(x), n, params.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut y: Vec<f64> = init.into_iter().flatten().collect();
    let mut update = vec![0.0; n * dim];
    let mut gains = vec![1.0; n * dim];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n * dim];
    let mut pair_terms = Vec::with_capacity(n * n / 2);
    let mut terms = vec![vec![0.0; n]; dim];
    for iter in 0..params.iterations {
        let exaggerate = if iter < params.exaggeration_iters { params.exaggeration } else { 1.0 };
        let momentum = if iter < params.exaggeration_iters {
            params.momentum_initial
        } else {
            params.momentum_final
        };
        pair_terms.clear();
        for i in 0..n {
            for j in i + 1..n {
                let d2: f64 = (0..dim).map(|k| (y[i * dim + k] - y[j * dim + k]).powi(2)).sum();
                let v = 1.0 / (1.0 + d2);
                num[i * n + j] = v;
                num[j * n + i] = v;
                pair_terms.push(v);
            }
        }
        let qsum = 2.0 * canonical_sum(&mut pair_terms);
        for i in 0..n {
            for j in 0..n {
                let mult = if i == j {
                    0.0
                } else {
                    let q = (num[i * n + j] / qsum).max(1e-12);
                    4.0 * (exaggerate * p[i * n + j] - q) * num[i * n + j]
                };
                for (k, t) in terms.iter_mut().enumerate() {
                    t[j] = mult * (y[i * dim + k] - y[j * dim + k]);
                }
            }
            for (k, t) in terms.iter_mut().enumerate() {
                grad[i * dim + k] = canonical_sum(t);
            }
        }
        for idx in 0..n * dim {
            let same_sign = (grad[idx] > 0.0) == (update[idx] > 0.0);
            gains[idx] = if same_sign { (gains[idx] * 0.8f64).max(0.01) } else { gains[idx] + 0.2 };
            update[idx] = momentum * update[idx] - params.learning_rate * gains[idx] * grad[idx];
            y[idx] += update[idx];
        }
        for (k, t) in terms.iter_mut().enumerate() {
            t.iter_mut().enumerate().for_each(|(i, v)| *v = y[i * dim + k]);
            let mean = canonical_sum(t) / n as f64;
            (0..n).for_each(|i| y[i * dim + k] -= mean);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE layout diverged".into()));
    }
    Ok(y.chunks(dim).map(<[f64]>::to_vec).collect())
}

/// Fraction of `k`-nearest-neighbour pairs that share a label.
pub fn knn_purity(coords: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let n = coords.len();
    let mut hits = 0usize;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (coords[i].iter().zip(&coords[j]).map(|(a, b)| (a - b).powi(2)).sum(), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits += d.iter().take(k).filter(|(_, j)| labels[*j] == labels[i]).count();
    }
    hits as f64 / (n * k) as f64
}
