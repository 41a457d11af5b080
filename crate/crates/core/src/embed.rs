//! Two-dimensional embeddings of codeword sets: PCA and exact t-SNE.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foldnet::Codeword;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMethod {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub coords: Vec<[f64; 2]>,
    pub frame_indices: Vec<usize>,
    pub method: EmbeddingMethod,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    /// KL divergence when early exaggeration ends (t-SNE only).
    pub kl_after_exaggeration: Option<f64>,
    pub final_kl: Option<f64>,
}

/// Top-2 principal axes of a codeword set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub directions: [Vec<f64>; 2],
    /// Variance along each direction.
    pub variances: [f64; 2],
    pub total_variance: f64,
}

impl PcaModel {
    pub fn explained_ratio(&self) -> f64 {
        (self.variances[0] + self.variances[1]) / self.total_variance
    }

    pub fn project(&self, values: &[f64]) -> [f64; 2] {
        let proj = |d: &[f64]| values.iter().zip(&self.mean).zip(d).map(|((v, m), w)| (v - m) * w).sum();
        [proj(&self.directions[0]), proj(&self.directions[1])]
    }
}

fn code_matrix(codes: &[Codeword], min: usize) -> Result<DMatrix<f64>> {
    if codes.len() < min {
        return Err(Error::invalid(format!("embedding needs at least {min} codewords, got {}", codes.len())));
    }
    let dim = codes[0].values.len();
    if dim == 0 || codes.iter().any(|c| c.values.len() != dim) {
        return Err(Error::invalid("codewords must share a non-zero length"));
    }
    if codes.iter().any(|c| c.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("codewords must be finite"));
    }
    Ok(DMatrix::from_fn(codes.len(), dim, |i, j| codes[i].values[j]))
}

/// Principal axes via the SVD of the centred data matrix.
pub fn pca_fit(codes: &[Codeword]) -> Result<PcaModel> {
    let mut x = code_matrix(codes, 3)?;
    let n = x.nrows();
    let mean: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).mean()).collect();
    for (j, m) in mean.iter().enumerate() {
        x.column_mut(j).add_scalar_mut(-m);
    }
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    if total_variance == 0.0 {
        return Err(Error::invalid("codewords have zero variance"));
    }
    let svd = x.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::invalid("SVD did not converge"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let axis = |k: usize| -> (Vec<f64>, f64) {
        let Some(&r) = order.get(k) else {
            return (vec![0.0; mean.len()], 0.0);
        };
        let mut d: Vec<f64> = v_t.row(r).iter().copied().collect();
        let lead = d.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if lead < 0.0 {
            d.iter_mut().for_each(|v| *v = -*v);
        }
        let s = svd.singular_values[r];
        (d, s * s / (n - 1) as f64)
    };
    let (d0, v0) = axis(0);
    let (d1, v1) = axis(1);
    Ok(PcaModel {
        mean,
        directions: [d0, d1],
        variances: [v0, v1],
        total_variance,
    })
}

pub fn pca_embed(codes: &[Codeword]) -> Result<EmbeddingResult> {
    let model = pca_fit(codes)?;
    Ok(EmbeddingResult {
        coords: codes.iter().map(|c| model.project(&c.values)).collect(),
        frame_indices: codes.iter().map(|c| c.frame_index).collect(),
        method: EmbeddingMethod::Pca,
        perplexity: None,
        iterations: None,
        kl_after_exaggeration: None,
        final_kl: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

/// Entropy tolerance (nats) and step cap of the bandwidth search.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 50;

/// Row-normalized Gaussian affinities `p_{j|i}` and each row's entropy in
/// bits, with per-row precision found by bisection.
pub fn conditional_affinities(dist2: &[Vec<f64>], perplexity: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = dist2.len();
    if !(perplexity >= 1.0 && perplexity < n as f64) {
        return Err(Error::invalid(format!("perplexity {perplexity} outside [1, {n})")));
    }
    let target = perplexity.ln();
    let mut rows = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for (i, d) in dist2.iter().enumerate() {
        let dmin = d
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let mean_gap = d
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v - dmin)
            .sum::<f64>()
            / (n - 1) as f64;
        let eval = |beta: f64| {
            let mut p: Vec<f64> = d
                .iter()
                .enumerate()
                .map(|(j, &v)| if j == i { 0.0 } else { (-beta * (v - dmin)).exp() })
                .collect();
            let sum: f64 = p.iter().sum();
            let weighted: f64 = p.iter().zip(d).map(|(pj, &v)| pj * (v - dmin)).sum();
            let h = sum.ln() + beta * weighted / sum;
            p.iter_mut().for_each(|v| *v /= sum);
            (p, h)
        };
        let mut beta = if mean_gap > 0.0 { 1.0 / mean_gap } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let (mut p, mut h) = eval(beta);
        for _ in 0..MAX_BISECTION_STEPS {
            let diff = h - target;
            if diff.abs() < ENTROPY_TOLERANCE {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (p, h) = eval(beta);
        }
        entropies.push(h / std::f64::consts::LN_2);
        rows.push(p);
    }
    Ok((rows, entropies))
}

fn squared_distances(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn kl_divergence(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut num = vec![vec![0.0; n]; n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                num[i][j] = 1.0 / (1.0 + d);
                z += num[i][j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[i][j] > 0.0 {
                let q = (num[i][j] / z).max(1e-300);
                kl += p[i][j] * (p[i][j] / q).ln();
            }
        }
    }
    kl
}

/// Exact t-SNE with momentum and per-coordinate gains.
pub fn tsne_embed(codes: &[Codeword], cfg: &TsneConfig) -> Result<EmbeddingResult> {
    let x = code_matrix(codes, 3)?;
    let n = x.nrows();
    if cfg.iterations == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("t-SNE needs iterations >= 1 and a positive learning rate"));
    }
    let (cond, _) = conditional_affinities(&squared_distances(&x), cfg.perplexity)?;
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i][i] = 0.0;
    }

    let mut rng = seeded(cfg.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![vec![0.0; n]; n];
    let mut kl_after_exaggeration = None;

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                    num[i][j] = 1.0 / (1.0 + d);
                    z += num[i][j];
                }
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i][j] - num[i][j] / z) * num[i][j];
                grad[0] += 4.0 * w * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                let same_sign = (grad[a] > 0.0) == (velocity[i][a] > 0.0);
                gains[i][a] = if same_sign { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 };
                gains[i][a] = gains[i][a].max(0.01);
                velocity[i][a] = momentum * velocity[i][a] - cfg.learning_rate * gains[i][a] * grad[a];
            }
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        for v in &mut y {
            v[0] -= cx;
            v[1] -= cy;
        }
        if iter + 1 == cfg.exaggeration_iterations {
            kl_after_exaggeration = Some(kl_divergence(&p, &y));
        }
    }
    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::NonFiniteValue { op: "tsne" });
    }
    Ok(EmbeddingResult {
        final_kl: Some(kl_divergence(&p, &y)),
        coords: y,
        frame_indices: codes.iter().map(|c| c.frame_index).collect(),
        method: EmbeddingMethod::Tsne,
        perplexity: Some(cfg.perplexity),
        iterations: Some(cfg.iterations),
        kl_after_exaggeration,
    })
}

/// Squared distances between codewords, exposed for calibration checks.
pub fn codeword_distances(codes: &[Codeword]) -> Result<Vec<Vec<f64>>> {
    Ok(squared_distances(&code_matrix(codes, 1)?))
}
