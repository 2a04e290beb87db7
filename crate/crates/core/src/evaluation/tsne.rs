//! Exact t-SNE (no tree approximation) for small point sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    /// Binary-search tolerance on the conditional entropy, bits.
    pub entropy_tolerance: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            entropy_tolerance: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub embedding: Vec<[f64; 2]>,
    /// Precision `1/(2σ²)` found for each point.
    pub betas: Vec<f64>,
    /// Achieved conditional entropy per point, bits.
    pub entropies: Vec<f64>,
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Smallest squared distance used between distinct points, so duplicates do
/// not collapse the conditional distributions.
const MIN_SQ_DIST: f64 = 1e-12;
const P_FLOOR: f64 = 1e-12;

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            let s = s.max(MIN_SQ_DIST);
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional distribution `p_{j|i}` for precision `beta`, written into
/// `row`; returns its entropy in bits.
fn conditional(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    // Shift by the nearest-neighbour distance for numerical stability.
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (r, &d)) in row.iter_mut().zip(dist).enumerate() {
        *r = if j == i { 0.0 } else { (-beta * (d - dmin)).exp() };
        sum += *r;
    }
    let mut h = 0.0;
    for r in row.iter_mut() {
        *r /= sum;
        if *r > 0.0 {
            h -= *r * r.log2();
        }
    }
    h
}

/// Entropy (bits) of `p_{·|i}` under precision `beta`.
pub fn entropy_bits(dist_row: &[f64], i: usize, beta: f64) -> f64 {
    let mut row = vec![0.0; dist_row.len()];
    conditional(dist_row, i, beta, &mut row)
}

/// Binary search for the precision whose entropy is `log2(perplexity)`.
fn calibrate_row(dist: &[f64], i: usize, target: f64, tol: f64, row: &mut [f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut h = conditional(dist, i, beta, row);
    for _ in 0..200 {
        if (h - target).abs() <= tol {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        h = conditional(dist, i, beta, row);
    }
    (beta, h)
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                num[i * n + j] = 1.0 / (1.0 + d);
                z += num[i * n + j];
            }
        }
    }
    p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &q)| pij * (pij / (q / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Embeds `points` (`n × D`) into two dimensions.
pub fn tsne_embed(points: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    let n = points.len();
    if n < 5 {
        return Err(Error::Config(format!("t-SNE needs at least 5 points, got {n}")));
    }
    if !(config.perplexity > 0.0) || config.perplexity >= n as f64 {
        return Err(Error::Config(format!(
            "perplexity {} must be positive and below the point count {n}",
            config.perplexity
        )));
    }
    if config.iterations == 0 {
        return Err(Error::Config("t-SNE needs at least one iteration".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Config("t-SNE points must share a non-zero dimension and be finite".into()));
    }
    let dist = squared_distances(points);
    let target = config.perplexity.log2();
    let mut cond = vec![0.0; n * n];
    let mut betas = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let (b, h) = calibrate_row(&dist[i * n..(i + 1) * n], i, target, config.entropy_tolerance, &mut cond[i * n..(i + 1) * n]);
        betas.push(b);
        entropies.push(h);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid spread");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let initial_kl = kl_divergence(&p, &y);
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0f64; 2]; n];
    for iter in 0..config.iterations {
        let exaggerate = iter < config.exaggeration_iterations;
        let factor = if exaggerate { config.exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                let q = 1.0 / (1.0 + d);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = (factor * p[i * n + j] - w / z) * w;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for a in 0..2 {
                let same_sign = (grad[i][a] > 0.0) == (velocity[i][a] > 0.0);
                gains[i][a] = if same_sign { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 }.max(0.01);
                velocity[i][a] = momentum * velocity[i][a] - config.learning_rate * gains[i][a] * grad[i][a];
                y[i][a] += velocity[i][a];
            }
        }
        let mean = y.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0], m[1] + p[1]]);
        for p in &mut y {
            p[0] -= mean[0] / n as f64;
            p[1] -= mean[1] / n as f64;
        }
    }
    let final_kl = kl_divergence(&p, &y);
    Ok(TsneResult {
        embedding: y,
        betas,
        entropies,
        initial_kl,
        final_kl,
    })
}

/// Mean silhouette coefficient of a labelled point set (Euclidean).
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: labels.len(),
        });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate("silhouette needs at least two clusters".into()));
    }
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mean_to = |c: usize| {
            let (sum, count) = points
                .iter()
                .zip(labels)
                .enumerate()
                .filter(|&(j, (_, &l))| l == c && j != i)
                .fold((0.0, 0usize), |(s, k), (_, (q, _))| (s + dist(p, q), k + 1));
            if count == 0 {
                None
            } else {
                Some(sum / count as f64)
            }
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = classes
            .iter()
            .filter(|&&c| c != labels[i])
            .filter_map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / points.len() as f64)
}
