//! Curve metrics, regression and hypothesis tests, Patlak analysis,
//! robustness experiments and t-SNE.

mod patlak;
mod robustness;
mod tsne;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::training::LossWeights;

pub use patlak::{default_fit_window, patlak_ki, voxelwise_patlak, PatlakResult, VoxelPatlak, PATLAK_TAIL_FRAMES};
pub use robustness::{shift_test, truncation_test, ShiftReport, TruncationReport, TRUNCATE_HEAD, TRUNCATE_TAIL};
pub use tsne::{entropy_bits, silhouette, tsne_embed, TsneConfig, TsneResult};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Degenerate("empty input".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Mean of `pred − target`; positive means overestimation.
pub fn mbe(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| p - t).sum::<f64>() / pred.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Centered sums of squares and cross products `(s_xx, s_yy, s_xy)`.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(sxx, syy, sxy), (a, b)| {
        let (dx, dy) = (a - mx, b - my);
        (sxx + dx * dx, syy + dy * dy, sxy + dx * dy)
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x, y)?;
    let (sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthRegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub r2: f64,
}

/// Deming regression with equal error variances in `x` and `y`.
pub fn orthogonal_regression(x: &[f64], y: &[f64]) -> Result<OrthRegressionResult> {
    same_len(x, y)?;
    if x.len() < 3 {
        return Err(Error::Degenerate(format!("orthogonal regression needs 3 points, got {}", x.len())));
    }
    let (sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("orthogonal regression on zero-variance data".into()));
    }
    let slope = if sxy == 0.0 {
        if sxx > syy {
            0.0
        } else {
            return Err(Error::Degenerate("orthogonal regression slope is undefined (s_xy = 0, s_yy ≥ s_xx)".into()));
        }
    } else {
        let d = syy - sxx;
        (d + (d * d + 4.0 * sxy * sxy).sqrt()) / (2.0 * sxy)
    };
    let intercept = mean(y) - slope * mean(x);
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(OrthRegressionResult {
        slope,
        intercept,
        r,
        r2: r * r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub reject: bool,
}

/// Two-sided paired t-test on `d = x − y`.
///
/// A zero spread gives `t = 0, p = 1` when the mean difference is also zero,
/// and `p = 0` (infinite `t`) otherwise.
pub fn paired_ttest(x: &[f64], y: &[f64], alpha: f64) -> Result<TTestResult> {
    same_len(x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::Degenerate("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let (t, p) = if var == 0.0 {
        if m == 0.0 {
            (0.0, 1.0)
        } else {
            (m.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = m / (var.sqrt() / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTestResult {
        t,
        p,
        df,
        reject: p < alpha,
    })
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentiles of the box-plot summaries.
pub const PROFILE_PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentProfile {
    /// `peak`, `intermediate` or `tail`.
    pub segment: String,
    pub count: usize,
    /// Values at [`PROFILE_PERCENTILES`].
    pub percentiles: [f64; 5],
}

pub const SEGMENT_NAMES: [&str; 3] = ["peak", "intermediate", "tail"];

/// Signed errors `pred − target` pooled per curve segment.
pub fn segment_error_profile(preds: &[Vec<f64>], targets: &[Vec<f64>], weights: &LossWeights) -> Result<Vec<SegmentProfile>> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: targets.len(),
        });
    }
    let mut pooled: [Vec<f64>; 3] = Default::default();
    for (p, t) in preds.iter().zip(targets) {
        same_len(p, t)?;
        for ((a, b), s) in p.iter().zip(t).zip(weights.segment_of_frames(p.len())) {
            pooled[s].push(a - b);
        }
    }
    Ok(pooled
        .into_iter()
        .zip(SEGMENT_NAMES)
        .map(|(mut errs, name)| {
            errs.sort_by(f64::total_cmp);
            let percentiles = if errs.is_empty() {
                [f64::NAN; 5]
            } else {
                PROFILE_PERCENTILES.map(|q| percentile_sorted(&errs, q))
            };
            SegmentProfile {
                segment: name.to_string(),
                count: errs.len(),
                percentiles,
            }
        })
        .collect())
}

/// `(theoretical, sample)` pairs: standard-normal quantiles at `(i − 0.5)/n`
/// against the sorted residuals.
pub fn qq_points(residuals: &[f64]) -> Result<Vec<(f64, f64)>> {
    if residuals.len() < 3 {
        return Err(Error::Degenerate("Q-Q plot needs at least 3 residuals".into()));
    }
    let n = residuals.len() as f64;
    let normal = Normal::standard();
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, s)| (normal.inverse_cdf((i as f64 + 0.5) / n), s))
        .collect())
}
