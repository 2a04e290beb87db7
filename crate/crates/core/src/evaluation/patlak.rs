//! Graphical Patlak analysis on frame-averaged curves.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DynamicPetImage, InputFunction};
use crate::schedule::FrameSchedule;

/// Frames used by the default fit window (the trailing 300 s frames of the
/// standard schedule).
pub const PATLAK_TAIL_FRAMES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatlakResult {
    /// Net influx rate, 1/min.
    pub ki: f64,
    /// Intercept (apparent distribution volume).
    pub intercept: f64,
    pub window: Range<usize>,
    /// Euclidean norm of the fit residuals.
    pub residual_norm: f64,
}

/// The last [`PATLAK_TAIL_FRAMES`] frames (or all frames if fewer).
pub fn default_fit_window(frames: usize) -> Range<usize> {
    frames.saturating_sub(PATLAK_TAIL_FRAMES)..frames
}

/// `∫ C_p` in SUV·min from the scan start to every frame mid-time. A frame
/// mean times its duration is the exact integral over that frame, so whole
/// frames are summed and only the half frame up to the mid-time (and any gap
/// between frames, by the trapezoid rule) is approximated.
fn cumulative_input(cp: &[f64], schedule: &FrameSchedule) -> Vec<f64> {
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None; // (end, value) of the previous frame
    schedule
        .frames()
        .iter()
        .zip(cp)
        .map(|(f, &c)| {
            let (start, dur) = (f.start / 60.0, f.duration / 60.0);
            if let Some((end, c_prev)) = prev {
                acc += 0.5 * (start - end) * (c + c_prev);
            }
            prev = Some((start + dur, c));
            let at_mid = acc + 0.5 * dur * c;
            acc += dur * c;
            at_mid
        })
        .collect()
}

struct PatlakAxes {
    x: Vec<f64>,
    window: Range<usize>,
}

fn patlak_axes(cp: &[f64], schedule: &FrameSchedule, window: Range<usize>) -> Result<PatlakAxes> {
    if cp.len() != schedule.len() {
        return Err(Error::LengthMismatch {
            left: cp.len(),
            right: schedule.len(),
        });
    }
    if window.end > cp.len() || window.len() < 2 {
        return Err(Error::Config(format!(
            "Patlak window {window:?} needs at least 2 frames within {}",
            cp.len()
        )));
    }
    let integral = cumulative_input(cp, schedule);
    let mut x = Vec::with_capacity(window.len());
    for i in window.clone() {
        if cp[i] == 0.0 || !cp[i].is_finite() {
            return Err(Error::Degenerate(format!("input function is {} at frame {i}", cp[i])));
        }
        x.push(integral[i] / cp[i]);
    }
    Ok(PatlakAxes { x, window })
}

fn fit(axes: &PatlakAxes, tissue: &[f64], cp: &[f64]) -> Result<PatlakResult> {
    let y: Vec<f64> = axes.window.clone().map(|i| tissue[i] / cp[i]).collect();
    let n = y.len() as f64;
    let mx = axes.x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in axes.x.iter().zip(&y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("Patlak abscissa is constant over the fit window".into()));
    }
    let ki = sxy / sxx;
    let intercept = my - ki * mx;
    let residual_norm = axes
        .x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - ki * a).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(PatlakResult {
        ki,
        intercept,
        window: axes.window.clone(),
        residual_norm,
    })
}

/// Ordinary least squares of `C_T/C_p` against `∫C_p/C_p` over `window`
/// (default: [`default_fit_window`]). Time runs in minutes.
pub fn patlak_ki(
    tissue: &[f64],
    input: &InputFunction,
    schedule: &FrameSchedule,
    window: Option<Range<usize>>,
) -> Result<PatlakResult> {
    if tissue.len() != input.len() {
        return Err(Error::LengthMismatch {
            left: tissue.len(),
            right: input.len(),
        });
    }
    let window = window.unwrap_or_else(|| default_fit_window(tissue.len()));
    let axes = patlak_axes(&input.values, schedule, window)?;
    fit(&axes, tissue, &input.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelPatlak {
    /// Flat spatial indices, ascending.
    pub voxels: Vec<usize>,
    pub results: Vec<PatlakResult>,
}

/// Patlak fit of every voxel, or of `sample_count` voxels drawn uniformly
/// without replacement (deterministic per `seed`).
pub fn voxelwise_patlak(
    image: &DynamicPetImage,
    input: &InputFunction,
    window: Option<Range<usize>>,
    sample_count: Option<usize>,
    seed: u64,
) -> Result<VoxelPatlak> {
    use rayon::prelude::*;
    if input.len() != image.frames() {
        return Err(Error::LengthMismatch {
            left: image.frames(),
            right: input.len(),
        });
    }
    let n = image.voxels();
    let mut voxels: Vec<usize> = match sample_count {
        Some(k) if k < n => sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec(),
        _ => (0..n).collect(),
    };
    voxels.sort_unstable();
    let window = window.unwrap_or_else(|| default_fit_window(image.frames()));
    let axes = patlak_axes(&input.values, image.schedule(), window)?;
    let results = voxels
        .par_iter()
        .map(|&v| fit(&axes, &image.voxel_tac(v), &input.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(VoxelPatlak { voxels, results })
}
