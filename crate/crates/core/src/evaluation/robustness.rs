//! Temporal robustness experiments: prepending a frame and truncating the
//! acquisition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DynamicPetImage, InputFunction};
use crate::model::InputFunctionModel;
use crate::training::{weighted_mse, LossWeights};

/// Duration given to the duplicated leading frame, s.
pub const SHIFT_FRAME_S: f64 = 30.0;
/// Frames removed from the start by the truncation experiment.
pub const TRUNCATE_HEAD: usize = 4;
/// Frames removed from the end by the truncation experiment.
pub const TRUNCATE_TAIL: usize = 6;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, d| m.max(d.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub original: Vec<f64>,
    /// `None` when the model rejected the longer input.
    pub shifted: Option<Vec<f64>>,
    /// `shifted[t + 1] − original[t]` for every original position.
    pub deviations: Vec<f64>,
    /// First original position unaffected by the sequence boundary.
    pub interior_start: usize,
    pub interior_max_deviation: Option<f64>,
    pub error: Option<String>,
}

/// Runs the model on the image and on a copy with the first frame duplicated
/// in front, and compares aligned outputs.
pub fn shift_test<M: InputFunctionModel + ?Sized>(model: &M, image: &DynamicPetImage, radius: usize) -> Result<ShiftReport> {
    let original = model.predict(image)?.values;
    let longer = image.prepend_first_frame(SHIFT_FRAME_S)?;
    let (shifted, error) = match model.predict(&longer) {
        Ok(out) => (Some(out.values), None),
        Err(e @ Error::FixedLength { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let deviations: Vec<f64> = match &shifted {
        Some(s) => original.iter().enumerate().map(|(t, o)| s[t + 1] - o).collect(),
        None => Vec::new(),
    };
    let interior_start = radius.min(original.len());
    let interior_max_deviation = shifted.as_ref().map(|_| max_abs(&deviations[interior_start..]));
    Ok(ShiftReport {
        original,
        shifted,
        deviations,
        interior_start,
        interior_max_deviation,
        error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub full: Vec<f64>,
    pub truncated: Option<Vec<f64>>,
    /// `truncated[j] − full[j + 4]`.
    pub deviations: Vec<f64>,
    /// Truncated positions `interior` are unaffected by either boundary.
    pub interior: std::ops::Range<usize>,
    pub interior_max_deviation: Option<f64>,
    /// Loss of the truncated prediction against the matching truth frames.
    pub wmse_vs_truth: Option<f64>,
    pub error: Option<String>,
}

/// Drops the first 4 and last 6 frames and compares the prediction with the
/// corresponding positions of the full-length prediction.
pub fn truncation_test<M: InputFunctionModel + ?Sized>(
    model: &M,
    image: &DynamicPetImage,
    truth: Option<&InputFunction>,
    radius: usize,
    weights: &LossWeights,
) -> Result<TruncationReport> {
    let t = image.frames();
    if t <= TRUNCATE_HEAD + TRUNCATE_TAIL {
        return Err(Error::Config(format!(
            "truncation needs more than {} frames, got {t}",
            TRUNCATE_HEAD + TRUNCATE_TAIL
        )));
    }
    let range = TRUNCATE_HEAD..t - TRUNCATE_TAIL;
    let full = model.predict(image)?.values;
    let cut = image.select_frames(range.clone())?;
    let (truncated, error) = match model.predict(&cut) {
        Ok(out) => (Some(out.values), None),
        Err(e @ Error::FixedLength { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let len = range.len();
    let interior = radius.min(len)..len.saturating_sub(radius).max(radius.min(len));
    let deviations: Vec<f64> = match &truncated {
        Some(tr) => tr.iter().enumerate().map(|(j, v)| v - full[j + TRUNCATE_HEAD]).collect(),
        None => Vec::new(),
    };
    let interior_max_deviation = truncated.as_ref().map(|_| max_abs(&deviations[interior.clone()]));
    let wmse_vs_truth = match (&truncated, truth) {
        (Some(tr), Some(truth)) => {
            if truth.len() != t {
                return Err(Error::LengthMismatch {
                    left: t,
                    right: truth.len(),
                });
            }
            Some(weighted_mse(tr, &truth.values[range], weights)?)
        }
        _ => None,
    };
    Ok(TruncationReport {
        full,
        truncated,
        deviations,
        interior,
        interior_max_deviation,
        wmse_vs_truth,
        error,
    })
}
