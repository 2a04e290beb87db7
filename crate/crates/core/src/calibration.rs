//! Arterial-line processing: delay correction, per-sample calibration
//! factors, scaled-MAD outlier rejection and resampling onto PET frames.

use serde::{Deserialize, Serialize};

use crate::curve::SampledCurve;
use crate::error::{Error, Result};
use crate::image::InputFunction;
use crate::phantom::{ContinuousDetectorTrace, ManualSample, MANUAL_WINDOW_S};
use crate::schedule::FrameSchedule;

/// Consistency constant turning a MAD into a normal-scale spread estimate.
pub const MAD_SCALE: f64 = 1.4826;
/// Values beyond this many scaled MADs from the median are rejected.
pub const MAD_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Detector/blood ratio per manual sample; `None` where the manual
    /// value was zero.
    pub factors: Vec<Option<f64>>,
    pub included: Vec<bool>,
    /// Mean of the included factors.
    pub overall: f64,
    pub delay_s: f64,
}

/// Re-samples `trace` at integer seconds so that `out(t) = trace(t + shift)`,
/// keeping every integer `t` where the right-hand side is defined. Sub-second
/// shifts interpolate linearly.
pub fn shift(trace: &ContinuousDetectorTrace, shift_s: f64) -> Result<ContinuousDetectorTrace> {
    let c = &trace.curve;
    let first = (c.start - shift_s - 1e-9).ceil();
    let last = (c.end() - shift_s + 1e-9).floor();
    if last - first < 1.0 {
        return Err(Error::Config(format!("shift of {shift_s} s leaves fewer than two samples")));
    }
    let values = (0..=(last - first) as usize)
        .map(|i| {
            let t = (first + i as f64 + shift_s).clamp(c.start, c.end());
            c.eval(t).expect("clamped into the span")
        })
        .collect();
    Ok(ContinuousDetectorTrace {
        curve: SampledCurve::new(first, 1.0, values)?,
        ..trace.clone()
    })
}

/// Aligns detector time with injection-site time: a value recorded at `t`
/// appears at `t − delay`.
pub fn delay_correct(trace: &ContinuousDetectorTrace, delay_s: f64) -> Result<ContinuousDetectorTrace> {
    let span = trace.curve.end() - trace.curve.start;
    if !(delay_s >= 0.0) || delay_s >= span {
        return Err(Error::Config(format!("delay {delay_s} s must lie in [0, {span}) s")));
    }
    shift(trace, delay_s)
}

/// `mean(trace over [s, s+30)) / manual value` for each sample; zero manual
/// values give `None` and a warning.
pub fn calibration_factors(trace: &ContinuousDetectorTrace, samples: &[ManualSample]) -> Result<Vec<Option<f64>>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mean = trace.curve.mean(s.start_s, s.start_s + MANUAL_WINDOW_S).map_err(|_| {
                Error::Calibration(format!(
                    "manual sample {i} window [{}, {}) is outside the trace",
                    s.start_s,
                    s.start_s + MANUAL_WINDOW_S
                ))
            })?;
            if s.value == 0.0 {
                log::warn!("manual sample {i} at {} s has value 0; excluded", s.start_s);
                return Ok(None);
            }
            Ok(Some(mean / s.value))
        })
        .collect()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Keeps values within three scaled MADs of the median. With a zero MAD only
/// values equal to the median survive.
pub fn mad_outlier_filter(values: &[f64]) -> Result<Vec<bool>> {
    if values.len() < 2 {
        return Err(Error::Calibration(format!(
            "outlier rejection needs at least 2 values, got {}",
            values.len()
        )));
    }
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let scaled_mad = MAD_SCALE * median(&deviations);
    let mask: Vec<bool> = if scaled_mad == 0.0 {
        values.iter().map(|&v| v == med).collect()
    } else {
        deviations.iter().map(|&d| d <= MAD_THRESHOLD * scaled_mad).collect()
    };
    if !mask.contains(&true) {
        return Err(Error::Calibration("every calibration value was rejected as an outlier".into()));
    }
    Ok(mask)
}

/// Full pipeline: delay correction, factors, outlier rejection, averaging.
pub fn calibrate(trace: &ContinuousDetectorTrace, samples: &[ManualSample], delay_s: f64) -> Result<CalibrationResult> {
    let corrected = delay_correct(trace, delay_s)?;
    let factors = calibration_factors(&corrected, samples)?;
    let valid: Vec<(usize, f64)> = factors.iter().enumerate().filter_map(|(i, f)| f.map(|f| (i, f))).collect();
    let mut included = vec![false; factors.len()];
    match valid.len() {
        0 => return Err(Error::Calibration("no usable manual samples".into())),
        1 => included[valid[0].0] = true,
        _ => {
            let values: Vec<f64> = valid.iter().map(|v| v.1).collect();
            for (&(i, _), keep) in valid.iter().zip(mad_outlier_filter(&values)?) {
                included[i] = keep;
            }
        }
    }
    let kept: Vec<f64> = valid.iter().filter(|(i, _)| included[*i]).map(|v| v.1).collect();
    let overall = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(CalibrationResult {
        factors,
        included,
        overall,
        delay_s,
    })
}

/// Converts detector units to blood SUV by dividing by the overall factor.
pub fn apply_calibration(trace: &ContinuousDetectorTrace, result: &CalibrationResult) -> Result<ContinuousDetectorTrace> {
    if result.overall == 0.0 || !result.overall.is_finite() {
        return Err(Error::Calibration(format!("invalid calibration factor {}", result.overall)));
    }
    let mut out = trace.clone();
    for v in &mut out.curve.values {
        *v /= result.overall;
    }
    Ok(out)
}

/// Frame averages of the trace on `schedule`.
pub fn resample_to_frames(trace: &ContinuousDetectorTrace, schedule: &FrameSchedule) -> Result<InputFunction> {
    let c = &trace.curve;
    if schedule.start() < c.start - 1e-9 || schedule.end() > c.end() + 1e-9 {
        return Err(Error::Config(format!(
            "schedule [{}, {}] s extends beyond the trace [{}, {}] s",
            schedule.start(),
            schedule.end(),
            c.start,
            c.end()
        )));
    }
    InputFunction::on_schedule(schedule, c.frame_means(schedule)?)
}
