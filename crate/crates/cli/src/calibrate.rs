use std::path::{Path, PathBuf};

use anyhow::{ensure, Context};
use clap::Args;
use fcdlif_core::calibration::{apply_calibration, calibrate, delay_correct, resample_to_frames};
use fcdlif_core::curve::SampledCurve;
use fcdlif_core::io::{save_curve, write_json};
use fcdlif_core::phantom::{ContinuousDetectorTrace, ManualSample};
use fcdlif_core::FrameSchedule;
use serde::{Deserialize, Serialize};

use crate::output::{write_csv, write_manifest, MANIFEST_NAME};
use crate::{CmdResult, Command};

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Detector trace CSV `t_s,value` on a uniform time grid.
    #[arg(long)]
    pub trace: PathBuf,
    /// Manual samples CSV `start_s,value` (30 s windows, SUV).
    #[arg(long)]
    pub samples: PathBuf,
    /// Line delay to remove, s.
    #[arg(long)]
    pub delay: f64,
    /// Frame blocks of the resampled curve.
    #[arg(long, default_value = "1x30,24x5,9x20,8x300")]
    pub schedule: String,
    /// Arterial withdrawal rate recorded with the trace, µl/min.
    #[arg(long, default_value_t = 10.0)]
    pub withdrawal_rate: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    t_s: f64,
    value: f64,
}

fn read_trace(path: &Path, withdrawal_rate_ul_min: f64) -> anyhow::Result<ContinuousDetectorTrace> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize::<TraceRow>().collect::<Result<Vec<_>, _>>()?;
    ensure!(rows.len() >= 2, "trace needs at least two samples");
    let step = rows[1].t_s - rows[0].t_s;
    ensure!(step > 0.0, "trace times must increase");
    for (i, r) in rows.iter().enumerate() {
        let expected = rows[0].t_s + i as f64 * step;
        ensure!(
            (r.t_s - expected).abs() <= 1e-6 * step.max(expected.abs()),
            "trace row {i} at {} s breaks the uniform {step} s grid",
            r.t_s
        );
    }
    Ok(ContinuousDetectorTrace {
        curve: SampledCurve::new(rows[0].t_s, step, rows.iter().map(|r| r.value).collect())?,
        true_delay_s: None,
        true_scale: None,
        withdrawal_rate_ul_min,
    })
}

fn read_samples(path: &Path) -> anyhow::Result<Vec<ManualSample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let samples = reader.deserialize::<ManualSample>().collect::<Result<Vec<_>, _>>()?;
    ensure!(!samples.is_empty(), "no manual samples");
    Ok(samples)
}

#[derive(Serialize)]
struct FactorRow {
    index: usize,
    start_s: f64,
    value: f64,
    factor: Option<f64>,
    included: bool,
}

pub fn run(args: &CalibrateArgs, command: &Command) -> CmdResult {
    let trace = read_trace(&args.trace, args.withdrawal_rate).with_context(|| format!("reading {}", args.trace.display()))?;
    let samples = read_samples(&args.samples).with_context(|| format!("reading {}", args.samples.display()))?;
    let schedule = FrameSchedule::parse_blocks(&args.schedule).context("parsing --schedule")?;
    let result = calibrate(&trace, &samples, args.delay)?;
    let calibrated = apply_calibration(&delay_correct(&trace, args.delay)?, &result)?;
    let aif = resample_to_frames(&calibrated, &schedule)?;
    save_curve(&args.out_dir.join("calibrated_aif.csv"), &aif)?;
    write_csv(
        &args.out_dir.join("factors.csv"),
        samples.iter().enumerate().map(|(i, s)| FactorRow {
            index: i,
            start_s: s.start_s,
            value: s.value,
            factor: result.factors[i],
            included: result.included[i],
        }),
    )?;
    write_json(&args.out_dir.join("calibration.json"), &result)?;
    write_manifest(&args.out_dir.join(MANIFEST_NAME), command, &result)
}
