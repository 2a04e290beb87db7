use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use fcdlif_core::io::{aif_path_for, image_file_name, save_curve, save_image};
use fcdlif_core::phantom::{
    simulate_cohort, simulate_detector_trace, RenderOptions, SimulationConfig, TraceConfig, MAX_FINE_STEP,
};
use fcdlif_core::seeding::derive_seed;
use fcdlif_core::FrameSchedule;
use serde::Serialize;

use crate::output::{write_csv, write_manifest, MANIFEST_NAME};
use crate::{CmdResult, Command};

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Number of subjects.
    #[arg(long)]
    pub n: usize,
    /// Spatial grid `XxYxZ`.
    #[arg(long, default_value = "24x16x16", value_parser = parse_grid)]
    pub grid: [usize; 3],
    /// Frame blocks `COUNTxSECONDS,...`.
    #[arg(long, default_value = "1x30,24x5,9x20,8x300")]
    pub schedule: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    pub voxel_mm: f32,
    /// Expected counts per SUV·s.
    #[arg(long, default_value_t = 2.0, conflicts_with = "noiseless")]
    pub count_scale: f64,
    /// Render exact frame averages without count noise.
    #[arg(long)]
    pub noiseless: bool,
    /// Also write a continuous detector trace and manual blood samples per
    /// subject (scale 3.7, 25.1 s delay, 1% noise).
    #[arg(long)]
    pub traces: bool,
}

fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let dims: Vec<usize> = s
        .split(['x', 'X'])
        .map(|d| d.trim().parse::<usize>().map_err(|_| format!("bad grid dimension `{d}`")))
        .collect::<Result<_, _>>()?;
    match dims.as_slice() {
        &[x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err(format!("grid `{s}` must be three positive sizes XxYxZ")),
    }
}

#[derive(Serialize)]
struct TraceRow {
    t_s: f64,
    value: f64,
}

#[derive(Serialize)]
struct Resolved<'a> {
    simulation: &'a SimulationConfig,
    /// Per subject; the noise level follows each subject's peak.
    traces: Vec<TraceConfig>,
}

const TRACE_SCALE: f64 = 3.7;
const TRACE_NOISE_FRACTION: f64 = 0.01;

pub fn run(args: &SimulateArgs, command: &Command) -> CmdResult {
    if args.n == 0 {
        bail!("--n must be at least 1");
    }
    let schedule = FrameSchedule::parse_blocks(&args.schedule).context("parsing --schedule")?;
    let config = SimulationConfig {
        grid: args.grid,
        voxel_mm: [args.voxel_mm; 3],
        schedule,
        render: RenderOptions {
            fine_step: MAX_FINE_STEP,
            count_scale: (!args.noiseless).then_some(args.count_scale),
        },
        seed: args.seed,
    };
    let subjects = simulate_cohort(&config, args.n)?;
    let mut trace_configs = Vec::new();
    for (i, s) in subjects.iter().enumerate() {
        let image_path = args.out_dir.join(image_file_name(i));
        save_image(&image_path, &s.image)?;
        save_curve(&aif_path_for(&image_path), &s.aif)?;
        if args.traces {
            // the bolus peaks within a minute of injection
            let peak = (0..240).map(|k| s.feng.eval(s.feng.t0 + 0.25 * k as f64)).fold(0.0, f64::max);
            let mut cfg = TraceConfig::standard(TRACE_SCALE, TRACE_NOISE_FRACTION * TRACE_SCALE * peak);
            cfg.duration_s = config.schedule.end() + 60.0;
            let (trace, samples) = simulate_detector_trace(&s.feng, &cfg, derive_seed(args.seed, &[i as u64, 2]))?;
            let stem = image_path.with_extension("");
            write_csv(
                &PathBuf::from(format!("{}_trace.csv", stem.display())),
                trace
                    .curve
                    .times()
                    .into_iter()
                    .zip(trace.curve.values.iter().copied())
                    .map(|(t_s, value)| TraceRow { t_s, value }),
            )?;
            write_csv(&PathBuf::from(format!("{}_samples.csv", stem.display())), &samples)?;
            trace_configs.push(cfg);
        }
    }
    write_manifest(
        &args.out_dir.join(MANIFEST_NAME),
        command,
        Resolved {
            simulation: &config,
            traces: trace_configs,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("24x16x16").unwrap(), [24, 16, 16]);
        assert!(parse_grid("24x16").is_err());
        assert!(parse_grid("0x1x1").is_err());
        assert!(parse_grid("axbxc").is_err());
    }
}
