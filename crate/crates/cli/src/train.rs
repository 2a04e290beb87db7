use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fcdlif_core::io::{load_dataset, save_weights};
use fcdlif_core::seeding::derive_seed;
use fcdlif_core::training::{cross_validate_with, kfold_split, train, EpochRecord, Sample, TrainConfig};
use fcdlif_core::{InputFunctionModel, Model, ModelConfig};
use serde::Serialize;

use crate::output::{write_csv, write_manifest, MANIFEST_NAME};
use crate::{CmdResult, Command, ModelArgs};

pub const WEIGHTS_NAME: &str = "weights.fdlw";
pub const HISTORY_NAME: &str = "history.csv";

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory of `*.fdlf` images with `<stem>_aif.csv` curves.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Independent runs per fold (cross-validation only).
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Disable Poisson augmentation.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

impl TrainArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            folds: self.folds,
            runs: self.runs,
            augment: !self.no_augment,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    fn dataset(&self) -> anyhow::Result<Vec<Sample>> {
        load_dataset(&self.data_dir).with_context(|| format!("loading dataset from {}", self.data_dir.display()))
    }
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    train_wmse: f64,
    val_wmse: Option<f64>,
}

fn write_history(path: &Path, history: &[EpochRecord]) -> anyhow::Result<()> {
    write_csv(
        path,
        history.iter().map(|r| HistoryRow {
            epoch: r.epoch,
            train_wmse: r.train_wmse,
            val_wmse: r.val_wmse,
        }),
    )
}

#[derive(Serialize)]
struct TrainResolved {
    model: ModelConfig,
    train: TrainConfig,
    model_seed: u64,
    split_seed: u64,
    train_ids: Vec<String>,
    val_ids: Vec<String>,
    best_epoch: usize,
    parameters: usize,
}

/// Trains on folds 1.. and validates on fold 0 of a k-fold split.
pub fn run_train(args: &TrainArgs, command: &Command) -> CmdResult {
    let config = args.train_config();
    config.validate()?;
    let data = args.dataset()?;
    let model_config = args.model.config();
    let split_seed = derive_seed(args.seed, &[0]);
    let (train_idx, val_idx) = kfold_split(data.len(), args.folds, split_seed)?.swap_remove(0);
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let (train_set, val_set) = (pick(&train_idx), pick(&val_idx));
    let model_seed = derive_seed(args.seed, &[2]);
    let mut model = Model::build(&model_config, model_seed)?;
    let train_config = TrainConfig {
        augment: config.augment && matches!(model_config, ModelConfig::FcDlif { .. }),
        ..config
    };
    let report = train(&mut model, &train_set, &val_set, &train_config)?;
    save_weights(&args.out_dir.join(WEIGHTS_NAME), &model)?;
    write_history(&args.out_dir.join(HISTORY_NAME), &report.history)?;
    write_manifest(
        &args.out_dir.join(MANIFEST_NAME),
        command,
        TrainResolved {
            parameters: model.parameter_count(),
            model: model_config,
            train: train_config,
            model_seed,
            split_seed,
            train_ids: train_set.iter().map(|s| s.id.clone()).collect(),
            val_ids: val_set.iter().map(|s| s.id.clone()).collect(),
            best_epoch: report.best_epoch,
        },
    )
}

#[derive(Serialize)]
struct HeldOutRow<'a> {
    fold: usize,
    run: usize,
    id: &'a str,
    mse: f64,
    mbe: f64,
    wmse: f64,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    fold: usize,
    run: usize,
    id: &'a str,
    frame: usize,
    value: f64,
}

#[derive(Serialize)]
struct SpreadRow<'a> {
    fold: usize,
    id: &'a str,
    frame: usize,
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct CrossvalJob {
    fold: usize,
    run: usize,
    seed: u64,
    best_epoch: usize,
}

#[derive(Serialize)]
struct CrossvalResolved {
    model: ModelConfig,
    train: TrainConfig,
    jobs: Vec<CrossvalJob>,
}

fn job_dir(out: &Path, fold: usize, run: usize) -> PathBuf {
    out.join(format!("fold{fold:02}_run{run:02}"))
}

pub fn run_crossval(args: &TrainArgs, command: &Command) -> CmdResult {
    let config = args.train_config();
    config.validate()?;
    let data = args.dataset()?;
    let model_config = args.model.config();
    let cv = cross_validate_with(&data, &model_config, &config, |job, model| {
        let dir = job_dir(&args.out_dir, job.fold, job.run);
        save_weights(&dir.join(WEIGHTS_NAME), model)?;
        Ok(())
    })?;
    for job in &cv.jobs {
        write_history(&job_dir(&args.out_dir, job.fold, job.run).join(HISTORY_NAME), &job.report.history)?;
    }
    write_csv(
        &args.out_dir.join("metrics.csv"),
        cv.jobs.iter().flat_map(|j| {
            j.held_out.iter().map(move |h| HeldOutRow {
                fold: j.fold,
                run: j.run,
                id: &h.id,
                mse: h.mse,
                mbe: h.mbe,
                wmse: h.wmse,
            })
        }),
    )?;
    write_csv(
        &args.out_dir.join("predictions.csv"),
        cv.jobs.iter().flat_map(|j| {
            j.held_out.iter().flat_map(move |h| {
                h.prediction.iter().enumerate().map(move |(frame, &value)| PredictionRow {
                    fold: j.fold,
                    run: j.run,
                    id: &h.id,
                    frame,
                    value,
                })
            })
        }),
    )?;
    let spread = cv.spread();
    write_csv(
        &args.out_dir.join("spread.csv"),
        spread.iter().flat_map(|s| {
            let id = data[s.sample].id.as_str();
            s.mean.iter().zip(&s.std).enumerate().map(move |(frame, (&mean, &std))| SpreadRow {
                fold: s.fold,
                id,
                frame,
                mean,
                std,
            })
        }),
    )?;
    write_manifest(
        &args.out_dir.join(MANIFEST_NAME),
        command,
        CrossvalResolved {
            model: model_config,
            train: config,
            jobs: cv
                .jobs
                .iter()
                .map(|j| CrossvalJob {
                    fold: j.fold,
                    run: j.run,
                    seed: j.seed,
                    best_epoch: j.report.best_epoch,
                })
                .collect(),
        },
    )
}
