//! `fcdlif`: simulate cohorts, train and apply input-function models, and
//! evaluate their predictions.

mod analysis;
mod calibrate;
mod output;
mod simulate;
mod train;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fcdlif_core::{BaselineConfig, ModelConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "fcdlif", version, about = "Deep-learning input functions for dynamic PET")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Render a synthetic cohort of dynamic images with their input functions.
    Simulate(simulate::SimulateArgs),
    /// Train one model (fold 0 of a k-fold split is held out for validation).
    Train(train::TrainArgs),
    /// k-fold cross-validation with repeated runs.
    Crossval(train::TrainArgs),
    /// Predict the input function of one image.
    Predict(analysis::PredictArgs),
    /// Compare predicted curves with reference curves.
    Evaluate(analysis::EvaluateArgs),
    /// Frame-shift or truncation experiment on one image.
    Robustness(analysis::RobustnessArgs),
    /// Calibrate a continuous detector trace with manual blood samples.
    Calibrate(calibrate::CalibrateArgs),
    /// Export spatial embeddings, optionally with a t-SNE projection.
    Features(analysis::FeaturesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Fcdlif,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Small network for 24×16×16 phantoms.
    Desk,
    /// Full-size network for 96×48×48 volumes.
    Reference,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Architecture::Fcdlif)]
    pub model: Architecture,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        match (self.model, self.preset) {
            (Architecture::Fcdlif, Preset::Desk) => ModelConfig::fcdlif_desk(),
            (Architecture::Fcdlif, Preset::Reference) => ModelConfig::fcdlif_reference(),
            (Architecture::Baseline, Preset::Desk) => ModelConfig::Baseline(BaselineConfig::desk()),
            (Architecture::Baseline, Preset::Reference) => ModelConfig::Baseline(BaselineConfig::reference()),
        }
    }
}

pub type CmdResult = anyhow::Result<()>;

fn run(command: &Command) -> CmdResult {
    match command {
        Command::Simulate(a) => simulate::run(a, command),
        Command::Train(a) => train::run_train(a, command),
        Command::Crossval(a) => train::run_crossval(a, command),
        Command::Predict(a) => analysis::predict(a, command),
        Command::Evaluate(a) => analysis::evaluate(a, command),
        Command::Robustness(a) => analysis::robustness(a, command),
        Command::Calibrate(a) => calibrate::run(a, command),
        Command::Features(a) => analysis::features(a, command),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
