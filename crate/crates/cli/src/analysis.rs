use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, ValueEnum};
use fcdlif_core::evaluation::{
    mbe, mse, orthogonal_regression, paired_ttest, shift_test, silhouette, truncation_test, tsne_embed,
    voxelwise_patlak, TsneConfig,
};
use fcdlif_core::io::{load_curve, load_dataset, load_image, load_model, save_curve, write_json};
use fcdlif_core::training::LossWeights;
use fcdlif_core::{InputFunction, InputFunctionModel, Model};
use serde::Serialize;

use crate::output::{write_csv, write_manifest, write_table, MANIFEST_NAME};
use crate::{CmdResult, Command};

const AIF_SUFFIX: &str = "_aif.csv";

fn open_model(path: &Path) -> anyhow::Result<Model> {
    load_model(path).with_context(|| format!("loading weights {}", path.display()))
}

fn receptive_radius(model: &Model) -> usize {
    match model {
        Model::FcDlif(m) => m.receptive_radius(),
        Model::Baseline(_) => 0,
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output curve CSV; the manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn predict(args: &PredictArgs, command: &Command) -> CmdResult {
    let model = open_model(&args.weights)?;
    let image = load_image(&args.image).with_context(|| format!("loading image {}", args.image.display()))?;
    let curve = model.predict(&image)?;
    save_curve(&args.out, &curve)?;
    let mut manifest = args.out.clone().into_os_string();
    manifest.push(".manifest.json");
    write_manifest(Path::new(&manifest), command, model.config())
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Predicted `<stem>_aif.csv` curves.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Reference `<stem>_aif.csv` curves (and `<stem>.fdlf` images for
    /// `--patlak`).
    #[arg(long)]
    pub truth_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also compare voxelwise Patlak Ki computed with either curve.
    #[arg(long)]
    pub patlak: bool,
    /// Voxels sampled per image for `--patlak`.
    #[arg(long, default_value_t = 256)]
    pub patlak_voxels: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Default, Serialize)]
struct MetricsRow {
    scope: String,
    n: usize,
    mse: Option<f64>,
    mbe: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    r: Option<f64>,
    r2: Option<f64>,
    t: Option<f64>,
    p: Option<f64>,
}

/// Metrics of `pred` against `truth`; statistics that are undefined for the
/// data (e.g. a constant curve) are left empty.
fn metrics_row(scope: &str, truth: &[f64], pred: &[f64], alpha: f64) -> anyhow::Result<MetricsRow> {
    let mut row = MetricsRow {
        scope: scope.to_string(),
        n: truth.len(),
        mse: Some(mse(pred, truth)?),
        mbe: Some(mbe(pred, truth)?),
        ..MetricsRow::default()
    };
    match orthogonal_regression(truth, pred) {
        Ok(reg) => {
            row.a = Some(reg.slope);
            row.b = Some(reg.intercept);
            row.r = Some(reg.r);
            row.r2 = Some(reg.r2);
        }
        Err(e) => log::warn!("{scope}: regression undefined: {e}"),
    }
    match paired_ttest(pred, truth, alpha) {
        Ok(tt) => {
            row.t = Some(tt.t);
            row.p = Some(tt.p);
        }
        Err(e) => log::warn!("{scope}: t-test undefined: {e}"),
    }
    Ok(row)
}

fn curve_files(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
        .filter(|n| n.ends_with(AIF_SUFFIX))
        .collect();
    names.sort();
    ensure!(!names.is_empty(), "no *{AIF_SUFFIX} curves in {}", dir.display());
    Ok(names)
}

#[derive(Serialize)]
struct KiRow<'a> {
    id: &'a str,
    voxel: usize,
    ki_truth: f64,
    ki_pred: f64,
}

pub fn evaluate(args: &EvaluateArgs, command: &Command) -> CmdResult {
    let names = curve_files(&args.truth_dir)?;
    let mut rows = Vec::new();
    let (mut all_truth, mut all_pred) = (Vec::new(), Vec::new());
    let mut ki_rows: Vec<(String, usize, f64, f64)> = Vec::new();
    for name in &names {
        let id = name.trim_end_matches(AIF_SUFFIX);
        let truth = load_curve(&args.truth_dir.join(name))?;
        let pred_path = args.pred_dir.join(name);
        let pred = load_curve(&pred_path).with_context(|| format!("loading prediction {}", pred_path.display()))?;
        ensure!(
            truth.len() == pred.len(),
            "{id}: prediction has {} frames, reference has {}",
            pred.len(),
            truth.len()
        );
        rows.push(metrics_row(id, &truth.values, &pred.values, args.alpha)?);
        all_truth.extend_from_slice(&truth.values);
        all_pred.extend_from_slice(&pred.values);
        if args.patlak {
            let image_path = args.truth_dir.join(format!("{id}.fdlf"));
            let image = load_image(&image_path).with_context(|| format!("loading image {}", image_path.display()))?;
            let with_pred = InputFunction::on_schedule(image.schedule(), pred.values.clone())?;
            let with_truth = InputFunction::on_schedule(image.schedule(), truth.values.clone())?;
            let count = Some(args.patlak_voxels);
            let a = voxelwise_patlak(&image, &with_truth, None, count, args.seed)?;
            let b = voxelwise_patlak(&image, &with_pred, None, count, args.seed)?;
            for ((v, ra), rb) in a.voxels.iter().zip(&a.results).zip(&b.results) {
                ki_rows.push((id.to_string(), *v, ra.ki, rb.ki));
            }
        }
    }
    rows.push(metrics_row("pooled", &all_truth, &all_pred, args.alpha)?);
    if args.patlak {
        let truth: Vec<f64> = ki_rows.iter().map(|r| r.2).collect();
        let pred: Vec<f64> = ki_rows.iter().map(|r| r.3).collect();
        rows.push(metrics_row("ki", &truth, &pred, args.alpha)?);
        write_csv(
            &args.out_dir.join("ki_scatter.csv"),
            ki_rows.iter().map(|(id, voxel, ki_truth, ki_pred)| KiRow {
                id,
                voxel: *voxel,
                ki_truth: *ki_truth,
                ki_pred: *ki_pred,
            }),
        )?;
    }
    write_csv(&args.out_dir.join("metrics.csv"), &rows)?;
    write_manifest(&args.out_dir.join(MANIFEST_NAME), command, names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessMode {
    /// Prepend a copy of the first frame.
    Shift,
    /// Drop the first 4 and last 6 frames.
    Truncate,
}

#[derive(Debug, Args, Serialize)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum)]
    pub mode: RobustnessMode,
    /// Reference curve for the truncated-loss comparison.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct DeviationRow {
    frame: usize,
    reference: f64,
    perturbed: Option<f64>,
    deviation: Option<f64>,
}

pub fn robustness(args: &RobustnessArgs, command: &Command) -> CmdResult {
    let model = open_model(&args.weights)?;
    let image = load_image(&args.image).with_context(|| format!("loading image {}", args.image.display()))?;
    let radius = receptive_radius(&model);
    let rows: Vec<DeviationRow> = match args.mode {
        RobustnessMode::Shift => {
            let report = shift_test(&model, &image, radius)?;
            write_json(&args.out_dir.join("robustness.json"), &report)?;
            (0..report.original.len())
                .map(|t| DeviationRow {
                    frame: t,
                    reference: report.original[t],
                    perturbed: report.shifted.as_ref().map(|s| s[t + 1]),
                    deviation: report.deviations.get(t).copied(),
                })
                .collect()
        }
        RobustnessMode::Truncate => {
            let truth = args
                .truth
                .as_deref()
                .map(|p| load_curve(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let report = truncation_test(&model, &image, truth.as_ref(), radius, &LossWeights::default())?;
            write_json(&args.out_dir.join("robustness.json"), &report)?;
            let head = fcdlif_core::evaluation::TRUNCATE_HEAD;
            let len = image.frames() - head - fcdlif_core::evaluation::TRUNCATE_TAIL;
            (0..len)
                .map(|j| DeviationRow {
                    frame: j + head,
                    reference: report.full[j + head],
                    perturbed: report.truncated.as_ref().map(|s| s[j]),
                    deviation: report.deviations.get(j).copied(),
                })
                .collect()
        }
    };
    write_csv(&args.out_dir.join("robustness.csv"), &rows)?;
    write_manifest(&args.out_dir.join(MANIFEST_NAME), command, model.config())
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also embed all frames in 2-D with t-SNE.
    #[arg(long)]
    pub tsne: bool,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct TsneRow<'a> {
    id: &'a str,
    frame: usize,
    segment: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct FeaturesResolved {
    tsne: Option<TsneConfig>,
    initial_kl: Option<f64>,
    final_kl: Option<f64>,
    /// Silhouette of the peak/intermediate/tail segments in the embedding.
    segment_silhouette: Option<f64>,
}

pub fn features(args: &FeaturesArgs, command: &Command) -> CmdResult {
    let Model::FcDlif(model) = open_model(&args.weights)? else {
        bail!("feature export needs FC-DLIF weights, not a baseline model");
    };
    let data = load_dataset(&args.data_dir).with_context(|| format!("loading {}", args.data_dir.display()))?;
    let weights = LossWeights::default();
    let mut header = vec!["id".to_string(), "frame".into(), "segment".into()];
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut keys = Vec::new();
    for s in &data {
        let features = model.extract_sfe_features(&s.image)?;
        if header.len() == 3 {
            header.extend((0..features.embedding).map(|e| format!("e{e}")));
        }
        let segments = weights.segment_of_frames(features.frames);
        for (t, point) in features.frame_points().into_iter().enumerate() {
            let mut row = vec![s.id.clone(), t.to_string(), segments[t].to_string()];
            row.extend(point.iter().map(|v| v.to_string()));
            rows.push(row);
            points.push(point);
            keys.push((s.id.as_str(), t, segments[t]));
        }
    }
    write_table(&args.out_dir.join("embeddings.csv"), &header, &rows)?;
    let mut resolved = FeaturesResolved {
        tsne: None,
        initial_kl: None,
        final_kl: None,
        segment_silhouette: None,
    };
    if args.tsne {
        let config = TsneConfig {
            perplexity: args.perplexity,
            iterations: args.iterations,
            seed: args.seed,
            ..TsneConfig::default()
        };
        let result = tsne_embed(&points, &config)?;
        let labels: Vec<usize> = keys.iter().map(|k| k.2).collect();
        resolved.segment_silhouette = silhouette(&result.embedding, &labels).ok();
        write_csv(
            &args.out_dir.join("tsne.csv"),
            keys.iter().zip(&result.embedding).map(|(&(id, frame, segment), p)| TsneRow {
                id,
                frame,
                segment,
                x: p[0],
                y: p[1],
            }),
        )?;
        resolved.initial_kl = Some(result.initial_kl);
        resolved.final_kl = Some(result.final_kl);
        resolved.tsne = Some(config);
    }
    write_manifest(&args.out_dir.join(MANIFEST_NAME), command, resolved)
}
