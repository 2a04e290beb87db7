//! Weighted loss, Poisson augmentation, the ADAM training loop and k-fold
//! cross-validation.

use fcdlif_tensor::{Adam, AdamConfig, Graph, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{mbe, mse};
use crate::image::{DynamicPetImage, InputFunction};
use crate::model::{InputFunctionModel, Model, ModelConfig};
use crate::seeding::derive_seed;

/// Per-frame loss weights over the peak, intermediate and tail segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Segment lengths on the reference frame count.
    pub segments: [usize; 3],
    pub weights: [f64; 3],
}

impl Default for LossWeights {
    /// 25 peak frames at 0.4, 9 intermediate at 0.7, 8 tail at 1.0.
    fn default() -> Self {
        Self {
            segments: [25, 9, 8],
            weights: [0.4, 0.7, 1.0],
        }
    }
}

impl LossWeights {
    pub fn reference_frames(&self) -> usize {
        self.segments.iter().sum()
    }

    /// Segment lengths for `t` frames: proportional, rounded half up, with the
    /// tail absorbing the remainder.
    pub fn segment_lengths(&self, t: usize) -> [usize; 3] {
        let total = self.reference_frames();
        if t == total {
            return self.segments;
        }
        // round_half_up(s·t / total) in integers
        let scaled = |s: usize| (2 * s * t + total) / (2 * total);
        let peak = scaled(self.segments[0]).min(t);
        let mid = scaled(self.segments[1]).min(t - peak);
        [peak, mid, t - peak - mid]
    }

    /// Segment index (0 peak, 1 intermediate, 2 tail) of every frame.
    pub fn segment_of_frames(&self, t: usize) -> Vec<usize> {
        let lens = self.segment_lengths(t);
        lens.iter().enumerate().flat_map(|(s, &n)| std::iter::repeat_n(s, n)).collect()
    }

    pub fn per_frame(&self, t: usize) -> Vec<f64> {
        self.segment_of_frames(t).into_iter().map(|s| self.weights[s]).collect()
    }
}

/// `(1/T)·Σ w_t·(pred_t − target_t)²`.
pub fn weighted_mse(pred: &[f64], target: &[f64], weights: &LossWeights) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("weighted MSE of empty curves".into()));
    }
    // weight each segment's sum once, so constant residuals give Σ n_s·w_s exactly
    let mut sums = [0.0f64; 3];
    for ((p, t), s) in pred.iter().zip(target).zip(weights.segment_of_frames(pred.len())) {
        sums[s] += (p - t) * (p - t);
    }
    let total: f64 = sums.iter().zip(&weights.weights).map(|(e, w)| w * e).sum();
    Ok(total / pred.len() as f64)
}

/// Differentiable [`weighted_mse`] of a `[T]` prediction node.
pub fn weighted_mse_graph(g: &mut Graph, pred: Var, target: &[f64], weights: &LossWeights) -> Result<Var> {
    let t = target.len();
    if g.shape(pred) != [t] {
        return Err(Error::LengthMismatch {
            left: g.shape(pred).iter().product(),
            right: t,
        });
    }
    let target = g.input(Tensor::new(vec![t], target.iter().map(|&v| v as f32).collect())?);
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let w: Vec<f32> = weights.per_frame(t).iter().map(|w| (w / t as f64) as f32).collect();
    let weighted = g.mul_const(sq, &w)?;
    Ok(g.sum(weighted)?)
}

/// Adds `Pois(max(I,0)·p) − I·p` to every voxel for a given `p`.
pub fn poisson_augment_with<R: Rng>(image: &DynamicPetImage, p: f64, rng: &mut R) -> DynamicPetImage {
    let mut out = image.clone();
    if p == 0.0 {
        return out;
    }
    for v in out.data_mut() {
        let lambda = f64::from(v.max(0.0)) * p;
        let draw = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive finite rate").sample(rng)
        } else {
            0.0
        };
        *v = (f64::from(*v) + draw - lambda) as f32;
    }
    out
}

/// Draws one `p ~ U(0, 1)` for the whole image, then perturbs every voxel
/// with zero-mean Poisson noise of rate `I·p`.
pub fn poisson_augment<R: Rng>(image: &DynamicPetImage, rng: &mut R) -> DynamicPetImage {
    let p: f64 = rng.random();
    poisson_augment_with(image, p, rng)
}

/// Shuffled `k`-fold split of `0..n` as `(train, validation)` index lists.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut val = order[start..start + len].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push((train, val));
        start += len;
    }
    Ok(folds)
}

/// An image and its measured input function.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: DynamicPetImage,
    pub target: InputFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub folds: usize,
    pub runs: usize,
    pub augment: bool,
    pub seed: u64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-4,
            folds: 10,
            runs: 10,
            augment: true,
            seed: 0,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the (augmented) training samples seen this epoch.
    pub train_wmse: f64,
    /// Mean loss over the validation samples after the epoch; `None`
    /// without validation data.
    pub val_wmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters the model holds on return.
    pub best_epoch: usize,
}

/// Mean unclamped-prediction loss over `samples`.
pub fn evaluate_loss<M: InputFunctionModel + ?Sized>(model: &M, samples: &[Sample], weights: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred: Vec<f64> = model.predict_raw(&s.image)?.into_iter().map(f64::from).collect();
        total += weighted_mse(&pred, &s.target.values, weights)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

fn check_dataset<M: InputFunctionModel + ?Sized>(model: &M, samples: &[Sample]) -> Result<()> {
    for s in samples {
        model.check_input(&s.image)?;
        if s.image.frames() != s.target.len() {
            return Err(Error::LengthMismatch {
                left: s.image.frames(),
                right: s.target.len(),
            });
        }
    }
    Ok(())
}

/// Trains with ADAM, one sample per step. Validation data is never
/// augmented. On return the model holds the parameters of the epoch with the
/// lowest validation loss (the last epoch without validation data).
pub fn train<M: InputFunctionModel + ?Sized>(
    model: &mut M,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_dataset(model, train_set)?;
    check_dataset(model, val_set)?;
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_config, model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[epoch as u64, 0])));
        let mut epoch_loss = 0.0;
        for &i in &order {
            let sample = &train_set[i];
            let augmented;
            let image = if config.augment {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[epoch as u64, 1, i as u64]));
                augmented = poisson_augment(&sample.image, &mut rng);
                &augmented
            } else {
                &sample.image
            };
            let mut g = Graph::new();
            let vars = model.params().bind(&mut g);
            // the tape rejects NaN/inf at the op that produces it
            let diverged = |e: Error| match e {
                Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { epoch, sample: i },
                other => other,
            };
            let pred = model.forward_graph(&mut g, &vars, image).map_err(diverged)?;
            let loss = weighted_mse_graph(&mut g, pred, &sample.target.values, &config.loss).map_err(diverged)?;
            let value = f64::from(g.value(loss).data()[0]);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, sample: i });
            }
            epoch_loss += value;
            g.backward(loss)?;
            let grads = model.params().collect_grads(&g, &vars);
            adam.step(model.params_mut(), &grads)?;
        }
        let train_wmse = epoch_loss / train_set.len() as f64;
        let val_wmse = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, val_set, &config.loss)?)
        };
        log::info!("epoch {epoch}: train wMSE {train_wmse:.5}, validation wMSE {val_wmse:?}");
        history.push(EpochRecord {
            epoch,
            train_wmse,
            val_wmse,
        });
        if let Some(v) = val_wmse {
            if best.as_ref().is_none_or(|b| v < b.0) {
                let snapshot = model.params().iter().map(|p| p.value.clone()).collect();
                best = Some((v, epoch, snapshot));
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            model.params_mut().assign(snapshot)?;
            epoch
        }
        None => config.epochs,
    };
    Ok(TrainReport { history, best_epoch })
}

/// Metrics of one held-out prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub sample: usize,
    pub id: String,
    pub mse: f64,
    pub mbe: f64,
    pub wmse: f64,
    /// Clamped inference output.
    pub prediction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    pub report: TrainReport,
    pub held_out: Vec<HeldOut>,
}

/// Mean and standard deviation across runs of each held-out prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSpread {
    pub fold: usize,
    pub sample: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub jobs: Vec<FoldRun>,
}

impl CrossValidation {
    /// Per-frame mean and (population) standard deviation across runs for
    /// every held-out sample.
    pub fn spread(&self) -> Vec<PredictionSpread> {
        let mut keys: Vec<(usize, usize)> = self
            .jobs
            .iter()
            .flat_map(|j| j.held_out.iter().map(move |h| (j.fold, h.sample)))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter()
            .map(|(fold, sample)| {
                let curves: Vec<&Vec<f64>> = self
                    .jobs
                    .iter()
                    .filter(|j| j.fold == fold)
                    .flat_map(|j| j.held_out.iter().filter(|h| h.sample == sample).map(|h| &h.prediction))
                    .collect();
                let n = curves.len() as f64;
                let len = curves[0].len();
                let mean: Vec<f64> = (0..len).map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / n).collect();
                let std = (0..len)
                    .map(|t| (curves.iter().map(|c| (c[t] - mean[t]).powi(2)).sum::<f64>() / n).sqrt())
                    .collect();
                PredictionSpread {
                    fold,
                    sample,
                    mean,
                    std,
                }
            })
            .collect()
    }
}

/// Trains `folds × runs` independent models. Fixed-length baselines train
/// without augmentation. Jobs run in parallel; each is deterministic given
/// its derived seed.
pub fn cross_validate(dataset: &[Sample], model_config: &ModelConfig, config: &TrainConfig) -> Result<CrossValidation> {
    cross_validate_with(dataset, model_config, config, |_, _| Ok(()))
}

/// [`cross_validate`], calling `on_trained` with every finished job and its
/// best-validation model (e.g. to write checkpoints).
pub fn cross_validate_with<F>(
    dataset: &[Sample],
    model_config: &ModelConfig,
    config: &TrainConfig,
    on_trained: F,
) -> Result<CrossValidation>
where
    F: Fn(&FoldRun, &Model) -> Result<()> + Sync,
{
    use rayon::prelude::*;
    config.validate()?;
    let splits = kfold_split(dataset.len(), config.folds, derive_seed(config.seed, &[0]))?;
    let jobs: Vec<(usize, usize)> = (0..config.folds).flat_map(|f| (0..config.runs).map(move |r| (f, r))).collect();
    let results = jobs
        .into_par_iter()
        .map(|(fold, run)| {
            let seed = derive_seed(config.seed, &[1, fold as u64, run as u64]);
            let mut model = Model::build(model_config, derive_seed(seed, &[0]))?;
            let (train_idx, val_idx) = &splits[fold];
            let train_set: Vec<Sample> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
            let val_set: Vec<Sample> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
            let job_config = TrainConfig {
                seed: derive_seed(seed, &[1]),
                augment: config.augment && matches!(model_config, ModelConfig::FcDlif { .. }),
                ..config.clone()
            };
            let report = train(&mut model, &train_set, &val_set, &job_config)?;
            let held_out = val_idx
                .iter()
                .zip(&val_set)
                .map(|(&i, s)| {
                    let prediction = model.predict(&s.image)?.values;
                    Ok(HeldOut {
                        sample: i,
                        id: s.id.clone(),
                        mse: mse(&prediction, &s.target.values)?,
                        mbe: mbe(&prediction, &s.target.values)?,
                        wmse: weighted_mse(&prediction, &s.target.values, &config.loss)?,
                        prediction,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let job = FoldRun {
                fold,
                run,
                seed,
                report,
                held_out,
            };
            on_trained(&job, &model)?;
            Ok(job)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossValidation { jobs: results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::FrameSchedule;

    #[test]
    fn reference_segments() {
        let w = LossWeights::default();
        assert_eq!(w.segment_lengths(42), [25, 9, 8]);
        let per = w.per_frame(42);
        assert_eq!(per[24], 0.4);
        assert_eq!(per[25], 0.7);
        assert_eq!(per[34], 1.0);
    }

    #[test]
    fn segments_partition_any_length() {
        let w = LossWeights::default();
        for t in 1..=100 {
            let l = w.segment_lengths(t);
            assert_eq!(l.iter().sum::<usize>(), t, "t={t}");
        }
        // 25·32/42 = 19.05 -> 19, 9·32/42 = 6.86 -> 7, tail 6
        assert_eq!(w.segment_lengths(32), [19, 7, 6]);
        // 25·43/42 = 25.6 -> 26, 9·43/42 = 9.21 -> 9, tail 8
        assert_eq!(w.segment_lengths(43), [26, 9, 8]);
        // 9·14/42 = 3.0 exactly; 25·21/42 = 12.5 rounds up to 13
        assert_eq!(w.segment_lengths(21)[0], 13);
    }

    #[test]
    fn wmse_examples() {
        let w = LossWeights::default();
        let t = vec![0.0; 42];
        assert_eq!(weighted_mse(&t, &t, &w).unwrap(), 0.0);
        let ones = vec![1.0; 42];
        assert!((weighted_mse(&ones, &t, &w).unwrap() - 24.3 / 42.0).abs() < 1e-15);
        let r: Vec<f64> = (0..42).map(|i| (i as f64 * 0.37).sin()).collect();
        let r2: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let a = weighted_mse(&r, &t, &w).unwrap();
        assert!((weighted_mse(&r2, &t, &w).unwrap() - 4.0 * a).abs() < 1e-12);
        assert!(weighted_mse(&ones[..3], &t, &w).is_err());
    }

    #[test]
    fn graph_loss_matches_plain_loss() {
        let w = LossWeights::default();
        let pred: Vec<f64> = (0..42).map(|i| (i as f64 * 0.2).cos()).collect();
        let target: Vec<f64> = (0..42).map(|i| i as f64 / 42.0).collect();
        let mut g = Graph::new();
        let p = g.param(Tensor::new(vec![42], pred.iter().map(|&v| v as f32).collect()).unwrap(), "p");
        let loss = weighted_mse_graph(&mut g, p, &target, &w).unwrap();
        let plain = weighted_mse(&pred, &target, &w).unwrap();
        assert!((f64::from(g.value(loss).data()[0]) - plain).abs() < 1e-5);
        g.backward(loss).unwrap();
        let per = w.per_frame(42);
        for (i, gr) in g.grad(p).unwrap().iter().enumerate() {
            let expected = 2.0 * per[i] * (pred[i] - target[i]) / 42.0;
            assert!((f64::from(*gr) - expected).abs() < 1e-5);
        }
    }

    fn tiny_image(values: Vec<f32>) -> DynamicPetImage {
        let s = FrameSchedule::from_blocks(&[(1, 10.0)], 0.0).unwrap();
        DynamicPetImage::new([1, 1, values.len()], [1.0; 3], s, values).unwrap()
    }

    #[test]
    fn zero_p_is_identity() {
        let im = tiny_image(vec![1.0, 5.0, -2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(poisson_augment_with(&im, 0.0, &mut rng), im);
    }

    #[test]
    fn negative_voxels_get_no_rate() {
        let im = tiny_image(vec![-3.0; 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(poisson_augment_with(&im, 0.7, &mut rng), im);
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(70, 10, 1).unwrap();
        assert!(folds.iter().all(|(t, v)| v.len() == 7 && t.len() == 63));
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..70).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(70, 10, 1).unwrap());
        assert_ne!(folds, kfold_split(70, 10, 2).unwrap());
        let uneven = kfold_split(23, 5, 0).unwrap();
        let sizes: Vec<usize> = uneven.iter().map(|(_, v)| v.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(kfold_split(3, 5, 0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
    }
}
