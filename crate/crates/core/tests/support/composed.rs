#![allow(dead_code)]

//! Finite-difference check of the loss gradient through the whole FC-DLIF
//! network (SFE with pooling and residual blocks, TFE, weighted loss).

use fcdlif_core::training::{weighted_mse_graph, LossWeights};
use fcdlif_core::{DynamicPetImage, FcDlifModel, FrameSchedule, InputFunctionModel, SfeConfig, TfeConfig};
use fcdlif_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;

pub fn small_model(seed: u64) -> FcDlifModel {
    let sfe = SfeConfig {
        input: [8, 8, 8],
        stage_widths: vec![2, 3],
        blocks_per_stage: 1,
        conv_kernel: 3,
        final_kernel: [2, 2, 2],
        embedding: 3,
    };
    let tfe = TfeConfig {
        widths: vec![2, 1],
        kernel_sizes: vec![3, 3],
    };
    FcDlifModel::build(sfe, tfe, seed).expect("valid config")
}

fn forward(model: &FcDlifModel, image: &DynamicPetImage, target: &[f64], weights: &LossWeights) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars = model.params().bind(&mut g);
    let pred = model.forward_graph(&mut g, &vars, image).unwrap();
    let l = weighted_mse_graph(&mut g, pred, target, weights).unwrap();
    (g, vars, l)
}

fn loss(model: &FcDlifModel, image: &DynamicPetImage, target: &[f64], weights: &LossWeights) -> f64 {
    let (g, _, l) = forward(model, image, target, weights);
    f64::from(g.value(l).data()[0])
}

fn loss_and_grads(model: &FcDlifModel, image: &DynamicPetImage, target: &[f64], weights: &LossWeights) -> (f64, Vec<Vec<f32>>) {
    let (mut g, vars, l) = forward(model, image, target, weights);
    let value = f64::from(g.value(l).data()[0]);
    g.backward(l).unwrap();
    (value, model.params().collect_grads(&g, &vars))
}

/// Outcome of a composed finite-difference check.
#[derive(Debug, Clone, Copy)]
pub struct ComposedCheck {
    /// Norm-wise `‖g − g_fd‖ / ‖g_fd‖` over the smooth coordinates.
    pub error: f64,
    /// Fraction of coordinates skipped because a ReLU or max-pool kink lies
    /// inside the stencil.
    pub skipped: f64,
}

/// Relative disagreement of the one-sided differences that marks a kink.
const KINK: f64 = 0.1;

pub fn composed_gradient_error(seed: u64) -> ComposedCheck {
    composed_gradient_error_with(seed, STEP)
}

/// Gradient check of a small randomly initialized model on a random 5-frame
/// image. Coordinates whose forward and backward differences disagree are
/// non-differentiable within `±step` and are excluded.
pub fn composed_gradient_error_with(seed: u64, step: f64) -> ComposedCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = small_model(seed);
    let schedule = FrameSchedule::from_blocks(&[(5, 10.0)], 0.0).unwrap();
    let data: Vec<f32> = (0..5 * 512).map(|_| rng.random_range(0.0..4.0)).collect();
    let image = DynamicPetImage::new([8, 8, 8], [1.0; 3], schedule, data).unwrap();
    let target: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..3.0)).collect();
    let weights = LossWeights::default();
    let (centre, analytic) = loss_and_grads(&model, &image, &target, &weights);

    let base: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let (mut diff, mut norm) = (0.0, 0.0);
    let (mut skipped, mut total) = (0usize, 0usize);
    // f32 rounding of the loss, seen through the difference quotient
    let noise = 1e-6 * centre.abs().max(1.0) / step;
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let mut eval = |delta: f64| {
                let mut values = base.clone();
                let v = &mut values[pi].data_mut()[k];
                *v = (f64::from(*v) + delta) as f32;
                model.params_mut().assign(values).unwrap();
                loss(&model, &image, &target, &weights)
            };
            let (up, down) = (eval(step), eval(-step));
            let forward = (up - centre) / step;
            let backward = (centre - down) / step;
            total += 1;
            if (forward - backward).abs() > KINK * forward.abs().max(backward.abs()) + noise {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * step);
            diff += (f64::from(grad[k]) - numeric).powi(2);
            norm += numeric * numeric;
        }
    }
    model.params_mut().assign(base).unwrap();
    ComposedCheck {
        error: (diff / norm.max(1e-30)).sqrt(),
        skipped: skipped as f64 / total as f64,
    }
}
