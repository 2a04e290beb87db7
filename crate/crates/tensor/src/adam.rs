use crate::error::{Result, TensorError};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// ADAM with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.second[index]
    }

    /// Applies one update. Gradients are validated before anything is
    /// modified, so a rejected step leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(TensorError::OptimizerMismatch {
                param: format!("<{} parameters, {} gradients>", params.len(), grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if g.len() != p.value.len() || self.first[i].len() != p.value.len() {
                return Err(TensorError::OptimizerMismatch { param: p.name.clone() });
            }
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient {
                    param: p.name.clone(),
                    index,
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                let mn = beta1 * *m as f64 + (1.0 - beta1) * g;
                let vn = beta2 * *v as f64 + (1.0 - beta2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let update = learning_rate * (mn / c1) / ((vn / c2).sqrt() + epsilon);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
