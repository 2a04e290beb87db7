//! Spatial feature extractor: a small 3D ResNet applied to each frame.
//!
//! stem conv -> stage 0 blocks -> [maxpool 2, transition conv, blocks] per
//! further stage -> cuboid conv (valid) -> adaptive average pool.

use fcdlif_tensor::{Graph, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfeConfig {
    /// Spatial input shape (voxels).
    pub input: [usize; 3],
    /// Channel width of each stage; a 2×2×2 max-pool precedes every stage but the first.
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Edge length of the cubic kernels inside stages (odd).
    pub conv_kernel: usize,
    /// Extents of the final cuboid kernel.
    pub final_kernel: [usize; 3],
    /// Embedding width per frame.
    pub embedding: usize,
}

impl SfeConfig {
    /// Full-resolution layout for 96×48×48 volumes.
    pub fn reference() -> Self {
        Self {
            input: [96, 48, 48],
            stage_widths: vec![8, 16, 32],
            blocks_per_stage: 1,
            conv_kernel: 3,
            final_kernel: [4, 2, 2],
            embedding: 32,
        }
    }

    /// Reduced layout for 24×16×16 volumes.
    pub fn desk() -> Self {
        Self {
            input: [24, 16, 16],
            stage_widths: vec![4, 8, 16],
            blocks_per_stage: 1,
            conv_kernel: 3,
            final_kernel: [4, 2, 2],
            embedding: 16,
        }
    }

    /// Checks the pooling/kernel pipeline and returns the spatial extents
    /// seen by the final cuboid kernel.
    pub fn validate(&self) -> Result<[usize; 3]> {
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::Config("SFE needs at least one stage of non-zero width".into()));
        }
        if self.embedding == 0 {
            return Err(Error::Config("SFE embedding width must be at least 1".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!("SFE conv kernel {} must be odd", self.conv_kernel)));
        }
        if self.final_kernel.contains(&0) {
            return Err(Error::Config("final kernel extents must be positive".into()));
        }
        let mut ext = self.input;
        if ext.contains(&0) {
            return Err(Error::Config(format!("SFE input shape {:?} has an empty axis", ext)));
        }
        for stage in 0..self.stage_widths.len() {
            if stage > 0 {
                if ext.iter().any(|&e| e < 2) {
                    return Err(Error::Config(format!(
                        "SFE stage {stage}: extents {ext:?} are too small for 2×2×2 max-pooling"
                    )));
                }
                ext = ext.map(|e| e / 2);
            }
            if self.blocks_per_stage > 0 && ext.iter().product::<usize>() < 2 {
                return Err(Error::Config(format!(
                    "SFE stage {stage}: extents {ext:?} leave fewer than 2 voxels for instance normalization"
                )));
            }
        }
        for a in 0..3 {
            if ext[a] < self.final_kernel[a] {
                return Err(Error::Config(format!(
                    "SFE final stage: extents {ext:?} are smaller than the cuboid kernel {:?}",
                    self.final_kernel
                )));
            }
        }
        Ok(ext)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvParams {
    pub weight: usize,
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockParams {
    conv1: usize,
    norm1: (usize, usize),
    conv2: usize,
    norm2: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct StageParams {
    transition: Option<ConvParams>,
    blocks: Vec<BlockParams>,
}

/// Parameter indices of one SFE inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SfeLayout {
    stem: ConvParams,
    stages: Vec<StageParams>,
    head: ConvParams,
}

pub(crate) fn conv_params<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    shape: &[usize],
    bias: bool,
    rng: &mut R,
) -> ConvParams {
    let weight = store.add_he_uniform(format!("{name}.weight"), shape, rng).index();
    let bias = bias.then(|| store.add_full(format!("{name}.bias"), &[shape[0]], 0.0).index());
    ConvParams { weight, bias }
}

fn norm_params(store: &mut ParamStore, name: &str, channels: usize) -> (usize, usize) {
    let s = store.add_full(format!("{name}.scale"), &[channels], 1.0).index();
    let b = store.add_full(format!("{name}.shift"), &[channels], 0.0).index();
    (s, b)
}

impl SfeLayout {
    pub fn register<R: Rng>(cfg: &SfeConfig, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Self {
        let k = cfg.conv_kernel;
        let w0 = cfg.stage_widths[0];
        let stem = conv_params(store, &format!("{prefix}.stem"), &[w0, 1, k, k, k], true, rng);
        let mut stages = Vec::new();
        for (s, &w) in cfg.stage_widths.iter().enumerate() {
            let transition = (s > 0).then(|| {
                let prev = cfg.stage_widths[s - 1];
                conv_params(store, &format!("{prefix}.stage{s}.transition"), &[w, prev, k, k, k], true, rng)
            });
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| {
                    let name = format!("{prefix}.stage{s}.block{b}");
                    let conv1 = conv_params(store, &format!("{name}.conv1"), &[w, w, k, k, k], false, rng).weight;
                    let norm1 = norm_params(store, &format!("{name}.norm1"), w);
                    let conv2 = conv_params(store, &format!("{name}.conv2"), &[w, w, k, k, k], false, rng).weight;
                    let norm2 = norm_params(store, &format!("{name}.norm2"), w);
                    BlockParams {
                        conv1,
                        norm1,
                        conv2,
                        norm2,
                    }
                })
                .collect();
            stages.push(StageParams { transition, blocks });
        }
        let last = *cfg.stage_widths.last().expect("validated non-empty");
        let [a, b, c] = cfg.final_kernel;
        let head = conv_params(store, &format!("{prefix}.head"), &[cfg.embedding, last, a, b, c], true, rng);
        Self { stem, stages, head }
    }

    /// `x: [N, 1, X, Y, Z] -> [N, E]`.
    pub fn forward(&self, cfg: &SfeConfig, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let p = cfg.conv_kernel / 2;
        let same = [p, p, p];
        let conv = |g: &mut Graph, x: Var, c: &ConvParams, pad: [usize; 3]| {
            g.conv3d(x, vars[c.weight], c.bias.map(|b| vars[b]), [1, 1, 1], pad)
        };
        let stem = conv(g, x, &self.stem, same)?;
        let mut h = g.relu(stem)?;
        for stage in &self.stages {
            if let Some(t) = &stage.transition {
                h = g.maxpool3d(h, [2, 2, 2], [2, 2, 2])?;
                let c = conv(g, h, t, same)?;
                h = g.relu(c)?;
            }
            for b in &stage.blocks {
                let c1 = g.conv3d(h, vars[b.conv1], None, [1, 1, 1], same)?;
                let n1 = g.instance_norm(c1, vars[b.norm1.0], vars[b.norm1.1])?;
                let r1 = g.relu(n1)?;
                let c2 = g.conv3d(r1, vars[b.conv2], None, [1, 1, 1], same)?;
                let n2 = g.instance_norm(c2, vars[b.norm2.0], vars[b.norm2.1])?;
                let sum = g.add(h, n2)?;
                h = g.relu(sum)?;
            }
        }
        let head = conv(g, h, &self.head, [0, 0, 0])?;
        Ok(g.adaptive_avg_pool(head)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert_eq!(SfeConfig::reference().validate().unwrap(), [24, 12, 12]);
        assert_eq!(SfeConfig::desk().validate().unwrap(), [6, 4, 4]);
    }

    #[test]
    fn too_small_input_names_stage() {
        let mut cfg = SfeConfig::desk();
        cfg.input = [12, 16, 16];
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("final"), "{msg}");
        cfg.input = [24, 16, 1];
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("stage 1"), "{msg}");
    }

    #[test]
    fn embedding_must_be_positive() {
        let mut cfg = SfeConfig::desk();
        cfg.embedding = 0;
        assert!(cfg.validate().is_err());
    }
}
