//! The fully convolutional input-function network and a fixed-length
//! comparator.
//!
//! Every frame goes through the same spatial feature extractor (SFE). The
//! per-frame embeddings are stacked into an `E × T` sequence and a stack of
//! same-padded 1D convolutions (the temporal feature extractor, TFE) reduces
//! it to one channel, so the output has as many samples as the input has
//! frames.

mod sfe;

use fcdlif_tensor::{Graph, Padding1d, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DynamicPetImage, InputFunction};
pub use sfe::SfeConfig;
use sfe::{conv_params, ConvParams, SfeLayout};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfeConfig {
    /// Output channels of each layer; the last must be 1.
    pub widths: Vec<usize>,
    /// Odd kernel size of each layer.
    pub kernel_sizes: Vec<usize>,
}

impl TfeConfig {
    /// Four layers, `E=32 -> 16 -> 8 -> 4 -> 1`, kernel 5.
    pub fn reference() -> Self {
        Self {
            widths: vec![16, 8, 4, 1],
            kernel_sizes: vec![5; 4],
        }
    }

    /// Same widths as the reference (`E=16 -> 16 -> 8 -> 4 -> 1`): the TFE is
    /// cheap, and a narrower stack trains markedly slower.
    pub fn desk() -> Self {
        Self {
            widths: vec![16, 8, 4, 1],
            kernel_sizes: vec![5; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.kernel_sizes.len() {
            return Err(Error::Config(
                "TFE needs one kernel size per layer and at least one layer".into(),
            ));
        }
        if self.widths.last() != Some(&1) {
            return Err(Error::Config("the last TFE layer must have exactly 1 output channel".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("TFE widths must be positive".into()));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Config(format!("TFE kernel size {k} is even; output length would change")));
        }
        Ok(())
    }

    /// Frames on each side that influence one output sample.
    pub fn receptive_radius(&self) -> usize {
        self.kernel_sizes.iter().map(|k| (k - 1) / 2).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub trunk: SfeConfig,
    pub hidden: usize,
    pub frames: usize,
}

impl BaselineConfig {
    pub fn reference() -> Self {
        let mut trunk = SfeConfig::desk();
        trunk.input = SfeConfig::reference().input;
        Self {
            trunk,
            hidden: 96,
            frames: 42,
        }
    }

    pub fn desk() -> Self {
        Self {
            trunk: SfeConfig::desk(),
            hidden: 96,
            frames: 42,
        }
    }
}

/// Architecture description echoed into weight files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    FcDlif { sfe: SfeConfig, tfe: TfeConfig },
    Baseline(BaselineConfig),
}

impl ModelConfig {
    pub fn fcdlif_reference() -> Self {
        ModelConfig::FcDlif {
            sfe: SfeConfig::reference(),
            tfe: TfeConfig::reference(),
        }
    }

    pub fn fcdlif_desk() -> Self {
        ModelConfig::FcDlif {
            sfe: SfeConfig::desk(),
            tfe: TfeConfig::desk(),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            ModelConfig::FcDlif { sfe, .. } => sfe.input,
            ModelConfig::Baseline(b) => b.trunk.input,
        }
    }
}

/// Embeddings before the temporal extractor, `E × T` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub embedding: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn column(&self, t: usize) -> Vec<f32> {
        (0..self.embedding).map(|e| self.data[e * self.frames + t]).collect()
    }

    /// One point per frame (`T × E`), as consumed by t-SNE.
    pub fn frame_points(&self) -> Vec<Vec<f64>> {
        (0..self.frames)
            .map(|t| self.column(t).into_iter().map(f64::from).collect())
            .collect()
    }
}

/// Common interface of the trainable input-function predictors.
pub trait InputFunctionModel {
    fn config(&self) -> ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn input_shape(&self) -> [usize; 3];

    /// Raw (unclamped) prediction `[T]` on `graph` with parameters `vars`.
    fn forward_graph(&self, graph: &mut Graph, vars: &[Var], image: &DynamicPetImage) -> Result<Var>;

    fn parameter_count(&self) -> usize {
        self.params().numel()
    }

    fn check_input(&self, image: &DynamicPetImage) -> Result<()> {
        if image.spatial() != self.input_shape() {
            return Err(Error::SpatialShape {
                expected: self.input_shape(),
                found: image.spatial(),
            });
        }
        Ok(())
    }

    /// Unclamped prediction, as seen by the loss during training.
    fn predict_raw(&self, image: &DynamicPetImage) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let vars = self.params().bind_frozen(&mut g);
        let out = self.forward_graph(&mut g, &vars, image)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Inference output, clamped at zero.
    fn predict(&self, image: &DynamicPetImage) -> Result<InputFunction> {
        let raw = self.predict_raw(image)?;
        InputFunction::on_schedule(image.schedule(), raw.into_iter().map(|v| f64::from(v.max(0.0))).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcDlifModel {
    sfe_config: SfeConfig,
    tfe_config: TfeConfig,
    params: ParamStore,
    sfe: SfeLayout,
    tfe: Vec<ConvParams>,
}

impl FcDlifModel {
    /// Builds and initializes the network deterministically from `seed`.
    pub fn build(sfe: SfeConfig, tfe: TfeConfig, seed: u64) -> Result<Self> {
        sfe.validate()?;
        tfe.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let sfe_layout = SfeLayout::register(&sfe, &mut params, "sfe", &mut rng);
        let mut c_in = sfe.embedding;
        let tfe_layout = tfe
            .widths
            .iter()
            .zip(&tfe.kernel_sizes)
            .enumerate()
            .map(|(i, (&w, &k))| {
                let p = conv_params(&mut params, &format!("tfe.layer{i}"), &[w, c_in, k], true, &mut rng);
                c_in = w;
                p
            })
            .collect();
        Ok(Self {
            sfe_config: sfe,
            tfe_config: tfe,
            params,
            sfe: sfe_layout,
            tfe: tfe_layout,
        })
    }

    pub fn sfe_config(&self) -> &SfeConfig {
        &self.sfe_config
    }

    pub fn tfe_config(&self) -> &TfeConfig {
        &self.tfe_config
    }

    pub fn receptive_radius(&self) -> usize {
        self.tfe_config.receptive_radius()
    }

    fn sfe_graph(&self, g: &mut Graph, vars: &[Var], image: &DynamicPetImage) -> Result<Var> {
        self.check_input(image)?;
        let x = g.input(image.to_batch_tensor());
        self.sfe.forward(&self.sfe_config, g, vars, x)
    }

    /// Stacked per-frame embeddings, `E × T`.
    pub fn extract_sfe_features(&self, image: &DynamicPetImage) -> Result<FeatureMatrix> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let feats = self.sfe_graph(&mut g, &vars, image)?;
        let stacked = g.transpose(feats)?;
        Ok(FeatureMatrix {
            embedding: self.sfe_config.embedding,
            frames: image.frames(),
            data: g.value(stacked).data().to_vec(),
        })
    }
}

impl InputFunctionModel for FcDlifModel {
    fn config(&self) -> ModelConfig {
        ModelConfig::FcDlif {
            sfe: self.sfe_config.clone(),
            tfe: self.tfe_config.clone(),
        }
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input_shape(&self) -> [usize; 3] {
        self.sfe_config.input
    }

    fn forward_graph(&self, g: &mut Graph, vars: &[Var], image: &DynamicPetImage) -> Result<Var> {
        let feats = self.sfe_graph(g, vars, image)?;
        let mut h = g.transpose(feats)?;
        let last = self.tfe.len() - 1;
        for (i, layer) in self.tfe.iter().enumerate() {
            h = g.conv1d(h, vars[layer.weight], layer.bias.map(|b| vars[b]), 1, Padding1d::Same)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(g.reshape(h, &[image.frames()])?)
    }
}

/// Fixed-length comparator: per-frame convolutional trunk, then fully
/// connected layers over the flattened `T × E` features. Only accepts the
/// frame count it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    config: BaselineConfig,
    params: ParamStore,
    trunk: SfeLayout,
    hidden: (usize, usize),
    output: (usize, usize),
}

impl BaselineModel {
    pub fn build(config: BaselineConfig, seed: u64) -> Result<Self> {
        config.trunk.validate()?;
        if config.hidden == 0 || config.frames == 0 {
            return Err(Error::Config("baseline hidden width and frame count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let trunk = SfeLayout::register(&config.trunk, &mut params, "trunk", &mut rng);
        let flat = config.frames * config.trunk.embedding;
        let h = conv_params(&mut params, "head.hidden", &[config.hidden, flat], true, &mut rng);
        let o = conv_params(&mut params, "head.output", &[config.frames, config.hidden], true, &mut rng);
        Ok(Self {
            config,
            params,
            trunk,
            hidden: (h.weight, h.bias.expect("bias requested")),
            output: (o.weight, o.bias.expect("bias requested")),
        })
    }

    pub fn frames(&self) -> usize {
        self.config.frames
    }
}

impl InputFunctionModel for BaselineModel {
    fn config(&self) -> ModelConfig {
        ModelConfig::Baseline(self.config.clone())
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input_shape(&self) -> [usize; 3] {
        self.config.trunk.input
    }

    fn forward_graph(&self, g: &mut Graph, vars: &[Var], image: &DynamicPetImage) -> Result<Var> {
        self.check_input(image)?;
        if image.frames() != self.config.frames {
            return Err(Error::FixedLength {
                expected: self.config.frames,
                found: image.frames(),
            });
        }
        let x = g.input(image.to_batch_tensor());
        let feats = self.trunk.forward(&self.config.trunk, g, vars, x)?;
        let flat = g.reshape(feats, &[self.config.frames * self.config.trunk.embedding])?;
        let h = g.matvec(vars[self.hidden.0], flat, Some(vars[self.hidden.1]))?;
        let h = g.relu(h)?;
        Ok(g.matvec(vars[self.output.0], h, Some(vars[self.output.1]))?)
    }
}

/// Either architecture, selected by [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    FcDlif(FcDlifModel),
    Baseline(BaselineModel),
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::FcDlif { sfe, tfe } => Model::FcDlif(FcDlifModel::build(sfe.clone(), tfe.clone(), seed)?),
            ModelConfig::Baseline(b) => Model::Baseline(BaselineModel::build(b.clone(), seed)?),
        })
    }

    fn inner(&self) -> &dyn InputFunctionModel {
        match self {
            Model::FcDlif(m) => m,
            Model::Baseline(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn InputFunctionModel {
        match self {
            Model::FcDlif(m) => m,
            Model::Baseline(m) => m,
        }
    }
}

impl InputFunctionModel for Model {
    fn config(&self) -> ModelConfig {
        self.inner().config()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn input_shape(&self) -> [usize; 3] {
        self.inner().input_shape()
    }

    fn forward_graph(&self, g: &mut Graph, vars: &[Var], image: &DynamicPetImage) -> Result<Var> {
        self.inner().forward_graph(g, vars, image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::FrameSchedule;

    #[test]
    fn tfe_validation() {
        assert!(TfeConfig::reference().validate().is_ok());
        let even = TfeConfig {
            widths: vec![4, 1],
            kernel_sizes: vec![5, 4],
        };
        assert!(even.validate().is_err());
        let wide_end = TfeConfig {
            widths: vec![4, 2],
            kernel_sizes: vec![5, 5],
        };
        assert!(wide_end.validate().is_err());
        assert_eq!(TfeConfig::reference().receptive_radius(), 8);
    }

    #[test]
    fn parameter_count_is_sum_of_tensors() {
        let m = FcDlifModel::build(SfeConfig::desk(), TfeConfig::desk(), 0).unwrap();
        let manual: usize = m.params().iter().map(|p| p.value.shape().iter().product::<usize>()).sum();
        assert_eq!(m.parameter_count(), manual);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = FcDlifModel::build(SfeConfig::desk(), TfeConfig::desk(), 5).unwrap();
        let b = FcDlifModel::build(SfeConfig::desk(), TfeConfig::desk(), 5).unwrap();
        let c = FcDlifModel::build(SfeConfig::desk(), TfeConfig::desk(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn wrong_spatial_shape_is_rejected() {
        let m = FcDlifModel::build(SfeConfig::desk(), TfeConfig::desk(), 0).unwrap();
        let s = FrameSchedule::from_blocks(&[(2, 10.0)], 0.0).unwrap();
        let im = DynamicPetImage::new([24, 16, 12], [1.5; 3], s, vec![0.0; 2 * 24 * 16 * 12]).unwrap();
        assert!(matches!(m.predict(&im), Err(Error::SpatialShape { .. })));
    }

    #[test]
    fn config_json_round_trip() {
        for c in [ModelConfig::fcdlif_desk(), ModelConfig::Baseline(BaselineConfig::desk())] {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
        }
    }
}
