//! The SpikeVPR network: a SEW-ResNet encoder built from depthwise-separable
//! convolutions, followed by a spiking MixVPR-style aggregator.

mod blocks;
mod model;

pub use blocks::{sew_backward, sew_block_forward, sew_combine, ConvKind, ConvUnit, Mixer, SewBlock, Shortcut};
pub use model::{
    aggregate, encoder_forward, histograms_to_batch, Aggregator, Encoder, SpikeVpr, SynapseInfo, SynapseKind,
};

use crate::error::{Error, Result};
use crate::snn::NeuronConfig;
use serde::{Deserialize, Serialize};

/// Element-wise connect function of a SEW block, `out = g(spike_path, shortcut)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SewFn {
    Add,
    And,
    /// `(¬s) ∧ o`.
    Iand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SewBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub g: SewFn,
}

impl SewBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("SEW block channels must be positive".into()));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::InvalidConfig(format!("SEW block stride must be 1 or 2, got {}", self.stride)));
        }
        Ok(())
    }

    /// Whether the shortcut needs a strided 1×1 projection.
    pub fn needs_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.stride != 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub width: usize,
    pub blocks: usize,
    pub stride: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stages: Vec<StageConfig>,
    pub g: SewFn,
    /// Depthwise-separable 3×3 convolutions in SEW blocks; full 3×3 otherwise.
    #[serde(default = "default_true")]
    pub separable: bool,
    pub agg_channels: usize,
    pub mixer_depth: usize,
    pub channel_proj: usize,
    pub row_proj: usize,
    pub descriptor_dim: usize,
    #[serde(default)]
    pub neuron: NeuronConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(32, 32)
    }
}

impl ModelConfig {
    /// The desk-scale network for a given input resolution.
    pub fn desk(input_height: usize, input_width: usize) -> Self {
        Self {
            input_height,
            input_width,
            stem_channels: 32,
            stem_kernel: 7,
            stages: vec![
                StageConfig {
                    width: 32,
                    blocks: 2,
                    stride: 1,
                },
                StageConfig {
                    width: 64,
                    blocks: 2,
                    stride: 2,
                },
                StageConfig {
                    width: 128,
                    blocks: 2,
                    stride: 2,
                },
            ],
            g: SewFn::Add,
            separable: true,
            agg_channels: 64,
            mixer_depth: 2,
            channel_proj: 256,
            row_proj: 16,
            descriptor_dim: 4096,
            neuron: NeuronConfig::default(),
        }
    }

    /// One strided SEW stage; the network of the default training recipe.
    pub fn shallow(input_height: usize, input_width: usize) -> Self {
        Self {
            stages: vec![StageConfig {
                width: 64,
                blocks: 1,
                stride: 2,
            }],
            mixer_depth: 1,
            channel_proj: 64,
            descriptor_dim: 1024,
            ..Self::desk(input_height, input_width)
        }
    }

    /// Best-effort full-size network for 346×260 DAVIS input, sized to
    /// roughly 2.9M trainable parameters.
    pub fn full_scale() -> Self {
        let stage = |width, blocks, stride| StageConfig { width, blocks, stride };
        Self {
            input_height: 260,
            input_width: 346,
            stem_channels: 64,
            stem_kernel: 7,
            stages: vec![stage(64, 2, 1), stage(128, 2, 2), stage(256, 2, 2), stage(512, 3, 2)],
            g: SewFn::Add,
            separable: true,
            agg_channels: 256,
            mixer_depth: 4,
            channel_proj: 256,
            row_proj: 16,
            descriptor_dim: 4096,
            neuron: NeuronConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("stem_channels", self.stem_channels),
            ("stem_kernel", self.stem_kernel),
            ("agg_channels", self.agg_channels),
            ("channel_proj", self.channel_proj),
            ("row_proj", self.row_proj),
            ("descriptor_dim", self.descriptor_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("model.{name} must be positive")));
            }
        }
        if self.stem_kernel % 2 == 0 {
            return Err(Error::InvalidConfig("model.stem_kernel must be odd".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("model.stages must not be empty".into()));
        }
        for s in &self.stages {
            if s.width == 0 || s.blocks == 0 || !matches!(s.stride, 1 | 2) {
                return Err(Error::InvalidConfig(format!("invalid stage {s:?}")));
            }
        }
        if self.channel_proj * self.row_proj != self.descriptor_dim {
            return Err(Error::InvalidConfig(format!(
                "channel_proj ({}) × row_proj ({}) must equal descriptor_dim ({})",
                self.channel_proj, self.row_proj, self.descriptor_dim
            )));
        }
        self.neuron.validate()
    }

    /// Every SEW block in forward order.
    pub fn blocks(&self) -> Vec<SewBlockConfig> {
        let mut out = Vec::new();
        let mut c = self.stem_channels;
        for s in &self.stages {
            for b in 0..s.blocks {
                out.push(SewBlockConfig {
                    in_channels: c,
                    out_channels: s.width,
                    stride: if b == 0 { s.stride } else { 1 },
                    g: self.g,
                });
                c = s.width;
            }
        }
        out
    }

    /// Encoder output `(channels, height, width)`. Every strided layer pads
    /// so that each spatial extent becomes `ceil(n / stride)`.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let down = |n: usize, s: usize| n.div_ceil(s);
        let (mut h, mut w) = (down(self.input_height, 2), down(self.input_width, 2));
        for b in self.blocks() {
            h = down(h, b.stride);
            w = down(w, b.stride);
        }
        let c = self.stages.last().map_or(self.stem_channels, |s| s.width);
        (c, h, w)
    }

    pub fn tokens(&self) -> usize {
        let (_, h, w) = self.feature_shape();
        h * w
    }
}

fn unit_params(c_in: usize, c_out: usize, k: usize, separable: bool) -> usize {
    let synapse = if separable { c_in * k * k + c_in * c_out } else { c_out * c_in * k * k };
    synapse + 2 * c_out
}

/// Trainable scalars (weights, biases, batch-norm affine) in closed form.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let mut n = unit_params(2, cfg.stem_channels, cfg.stem_kernel, false);
    for b in cfg.blocks() {
        n += unit_params(b.in_channels, b.out_channels, 3, cfg.separable);
        n += unit_params(b.out_channels, b.out_channels, 3, cfg.separable);
        if b.needs_projection() {
            n += unit_params(b.in_channels, b.out_channels, 1, false);
        }
    }
    let (c, _, _) = cfg.feature_shape();
    let t = cfg.tokens();
    n += unit_params(c, cfg.agg_channels, 1, false);
    n += cfg.mixer_depth * (t * t + 2 * t);
    n += cfg.agg_channels * cfg.channel_proj + cfg.channel_proj;
    n += t * cfg.row_proj + cfg.row_proj;
    n
}

/// A finite real-valued place descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    values: Vec<f32>,
}

impl Descriptor {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
