use super::blocks::{ConvKind, ConvUnit, Mixer, SewBlock, Shortcut};
use super::{Descriptor, ModelConfig};
use crate::error::{Error, Result};
use crate::event::EventHistogram;
use crate::rng::{derive_seed, rng_from};
use crate::snn::{
    BufferVisitor, BufferVisitorMut, Dense, Init, Layer, Mode, ParamVisitor, ParamVisitorMut, Probe, Tape,
};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

/// Stacks histograms into a `[B, 2, H, W]` batch after checking geometry.
pub fn histograms_to_batch<T: Scalar>(hists: &[&EventHistogram], cfg: &ModelConfig) -> Result<Tensor<T>> {
    for h in hists {
        let g = h.geometry();
        if g.height as usize != cfg.input_height || g.width as usize != cfg.input_width {
            return Err(Error::GeometryMismatch(format!(
                "histogram is {}×{} but the model expects {}×{}",
                g.width, g.height, cfg.input_width, cfg.input_height
            )));
        }
    }
    let items: Vec<Tensor<T>> = hists.iter().map(|h| h.to_tensor()).collect();
    if items.is_empty() {
        return Ok(Tensor::zeros(&[0, 2, cfg.input_height, cfg.input_width]));
    }
    Tensor::stack(&items)
}

/// Stem convolution followed by the SEW stages.
#[derive(Clone, Debug)]
pub struct Encoder<T> {
    name: String,
    cfg: ModelConfig,
    pub stem: ConvUnit<T>,
    pub blocks: Vec<SewBlock<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvUnit::full("encoder.stem", 2, cfg.stem_channels, cfg.stem_kernel, 2, cfg.neuron, rng);
        let mut blocks = Vec::new();
        let mut binary_input = true;
        for (i, b) in cfg.blocks().into_iter().enumerate() {
            blocks.push(SewBlock::new(
                format!("encoder.block{i}"),
                b,
                cfg.separable,
                binary_input,
                cfg.neuron,
                rng,
            )?);
            binary_input = b.g != super::SewFn::Add;
        }
        Ok(Self {
            name: "encoder".into(),
            cfg: cfg.clone(),
            stem,
            blocks,
        })
    }
}

impl<T: Scalar> Layer<T> for Encoder<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.dims4()?;
        if c != 2 || h != self.cfg.input_height || w != self.cfg.input_width {
            return Err(Error::GeometryMismatch(format!(
                "input {:?}, encoder expects [B, 2, {}, {}]",
                x.shape(),
                self.cfg.input_height,
                self.cfg.input_width
            )));
        }
        let mut h = self.stem.forward(x, mode, tape)?;
        for b in &self.blocks {
            h = b.forward(&h, mode, tape)?;
        }
        Ok(h)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let mut g = up.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g, tape)?;
        }
        self.stem.backward(&g, tape)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.stem.visit_params(f);
        self.blocks.iter().for_each(|b| b.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.stem.visit_params_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_params_mut(f));
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        self.stem.visit_buffers(f);
        self.blocks.iter().for_each(|b| b.visit_buffers(f));
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        self.stem.visit_buffers_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_buffers_mut(f));
    }
}

/// Channel reduction, token mixers, then real-valued channel and row
/// projections flattened into the descriptor.
#[derive(Clone, Debug)]
pub struct Aggregator<T> {
    name: String,
    feature: (usize, usize, usize),
    pub reduce: ConvUnit<T>,
    pub mixers: Vec<Mixer<T>>,
    pub channel_proj: Dense<T>,
    pub row_proj: Dense<T>,
}

impl<T: Scalar> Aggregator<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let feature = cfg.feature_shape();
        let tokens = cfg.tokens();
        let reduce = ConvUnit::full("aggregator.reduce", feature.0, cfg.agg_channels, 1, 1, cfg.neuron, rng);
        let mixers = (0..cfg.mixer_depth)
            .map(|i| Mixer::new(format!("aggregator.mixer{i}"), tokens, i == 0, cfg.neuron, rng))
            .collect();
        let channel_proj = Dense::new(
            "aggregator.channel_proj",
            cfg.agg_channels,
            cfg.channel_proj,
            true,
            Init::FanInUniform,
            rng,
        );
        let row_proj = Dense::new("aggregator.row_proj", tokens, cfg.row_proj, true, Init::FanInUniform, rng);
        Ok(Self {
            name: "aggregator".into(),
            feature,
            reduce,
            mixers,
            channel_proj,
            row_proj,
        })
    }
}

impl<T: Scalar> Layer<T> for Aggregator<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = x.dims4()?;
        if (c, h, w) != self.feature {
            return Err(Error::Shape(format!(
                "aggregator input {:?}, expected features {:?}",
                x.shape(),
                self.feature
            )));
        }
        let a = self.reduce.forward(x, mode, tape)?;
        let ch = a.shape()[1];
        let mut r = a.reshape(&[b, ch, h * w])?;
        for m in &self.mixers {
            r = m.forward(&r, mode, tape)?;
        }
        let p = self.channel_proj.forward(&r.transpose_last2()?, mode, tape)?;
        let d = self.row_proj.forward(&p.transpose_last2()?, mode, tape)?;
        let dim = d.len() / b.max(1);
        d.reshape(&[b, dim])
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let b = up.shape().first().copied().unwrap_or(0);
        let (p, r) = (self.channel_proj.d_out, self.row_proj.d_out);
        let (_, h, w) = self.feature;
        let g = self.row_proj.backward(&up.clone().reshape(&[b, p, r])?, tape)?;
        let g = self.channel_proj.backward(&g.transpose_last2()?, tape)?;
        let mut g = g.transpose_last2()?;
        for m in self.mixers.iter_mut().rev() {
            g = m.backward(&g, tape)?;
        }
        let ch = g.shape()[1];
        self.reduce.backward(&g.reshape(&[b, ch, h, w])?, tape)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.reduce.visit_params(f);
        self.mixers.iter().for_each(|m| m.visit_params(f));
        self.channel_proj.visit_params(f);
        self.row_proj.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.reduce.visit_params_mut(f);
        self.mixers.iter_mut().for_each(|m| m.visit_params_mut(f));
        self.channel_proj.visit_params_mut(f);
        self.row_proj.visit_params_mut(f);
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        self.reduce.visit_buffers(f);
        self.mixers.iter().for_each(|m| m.visit_buffers(f));
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        self.reduce.visit_buffers_mut(f);
        self.mixers.iter_mut().for_each(|m| m.visit_buffers_mut(f));
    }
}

/// Encoder features for a batch `[B, 2, H, W]`.
pub fn encoder_forward<T: Scalar>(enc: &Encoder<T>, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
    enc.forward(x, mode, tape)
}

/// Descriptors `[B, descriptor_dim]` from encoder features.
pub fn aggregate<T: Scalar>(agg: &Aggregator<T>, features: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
    agg.forward(features, mode, tape)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynapseKind {
    Conv {
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Depthwise {
        channels: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        d_in: usize,
        d_out: usize,
    },
}

/// Static description of one weighted layer of the inference network, with
/// batch norm folded into the preceding synapse.
#[derive(Clone, Debug, PartialEq)]
pub struct SynapseInfo {
    /// Also the name under which the layer probes its input.
    pub name: String,
    pub kind: SynapseKind,
    pub weights: usize,
    pub bias: bool,
    /// Whether the input carries spike counts (accumulate) rather than real
    /// values (multiply-accumulate).
    pub spiking_input: bool,
    /// Fire layer whose output this synapse drives, if any.
    pub fire: Option<String>,
}

fn unit_synapses<T: Scalar>(u: &ConvUnit<T>, spiking_input: bool, out: &mut Vec<SynapseInfo>) {
    let fire = Some(u.fire.name().to_string());
    match &u.conv {
        ConvKind::Full(c) => out.push(SynapseInfo {
            name: c.name().to_string(),
            kind: SynapseKind::Conv {
                c_in: c.c_in,
                c_out: c.c_out,
                k: c.k,
                stride: c.stride,
                pad: c.pad,
            },
            weights: c.weight.value.len(),
            bias: true,
            spiking_input,
            fire,
        }),
        ConvKind::Separable(ds) => {
            let dw = &ds.depthwise;
            let pw = &ds.pointwise;
            out.push(SynapseInfo {
                name: dw.name().to_string(),
                kind: SynapseKind::Depthwise {
                    channels: dw.channels,
                    k: dw.k,
                    stride: dw.stride,
                    pad: dw.pad,
                },
                weights: dw.weight.value.len(),
                bias: dw.bias.is_some(),
                spiking_input,
                fire: None,
            });
            out.push(SynapseInfo {
                name: pw.name().to_string(),
                kind: SynapseKind::Conv {
                    c_in: pw.c_in,
                    c_out: pw.c_out,
                    k: 1,
                    stride: 1,
                    pad: 0,
                },
                weights: pw.weight.value.len(),
                bias: true,
                spiking_input: false,
                fire,
            });
        }
    }
}

fn dense_synapse<T: Scalar>(d: &Dense<T>, bias: bool, spiking_input: bool, fire: Option<String>) -> SynapseInfo {
    SynapseInfo {
        name: d.name().to_string(),
        kind: SynapseKind::Dense {
            d_in: d.d_in,
            d_out: d.d_out,
        },
        weights: d.weight.value.len(),
        bias,
        spiking_input,
        fire,
    }
}

/// The full place-recognition network.
#[derive(Clone, Debug)]
pub struct SpikeVpr<T> {
    name: String,
    config: ModelConfig,
    pub encoder: Encoder<T>,
    pub aggregator: Aggregator<T>,
}

impl<T: Scalar> SpikeVpr<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_from(derive_seed(seed, "model-init"));
        Ok(Self {
            name: "model".into(),
            encoder: Encoder::new(config, &mut rng)?,
            aggregator: Aggregator::new(config, &mut rng)?,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Inference-mode descriptors for a batch `[B, 2, H, W]`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x, Mode::INFERENCE, &mut Tape::inference())
    }

    /// Inference that also returns every probe recorded on the way.
    pub fn infer_probed(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Probe<T>>)> {
        let mut tape = Tape::inference().with_probes();
        let out = self.forward(x, Mode::INFERENCE, &mut tape)?;
        Ok((out, tape.take_probes()))
    }

    /// Descriptors for histograms, processed in chunks of `batch`.
    pub fn embed(&self, hists: &[&EventHistogram], batch: usize) -> Result<Vec<Descriptor>> {
        let mut out = Vec::with_capacity(hists.len());
        for chunk in hists.chunks(batch.max(1)) {
            let x = histograms_to_batch::<T>(chunk, &self.config)?;
            let d = self.infer(&x)?;
            let dim = self.config.descriptor_dim;
            for row in d.data().chunks(dim) {
                out.push(Descriptor::new(
                    row.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
                )?);
            }
        }
        Ok(out)
    }

    /// Weighted layers in forward order.
    pub fn synapses(&self) -> Vec<SynapseInfo> {
        let mut out = Vec::new();
        unit_synapses(&self.encoder.stem, true, &mut out);
        for b in &self.encoder.blocks {
            unit_synapses(&b.conv1, true, &mut out);
            unit_synapses(&b.conv2, true, &mut out);
            if let Shortcut::Projection(u) = &b.shortcut {
                unit_synapses(u, true, &mut out);
            }
        }
        let agg = &self.aggregator;
        unit_synapses(&agg.reduce, true, &mut out);
        for m in &agg.mixers {
            out.push(dense_synapse(&m.dense, true, true, Some(m.fire.name().to_string())));
        }
        out.push(dense_synapse(&agg.channel_proj, true, true, None));
        out.push(dense_synapse(&agg.row_proj, true, false, None));
        out
    }
}

impl<T: Scalar> Layer<T> for SpikeVpr<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let f = self.encoder.forward(x, mode, tape)?;
        self.aggregator.forward(&f, mode, tape)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let g = self.aggregator.backward(up, tape)?;
        self.encoder.backward(&g, tape)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.encoder.visit_params(f);
        self.aggregator.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.encoder.visit_params_mut(f);
        self.aggregator.visit_params_mut(f);
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        self.encoder.visit_buffers(f);
        self.aggregator.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        self.encoder.visit_buffers_mut(f);
        self.aggregator.visit_buffers_mut(f);
    }
}
