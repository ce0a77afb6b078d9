use super::{SewBlockConfig, SewFn};
use crate::error::{Error, Result};
use crate::snn::{
    BatchNorm, BnLayout, BufferVisitor, BufferVisitorMut, Cache, Conv2d, Dense, DsConv, Init, Layer, LayerId, Mode,
    NeuronConfig, ParamVisitor, ParamVisitorMut, ProbeKind, Spike, Tape,
};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

/// `g(s, o)` element-wise.
pub fn sew_combine<T: Scalar>(g: SewFn, s: &Tensor<T>, o: &Tensor<T>) -> Result<Tensor<T>> {
    if s.shape() != o.shape() {
        return Err(Error::Shape(format!(
            "SEW junction: spike path {:?} vs shortcut {:?}",
            s.shape(),
            o.shape()
        )));
    }
    s.zip_map(o, |s, o| match g {
        SewFn::Add => s + o,
        SewFn::And => s * o,
        SewFn::Iand => (T::one() - s) * o,
    })
}

/// Gradients of `g(s, o)` with respect to `(s, o)`.
pub fn sew_backward<T: Scalar>(g: SewFn, s: &Tensor<T>, o: &Tensor<T>, up: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if up.shape() != s.shape() || s.shape() != o.shape() {
        return Err(Error::Shape("SEW junction gradient shape mismatch".into()));
    }
    Ok(match g {
        SewFn::Add => (up.clone(), up.clone()),
        SewFn::And => (up.zip_map(o, |u, o| u * o)?, up.zip_map(s, |u, s| u * s)?),
        SewFn::Iand => (
            up.zip_map(o, |u, o| -u * o)?,
            up.zip_map(s, |u, s| u * (T::one() - s))?,
        ),
    })
}

fn junction_cache<T: Scalar>(g: SewFn, s: &Tensor<T>, o: &Tensor<T>) -> Cache<T> {
    match g {
        SewFn::Add => Cache::Shape(s.shape().to_vec()),
        _ => Cache::Junction {
            spikes: s.clone(),
            shortcut: o.clone(),
        },
    }
}

fn junction_grads<T: Scalar>(g: SewFn, cache: Cache<T>, up: &Tensor<T>, name: &str) -> Result<(Tensor<T>, Tensor<T>)> {
    match (g, cache) {
        (SewFn::Add, Cache::Shape(shape)) if shape == up.shape() => Ok((up.clone(), up.clone())),
        (_, Cache::Junction { spikes, shortcut }) => sew_backward(g, &spikes, &shortcut, up),
        _ => Err(Error::TapeMismatch {
            expected: format!("{name} junction cache"),
            found: "different cache kind".into(),
        }),
    }
}

/// The synaptic part of a [`ConvUnit`].
#[derive(Clone, Debug)]
pub enum ConvKind<T> {
    Full(Conv2d<T>),
    Separable(DsConv<T>),
}

impl<T: Scalar> ConvKind<T> {
    fn as_layer(&self) -> &dyn Layer<T> {
        match self {
            ConvKind::Full(c) => c,
            ConvKind::Separable(c) => c,
        }
    }

    fn as_layer_mut(&mut self) -> &mut dyn Layer<T> {
        match self {
            ConvKind::Full(c) => c,
            ConvKind::Separable(c) => c,
        }
    }
}

/// Convolution → batch norm → fire.
#[derive(Clone, Debug)]
pub struct ConvUnit<T> {
    name: String,
    pub conv: ConvKind<T>,
    pub bn: BatchNorm<T>,
    pub fire: Spike,
}

impl<T: Scalar> ConvUnit<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn full(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        neuron: NeuronConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let name = name.into();
        Self {
            conv: ConvKind::Full(Conv2d::new(format!("{name}.conv"), c_in, c_out, k, stride, k / 2, false, rng)),
            bn: BatchNorm::new(format!("{name}.bn"), c_out, BnLayout::Channels),
            fire: Spike::new(format!("{name}.fire"), neuron),
            name,
        }
    }

    pub fn separable(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        stride: usize,
        neuron: NeuronConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let name = name.into();
        Self {
            conv: ConvKind::Separable(DsConv::new(format!("{name}.conv"), c_in, c_out, 3, stride, false, rng)),
            bn: BatchNorm::new(format!("{name}.bn"), c_out, BnLayout::Channels),
            fire: Spike::new(format!("{name}.fire"), neuron),
            name,
        }
    }
}

impl<T: Scalar> Layer<T> for ConvUnit<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let v = self.conv.as_layer().forward(x, mode, tape)?;
        let v = self.bn.forward(&v, mode, tape)?;
        self.fire.forward(&v, mode, tape)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let g = Layer::<T>::backward(&mut self.fire, up, tape)?;
        let g = self.bn.backward(&g, tape)?;
        self.conv.as_layer_mut().backward(&g, tape)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.conv.as_layer().visit_params(f);
        self.bn.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.conv.as_layer_mut().visit_params_mut(f);
        self.bn.visit_params_mut(f);
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        self.bn.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        self.bn.visit_buffers_mut(f);
    }
}

/// The identity path of a SEW block or mixer.
#[derive(Clone, Debug)]
pub enum Shortcut<T> {
    /// Pass-through; used when the input is already binary.
    Identity,
    /// A weightless fire neuron that re-binarises a junction output
    /// (counts of 2 become 1) so the next junction stays within [0, 2].
    Relay(Spike),
    /// Strided 1×1 convolution → batch norm → fire.
    Projection(ConvUnit<T>),
}

impl<T: Scalar> Shortcut<T> {
    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        match self {
            Shortcut::Identity => Ok(x.clone()),
            Shortcut::Relay(s) => s.forward(x, mode, tape),
            Shortcut::Projection(u) => u.forward(x, mode, tape),
        }
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        match self {
            Shortcut::Identity => Ok(up.clone()),
            Shortcut::Relay(s) => Layer::<T>::backward(s, up, tape),
            Shortcut::Projection(u) => u.backward(up, tape),
        }
    }
}

/// Spike-element-wise residual block.
#[derive(Clone, Debug)]
pub struct SewBlock<T> {
    id: LayerId,
    name: String,
    pub cfg: SewBlockConfig,
    pub conv1: ConvUnit<T>,
    pub conv2: ConvUnit<T>,
    pub shortcut: Shortcut<T>,
}

impl<T: Scalar> SewBlock<T> {
    /// `binary_input` says whether the block input is a plain fire output
    /// (values {0, 1}) rather than a previous junction output.
    pub fn new(
        name: impl Into<String>,
        cfg: SewBlockConfig,
        separable: bool,
        binary_input: bool,
        neuron: NeuronConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let name = name.into();
        let unit = |n: &str, ci, co, s, rng: &mut _| {
            if separable {
                ConvUnit::separable(format!("{name}.{n}"), ci, co, s, neuron, rng)
            } else {
                ConvUnit::full(format!("{name}.{n}"), ci, co, 3, s, neuron, rng)
            }
        };
        let conv1 = unit("conv1", cfg.in_channels, cfg.out_channels, cfg.stride, rng);
        let conv2 = unit("conv2", cfg.out_channels, cfg.out_channels, 1, rng);
        let shortcut = if cfg.needs_projection() {
            Shortcut::Projection(ConvUnit::full(
                format!("{name}.shortcut"),
                cfg.in_channels,
                cfg.out_channels,
                1,
                cfg.stride,
                neuron,
                rng,
            ))
        } else if binary_input || cfg.g != SewFn::Add {
            Shortcut::Identity
        } else {
            Shortcut::Relay(Spike::new(format!("{name}.relay"), neuron))
        };
        Ok(Self {
            id: LayerId::fresh(),
            name,
            cfg,
            conv1,
            conv2,
            shortcut,
        })
    }
}

/// Runs one SEW block; `out = g(spike_path(x), shortcut(x))`.
pub fn sew_block_forward<T: Scalar>(block: &SewBlock<T>, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
    block.forward(x, mode, tape)
}

impl<T: Scalar> Layer<T> for SewBlock<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "{}: {c} input channels, expected {}",
                self.name, self.cfg.in_channels
            )));
        }
        let s = self.conv1.forward(x, mode, tape)?;
        let s = self.conv2.forward(&s, mode, tape)?;
        let o = self.shortcut.forward(x, mode, tape)?;
        let out = sew_combine(self.cfg.g, &s, &o)?;
        tape.probe(&self.name, ProbeKind::Junction, &out);
        tape.push_with(self.id, &self.name, || junction_cache(self.cfg.g, &s, &o));
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let cache = tape.pop(self.id, &self.name)?;
        let (ds, d_o) = junction_grads(self.cfg.g, cache, up, &self.name)?;
        let dx_short = self.shortcut.backward(&d_o, tape)?;
        let g = self.conv2.backward(&ds, tape)?;
        let mut dx = self.conv1.backward(&g, tape)?;
        dx.add_assign(&dx_short)?;
        Ok(dx)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.conv1.visit_params(f);
        self.conv2.visit_params(f);
        if let Shortcut::Projection(u) = &self.shortcut {
            u.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.conv1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        if let Shortcut::Projection(u) = &mut self.shortcut {
            u.visit_params_mut(f);
        }
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        self.conv1.visit_buffers(f);
        self.conv2.visit_buffers(f);
        if let Shortcut::Projection(u) = &self.shortcut {
            u.visit_buffers(f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        self.conv1.visit_buffers_mut(f);
        self.conv2.visit_buffers_mut(f);
        if let Shortcut::Projection(u) = &mut self.shortcut {
            u.visit_buffers_mut(f);
        }
    }
}

/// Token-mixing block over `[B, C, T]`: dense over the last axis → batch
/// norm → fire, joined to the input by SEW ADD.
#[derive(Clone, Debug)]
pub struct Mixer<T> {
    id: LayerId,
    name: String,
    pub dense: Dense<T>,
    pub bn: BatchNorm<T>,
    pub fire: Spike,
    pub shortcut: Shortcut<T>,
}

impl<T: Scalar> Mixer<T> {
    pub fn new(name: impl Into<String>, tokens: usize, binary_input: bool, neuron: NeuronConfig, rng: &mut impl Rng) -> Self {
        let name = name.into();
        Self {
            id: LayerId::fresh(),
            dense: Dense::new(format!("{name}.dense"), tokens, tokens, false, Init::KaimingNormal, rng),
            bn: BatchNorm::new(format!("{name}.bn"), tokens, BnLayout::LastDim),
            fire: Spike::new(format!("{name}.fire"), neuron),
            shortcut: if binary_input {
                Shortcut::Identity
            } else {
                Shortcut::Relay(Spike::new(format!("{name}.relay"), neuron))
            },
            name,
        }
    }
}

impl<T: Scalar> Layer<T> for Mixer<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let v = self.dense.forward(x, mode, tape)?;
        let v = self.bn.forward(&v, mode, tape)?;
        let s = self.fire.forward(&v, mode, tape)?;
        let o = self.shortcut.forward(x, mode, tape)?;
        let out = sew_combine(SewFn::Add, &s, &o)?;
        tape.probe(&self.name, ProbeKind::Junction, &out);
        tape.push_with(self.id, &self.name, || Cache::Shape(out.shape().to_vec()));
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let cache = tape.pop(self.id, &self.name)?;
        let (ds, d_o) = junction_grads(SewFn::Add, cache, up, &self.name)?;
        let dx_short = self.shortcut.backward(&d_o, tape)?;
        let g = Layer::<T>::backward(&mut self.fire, &ds, tape)?;
        let g = self.bn.backward(&g, tape)?;
        let mut dx = self.dense.backward(&g, tape)?;
        dx.add_assign(&dx_short)?;
        Ok(dx)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.dense.visit_params(f);
        self.bn.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.dense.visit_params_mut(f);
        self.bn.visit_params_mut(f);
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        self.bn.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        self.bn.visit_buffers_mut(f);
    }
}
