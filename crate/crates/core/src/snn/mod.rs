//! Stateless spiking neurons, the sigmoid surrogate gradient, and a small
//! define-by-run reverse-mode substrate over tensor layers.
//!
//! Layers run `forward(&self, ..)` and push whatever they need for the
//! backward pass onto a [`Tape`]. `backward(&mut self, ..)` pops those
//! records in exact reverse order, accumulates parameter gradients into
//! each [`Param`] and returns the gradient with respect to the input.

pub mod gradcheck;
mod layers;
mod neuron;
mod tape;


pub use layers::{
    AvgPool2d, BatchNorm, BnLayout, Conv2d, Dense, DepthwiseConv2d, DsConv, Init, MaxPool2d, Sequential, Spike,
};
pub use neuron::{fire, fire_real, surrogate_backward, NeuronConfig, SpikeTensor};
pub use tape::{Cache, Probe, ProbeKind, Record, Tape};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};
use std::sync::atomic::{AtomicU64, Ordering};

/// How fire layers behave in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeMode {
    /// Heaviside step, the model's real forward behaviour.
    Heaviside,
    /// `σ(α(v − v_th))`; only for finite-difference gradient checks.
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    /// Batch statistics in batch-norm layers when true.
    pub train: bool,
    pub spikes: SpikeMode,
}

impl Mode {
    pub const INFERENCE: Mode = Mode {
        train: false,
        spikes: SpikeMode::Heaviside,
    };
    pub const TRAIN: Mode = Mode {
        train: true,
        spikes: SpikeMode::Heaviside,
    };
    pub const SMOOTH_TRAIN: Mode = Mode {
        train: true,
        spikes: SpikeMode::Smooth,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerId(u64);

impl LayerId {
    pub fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        LayerId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

pub type ParamVisitor<'a, T> = dyn FnMut(&str, &Param<T>) + 'a;
pub type ParamVisitorMut<'a, T> = dyn FnMut(&str, &mut Param<T>) + 'a;
pub type BufferVisitor<'a, T> = dyn FnMut(&str, &Tensor<T>) + 'a;
pub type BufferVisitorMut<'a, T> = dyn FnMut(&str, &mut Tensor<T>) + 'a;

pub trait Layer<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>>;

    fn backward(&mut self, upstream: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>>;

    fn visit_params(&self, _f: &mut ParamVisitor<'_, T>) {}

    fn visit_params_mut(&mut self, _f: &mut ParamVisitorMut<'_, T>) {}

    /// Non-trainable state such as batch-norm running statistics.
    fn visit_buffers(&self, _f: &mut BufferVisitor<'_, T>) {}

    fn visit_buffers_mut(&mut self, _f: &mut BufferVisitorMut<'_, T>) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }
}

/// Runs one layer forward; thin wrapper kept for symmetry with [`layer_backward`].
pub fn layer_forward<T: Scalar>(
    layer: &dyn Layer<T>,
    x: &Tensor<T>,
    mode: Mode,
    tape: &mut Tape<T>,
) -> Result<Tensor<T>> {
    layer.forward(x, mode, tape)
}

/// Runs one layer backward, returning the input gradient and a snapshot of
/// the layer's parameter gradients (accumulated so far) by name.
pub fn layer_backward<T: Scalar>(
    layer: &mut dyn Layer<T>,
    upstream: &Tensor<T>,
    tape: &mut Tape<T>,
) -> Result<(Tensor<T>, Vec<(String, Tensor<T>)>)> {
    let grad_input = layer.backward(upstream, tape)?;
    let mut grads = Vec::new();
    layer.visit_params(&mut |name, p| grads.push((name.to_string(), p.grad.clone())));
    Ok((grad_input, grads))
}
