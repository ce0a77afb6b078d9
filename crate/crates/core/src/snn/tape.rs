use super::LayerId;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// What a layer stored during forward for its backward pass.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    Input(Tensor<T>),
    BatchNorm {
        x_hat: Tensor<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
        count: usize,
        train: bool,
    },
    Spike(Tensor<T>),
    MaxPool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Shape(Vec<usize>),
    Junction {
        spikes: Tensor<T>,
        shortcut: Tensor<T>,
    },
}

#[derive(Clone, Debug)]
pub struct Record<T> {
    pub layer: LayerId,
    pub name: String,
    pub cache: Cache<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    /// The input tensor of a synaptic (weighted) layer.
    SynapticInput,
    /// The output of a fire layer.
    Fire,
    /// The output of a SEW element-wise junction.
    Junction,
}

#[derive(Clone, Debug)]
pub struct Probe<T> {
    pub name: String,
    pub kind: ProbeKind,
    pub tensor: Tensor<T>,
}

/// Forward record stack. A tape that is not recording drops pushes, which
/// is how inference avoids caching activations.
#[derive(Debug)]
pub struct Tape<T> {
    records: Vec<Record<T>>,
    recording: bool,
    probes: Option<Vec<Probe<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            recording: true,
            probes: None,
        }
    }

    pub fn inference() -> Self {
        Self {
            records: Vec::new(),
            recording: false,
            probes: None,
        }
    }

    /// Also keeps copies of synaptic inputs, fire outputs and junction outputs.
    pub fn with_probes(mut self) -> Self {
        self.probes = Some(Vec::new());
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push_with(&mut self, layer: LayerId, name: &str, cache: impl FnOnce() -> Cache<T>) {
        if self.recording {
            self.records.push(Record {
                layer,
                name: name.to_string(),
                cache: cache(),
            });
        }
    }

    /// Pops the most recent record, which must belong to `layer`.
    pub fn pop(&mut self, layer: LayerId, name: &str) -> Result<Cache<T>> {
        match self.records.pop() {
            Some(r) if r.layer == layer => Ok(r.cache),
            Some(r) => {
                let found = r.name.clone();
                self.records.push(r);
                Err(Error::TapeMismatch {
                    expected: name.to_string(),
                    found,
                })
            }
            None => Err(Error::TapeMismatch {
                expected: name.to_string(),
                found: "<empty tape>".into(),
            }),
        }
    }

    pub fn probe(&mut self, name: &str, kind: ProbeKind, tensor: &Tensor<T>) {
        if let Some(p) = self.probes.as_mut() {
            p.push(Probe {
                name: name.to_string(),
                kind,
                tensor: tensor.clone(),
            });
        }
    }

    pub fn probes(&self) -> &[Probe<T>] {
        self.probes.as_deref().unwrap_or(&[])
    }

    pub fn take_probes(&mut self) -> Vec<Probe<T>> {
        self.probes.as_mut().map(std::mem::take).unwrap_or_default()
    }
}
