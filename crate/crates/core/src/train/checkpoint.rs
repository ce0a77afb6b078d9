//! Checkpoints: a JSON manifest next to a little-endian f32 blob.

use super::trainer::TrainState;
use super::{AdamW, Moments, OptimConfig};
use crate::arch::{ModelConfig, SpikeVpr};
use crate::error::{Error, Result};
use crate::rng::fnv1a;
use crate::snn::Layer;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    /// In f32 elements.
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: ModelConfig,
    optim: OptimConfig,
    step: u64,
    epoch: usize,
    seed: u64,
    best_val_recall1: Option<f64>,
    blob: String,
    blob_bytes: usize,
    blob_fnv1a: u64,
    tensors: Vec<Entry>,
}

fn blob_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

/// Writes `path` (JSON manifest) and the blob beside it with extension `.bin`.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut data: Vec<f32> = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: &str, role: Role, shape: &[usize], values: &[f32]| {
        tensors.push(Entry {
            name: name.to_string(),
            role,
            shape: shape.to_vec(),
            offset: data.len(),
            len: values.len(),
        });
        data.extend_from_slice(values);
    };
    state
        .model
        .visit_params(&mut |n, p| push(n, Role::Param, p.value.shape(), p.value.data()));
    state
        .model
        .visit_buffers(&mut |n, b| push(n, Role::Buffer, b.shape(), b.data()));
    for m in &state.optim.moments {
        push(&m.name, Role::AdamM, &[m.m.len()], &m.m);
        push(&m.name, Role::AdamV, &[m.v.len()], &m.v);
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let bin = blob_path(path);
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: state.model.config().clone(),
        optim: state.optim.cfg.clone(),
        step: state.optim.step,
        epoch: state.epoch,
        seed: state.seed,
        best_val_recall1: state.best_val_recall1,
        blob: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_bytes: bytes.len(),
        blob_fnv1a: fnv1a(&bytes),
        tensors,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}

struct Loaded {
    manifest: Manifest,
    values: Vec<f32>,
}

fn read(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(probe)?;
    let bin = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != manifest.blob_bytes || bytes.len() % 4 != 0 {
        return Err(Error::CorruptBlob(format!(
            "{}: {} bytes, manifest says {}",
            bin.display(),
            bytes.len(),
            manifest.blob_bytes
        )));
    }
    if fnv1a(&bytes) != manifest.blob_fnv1a {
        return Err(Error::CorruptBlob(format!("{}: checksum mismatch", bin.display())));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    for e in &manifest.tensors {
        if e.offset + e.len > values.len() || e.shape.iter().product::<usize>() != e.len {
            return Err(Error::CorruptBlob(format!(
                "tensor {} at offset {} with length {} does not fit a blob of {} values",
                e.name,
                e.offset,
                e.len,
                values.len()
            )));
        }
    }
    Ok(Loaded { manifest, values })
}

impl Loaded {
    fn tensors(&self, role: Role) -> HashMap<&str, &Entry> {
        self.manifest
            .tensors
            .iter()
            .filter(|e| e.role == role)
            .map(|e| (e.name.as_str(), e))
            .collect()
    }

    fn slice(&self, e: &Entry) -> &[f32] {
        &self.values[e.offset..e.offset + e.len]
    }
}

/// Copies every tensor whose name passes `keep` into the model; all
/// selected model tensors must be present with matching shapes.
fn fill_model(model: &mut SpikeVpr<f32>, l: &Loaded, keep: &dyn Fn(&str) -> bool) -> Result<()> {
    let params = l.tensors(Role::Param);
    let buffers = l.tensors(Role::Buffer);
    let mut err = None;
    let mut copy = |name: &str, t: &mut Tensor<f32>, table: &HashMap<&str, &Entry>| {
        if !keep(name) || err.is_some() {
            return;
        }
        match table.get(name) {
            Some(e) if e.shape == t.shape() => t.data_mut().copy_from_slice(l.slice(e)),
            Some(e) => err = Some(Error::Shape(format!("{name}: checkpoint {:?} vs model {:?}", e.shape, t.shape()))),
            None => err = Some(Error::CorruptBlob(format!("checkpoint lacks tensor {name}"))),
        }
    };
    model.visit_params_mut(&mut |n, p| copy(n, &mut p.value, &params));
    model.visit_buffers_mut(&mut |n, b| copy(n, b, &buffers));
    err.map_or(Ok(()), Err)
}

/// Restores a full training state. Nothing is returned unless every
/// tensor validates.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let l = read(path)?;
    let m = &l.manifest;
    let mut model = SpikeVpr::<f32>::new(&m.model, m.seed)?;
    fill_model(&mut model, &l, &|_| true)?;
    let ms = l.tensors(Role::AdamM);
    let vs = l.tensors(Role::AdamV);
    let mut moments = Vec::new();
    if !ms.is_empty() {
        let mut err = None;
        model.visit_params(&mut |name, p| match (ms.get(name), vs.get(name)) {
            (Some(a), Some(b)) if a.len == p.value.len() && b.len == p.value.len() => moments.push(Moments {
                name: name.to_string(),
                m: l.slice(a).to_vec(),
                v: l.slice(b).to_vec(),
            }),
            _ => {
                err.get_or_insert_with(|| Error::CorruptBlob(format!("optimizer moments for {name} missing or misshaped")));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(TrainState {
        model,
        optim: AdamW {
            cfg: m.optim.clone(),
            step: m.step,
            moments,
        },
        epoch: m.epoch,
        seed: m.seed,
        best_val_recall1: m.best_val_recall1,
    })
}

/// Copies only the encoder tensors of a checkpoint into `model`, leaving
/// the aggregator as it is.
pub fn load_encoder_into(model: &mut SpikeVpr<f32>, path: &Path) -> Result<()> {
    let l = read(path)?;
    if l.manifest.model.stages != model.config().stages
        || l.manifest.model.stem_channels != model.config().stem_channels
    {
        return Err(Error::Shape("checkpoint encoder architecture differs from the model".into()));
    }
    let mut staged = SpikeVpr::<f32>::new(model.config(), 0)?;
    fill_model(&mut staged, &l, &|n| n.starts_with("encoder."))?;
    model.encoder = staged.encoder;
    Ok(())
}
