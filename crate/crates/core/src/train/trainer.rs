use super::{AdamW, OptimSettings};
use crate::arch::{histograms_to_batch, ModelConfig, SpikeVpr};
use crate::augment::{augmented_histogram, AugmentConfig};
use crate::contrastive::{build_batch, nt_xent, LossConfig, PairBatch};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::event::{build_histogram, EventHistogram, PlaceSample};
use crate::retrieval::{evaluate, recall_at_n, DescriptorDb, EvalConfig, PlaceMeta, RetrievalResult};
use crate::rng::{derive_seed, mix};
use crate::snn::{Layer, Mode, Tape};
use crate::synth::Role;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const METRIC_HEADER: &str = "epoch,step,lr,loss,val_recall1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Defaults to the number of training places over the batch size.
    pub steps_per_epoch: Option<usize>,
    /// Inference batch size for embedding places.
    pub embed_batch: usize,
    /// Compute validation Recall@1 after every epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: None,
            embed_batch: 32,
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.embed_batch == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::InvalidConfig("train.epochs, steps_per_epoch and embed_batch must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch_for(&self, train_places: usize, batch_size: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| (train_places / batch_size.max(1)).max(1))
    }
}

/// Everything needed to continue or reproduce training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: SpikeVpr<f32>,
    pub optim: AdamW<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub best_val_recall1: Option<f64>,
}

impl TrainState {
    pub fn new(model: &ModelConfig, optim: &OptimSettings, total_steps: u64, seed: u64) -> Result<Self> {
        Ok(Self {
            model: SpikeVpr::new(model, derive_seed(seed, "model"))?,
            optim: AdamW::new(optim.resolve(total_steps, seed)?)?,
            epoch: 0,
            seed,
            best_val_recall1: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub val_recall1: Option<f64>,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRIC_HEADER}\n");
    for r in rows {
        let val = r.val_recall1.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.step, r.lr, r.loss, val);
    }
    s
}

fn place_meta(p: &PlaceSample) -> PlaceMeta {
    PlaceMeta {
        place_id: p.place_id,
        traverse_id: p.traverse_id,
        position: p.position,
    }
}

/// Histograms over each place's fixed window.
pub fn place_histograms(places: &[PlaceSample]) -> Result<Vec<EventHistogram>> {
    places.par_iter().map(|p| build_histogram(&p.stream, p.window)).collect()
}

/// Inference descriptors, as `f64`, for the fixed windows of `places`.
pub fn embed_places(model: &SpikeVpr<f32>, places: &[PlaceSample], batch: usize) -> Result<Vec<Vec<f64>>> {
    let hists = place_histograms(places)?;
    let refs: Vec<&EventHistogram> = hists.iter().collect();
    Ok(model
        .embed(&refs, batch)?
        .into_iter()
        .map(|d| d.values().iter().map(|&v| f64::from(v)).collect())
        .collect())
}

/// Reference and query places: train traverses against test traverses,
/// or, without a test traverse, the last train traverse against the rest.
pub fn eval_split(dataset: &Dataset) -> Result<(Vec<PlaceSample>, Vec<PlaceSample>)> {
    let train: Vec<_> = dataset.traverses_with(Role::Train).collect();
    let test: Vec<_> = dataset.traverses_with(Role::Test).collect();
    let (refs, queries) = if !test.is_empty() {
        (train, test)
    } else if train.len() >= 2 {
        let (a, b) = train.split_at(train.len() - 1);
        (a.to_vec(), b.to_vec())
    } else {
        return Err(Error::InvalidConfig("evaluation needs a test traverse or two train traverses".into()));
    };
    let mut r = Vec::new();
    for t in refs {
        r.extend(dataset.places_of(t)?);
    }
    let mut q = Vec::new();
    for t in queries {
        q.extend(dataset.places_of(t)?);
    }
    Ok((r, q))
}

/// Retrieval of the evaluation queries against the reference database.
pub fn evaluate_model(model: &SpikeVpr<f32>, dataset: &Dataset, cfg: &EvalConfig, batch: usize) -> Result<RetrievalResult> {
    let (refs, queries) = eval_split(dataset)?;
    let mut db = DescriptorDb::new(model.config().descriptor_dim);
    for (p, d) in refs.iter().zip(embed_places(model, &refs, batch)?) {
        db.push(place_meta(p), d)?;
    }
    let q: Vec<(PlaceMeta, Vec<f64>)> = queries
        .iter()
        .map(place_meta)
        .zip(embed_places(model, &queries, batch)?)
        .collect();
    evaluate(&db, &q, cfg)
}

/// One optimizer step on the batch for global step `step`; returns the
/// loss and the learning rate used.
fn train_step(
    state: &mut TrainState,
    samples: &[PlaceSample],
    half_window_us: u64,
    aug: &AugmentConfig,
    loss: &LossConfig,
    theta_m: f64,
    step: u64,
) -> Result<(f64, f64)> {
    let plan = build_batch(samples, loss.batch_size, theta_m, mix(derive_seed(state.seed, "batch"), step))?;
    let items: Vec<usize> = plan.anchors.iter().chain(&plan.positives).copied().collect();
    let aug_seed = mix(derive_seed(state.seed, "augment"), step);
    let hists = items
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let p = &samples[i];
            augmented_histogram(&p.stream, p.center_us, half_window_us, aug, mix(aug_seed, k as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&EventHistogram> = hists.iter().collect();
    let x = histograms_to_batch::<f32>(&refs, state.model.config())?;
    let mut tape = Tape::new();
    let y = state.model.forward(&x, Mode::TRAIN, &mut tape)?;
    let dim = state.model.config().descriptor_dim;
    let z: Vec<Vec<f64>> = y
        .data()
        .chunks(dim)
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let n = loss.batch_size;
    let batch = PairBatch::from_halves(z[..n].to_vec(), z[n..].to_vec())?;
    let (value, grad) = nt_xent(&batch, loss)?;
    let g = Tensor::from_vec(
        y.shape().to_vec(),
        grad.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect(),
    )?;
    state.model.zero_grad();
    state.model.backward(&g, &mut tape)?;
    let lr = state.optim.step(&mut state.model)?;
    Ok((value, lr))
}

/// Runs the remaining epochs up to `cfg.epochs`, returning one metric row
/// per epoch. The run is a pure function of the dataset, configs and seed.
pub fn train(
    dataset: &Dataset,
    state: &mut TrainState,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    loss: &LossConfig,
    eval: &EvalConfig,
) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    aug.validate()?;
    loss.validate()?;
    eval.validate()?;
    let samples = dataset.places(Role::Train)?;
    let steps = cfg.steps_per_epoch_for(samples.len(), loss.batch_size) as u64;
    let half = dataset.manifest.half_window_us;
    let mut rows = Vec::new();
    while state.epoch < cfg.epochs {
        let mut sum = 0.0;
        let mut lr = 0.0;
        for _ in 0..steps {
            let step = state.optim.step;
            if step >= state.optim.cfg.total_steps {
                break;
            }
            let (l, r) = train_step(state, &samples, half, aug, loss, eval.theta_m, step)?;
            sum += l;
            lr = r;
        }
        state.epoch += 1;
        let val = if cfg.validate {
            let res = evaluate_model(&state.model, dataset, eval, cfg.embed_batch)?;
            let r1 = recall_at_n(&res, &[1]).points[0].1;
            state.best_val_recall1 = Some(state.best_val_recall1.map_or(r1, |b: f64| b.max(r1)));
            Some(r1)
        } else {
            None
        };
        let row = MetricRow {
            epoch: state.epoch,
            step: state.optim.step,
            lr,
            loss: sum / steps as f64,
            val_recall1: val,
        };
        log::info!(
            "epoch {} step {} lr {:.3e} loss {:.4} val R@1 {}",
            row.epoch,
            row.step,
            row.lr,
            row.loss,
            val.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
        );
        rows.push(row);
    }
    Ok(rows)
}
