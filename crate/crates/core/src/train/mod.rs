//! Optimization: learning-rate schedule, AdamW, checkpoints and the
//! contrastive training loop.

mod checkpoint;
mod trainer;

pub use checkpoint::{load_checkpoint, load_encoder_into, save_checkpoint, CHECKPOINT_VERSION};
pub use trainer::{
    embed_places, eval_split, evaluate_model, metrics_csv, place_histograms, train, MetricRow, TrainConfig, TrainState,
    METRIC_HEADER,
};

use crate::error::{Error, Result};
use crate::snn::Layer;
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};

/// Optimizer settings as written in run configs; step counts are derived
/// from the epoch budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSettings {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub warmup_fraction: f64,
    /// Global-norm gradient clipping threshold.
    pub clip_norm: Option<f64>,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            warmup_fraction: 0.05,
            clip_norm: None,
        }
    }
}

impl OptimSettings {
    pub fn resolve(&self, total_steps: u64, seed: u64) -> Result<OptimConfig> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("optim.warmup_fraction must lie in [0, 1)".into()));
        }
        let cfg = OptimConfig {
            base_lr: self.base_lr,
            weight_decay: self.weight_decay,
            betas: self.betas,
            eps: self.eps,
            warmup_steps: (self.warmup_fraction * total_steps as f64).round() as u64,
            total_steps,
            clip_norm: self.clip_norm,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if self.warmup_steps >= self.total_steps {
            return bad(format!(
                "need 0 <= warmup_steps < total_steps, got {} and {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm must be positive".into());
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then cosine annealing down to 0 at
/// `total_steps`.
pub fn lr_at(step: u64, cfg: &OptimConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.base_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    Ok((cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0))
}

/// First and second moments of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// AdamW with decoupled weight decay. Update `t` (counting from 1) runs
/// at `lr_at(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub cfg: OptimConfig,
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            step: 0,
            moments: Vec::new(),
        })
    }

    /// Applies one update from the gradients accumulated in `model`.
    /// Non-finite gradients reject the step and leave everything intact.
    /// Returns the learning rate used.
    pub fn step<L: Layer<T> + ?Sized>(&mut self, model: &mut L) -> Result<f64> {
        let mut bad = None;
        let mut sq = 0.0f64;
        model.visit_params(&mut |name, p| {
            for g in p.grad.data() {
                let g = g.to_f64().unwrap_or(f64::NAN);
                if !g.is_finite() && bad.is_none() {
                    bad = Some(name.to_string());
                }
                sq += g * g;
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }
        let t = self.step + 1;
        let lr = lr_at(t, &self.cfg)?;
        let scale = match self.cfg.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };
        let (b1, b2) = self.cfg.betas;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let (wd, eps) = (self.cfg.weight_decay, self.cfg.eps);
        let fresh = self.moments.is_empty();
        let moments = &mut self.moments;
        let mut idx = 0usize;
        let mut shape_err = None;
        model.visit_params_mut(&mut |name, p| {
            if fresh {
                moments.push(Moments {
                    name: name.to_string(),
                    m: vec![T::zero(); p.value.len()],
                    v: vec![T::zero(); p.value.len()],
                });
            }
            let Some(mo) = moments.get_mut(idx) else {
                shape_err.get_or_insert_with(|| format!("no optimizer state for {name}"));
                return;
            };
            idx += 1;
            if mo.name != name || mo.m.len() != p.value.len() {
                shape_err.get_or_insert_with(|| format!("optimizer state {} does not match parameter {name}", mo.name));
                return;
            }
            let grads = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i].to_f64().unwrap_or(0.0) * scale;
                let mut x = w.to_f64().unwrap_or(0.0);
                x -= lr * wd * x;
                let m = b1 * mo.m[i].to_f64().unwrap_or(0.0) + (1.0 - b1) * g;
                let v = b2 * mo.v[i].to_f64().unwrap_or(0.0) + (1.0 - b2) * g * g;
                x -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                mo.m[i] = T::lit(m);
                mo.v[i] = T::lit(v);
                *w = T::lit(x);
            }
        });
        if let Some(msg) = shape_err {
            return Err(Error::Shape(msg));
        }
        self.step = t;
        Ok(lr)
    }
}

#[cfg(test)]
mod tests;
