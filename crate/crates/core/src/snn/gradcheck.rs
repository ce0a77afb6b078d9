//! Central finite-difference checks for 64-bit layers.

use super::{Layer, Mode, Tape};
use crate::error::Result;
use crate::rng::rng_from;
use crate::tensor::Tensor;
use rand::seq::index::sample;
use rand::Rng;

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Components whose analytic and numerical values are both below this are
/// compared in absolute rather than relative terms.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_input: f64,
    pub max_rel_param: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_input.max(self.max_rel_param)
    }
}

fn loss(layer: &dyn Layer<f64>, x: &Tensor<f64>, mode: Mode, coef: &Tensor<f64>) -> Result<f64> {
    let y = layer.forward(x, mode, &mut Tape::inference())?;
    Ok(y.data().iter().zip(coef.data()).map(|(a, b)| a * b).sum())
}

fn pick(len: usize, cap: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        sample(rng, len, cap).into_vec()
    }
}

fn nudge(layer: &mut dyn Layer<f64>, param: usize, elem: usize, delta: f64) {
    let mut i = 0;
    layer.visit_params_mut(&mut |_, p| {
        if i == param {
            p.value.data_mut()[elem] += delta;
        }
        i += 1;
    });
}

/// Compares the analytic gradient of `Σ c ⊙ layer(x)` for a random `c`
/// against central differences on up to `cap` input elements and `cap`
/// elements of every parameter.
pub fn check_layer(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64, cap: usize) -> Result<GradCheck> {
    let mut rng = rng_from(seed);
    let mut tape = Tape::new();
    let y = layer.forward(x, mode, &mut tape)?;
    let coef = Tensor::from_vec(
        y.shape().to_vec(),
        (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    layer.zero_grad();
    let dx = layer.backward(&coef, &mut tape)?;
    let mut grads = Vec::new();
    layer.visit_params(&mut |_, p| grads.push(p.grad.data().to_vec()));

    let mut out = GradCheck::default();
    for i in pick(x.len(), cap, &mut rng) {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let fp = loss(layer, &xp, mode, &coef)?;
        xp.data_mut()[i] -= 2.0 * STEP;
        let fm = loss(layer, &xp, mode, &coef)?;
        let num = (fp - fm) / (2.0 * STEP);
        out.max_rel_input = out.max_rel_input.max(rel_err(dx.data()[i], num));
        out.checked += 1;
    }
    for (pi, g) in grads.iter().enumerate() {
        for e in pick(g.len(), cap, &mut rng) {
            nudge(layer, pi, e, STEP);
            let fp = loss(layer, x, mode, &coef)?;
            nudge(layer, pi, e, -2.0 * STEP);
            let fm = loss(layer, x, mode, &coef)?;
            nudge(layer, pi, e, STEP);
            let num = (fp - fm) / (2.0 * STEP);
            out.max_rel_param = out.max_rel_param.max(rel_err(g[e], num));
            out.checked += 1;
        }
    }
    Ok(out)
}
