//! Cosine similarity, the NT-Xent loss, and geographic positive-pair batches.

use crate::error::{Error, Result};
use crate::event::{PlaceSample, Position};
use crate::rng::rng_from;
use crate::tensor::{gemm, Scalar};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    /// Anchor places per batch; each contributes an anchor and a positive.
    pub batch_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            batch_size: 64,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        Ok(())
    }
}

fn norm<T: Scalar>(u: &[T]) -> f64 {
    u.iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>().sqrt()
}

/// `uᵀv / (‖u‖‖v‖)`, accumulated in 64-bit.
pub fn cosine_sim<T: Scalar>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine_sim: lengths {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| a.to_f64().unwrap_or(f64::NAN) * b.to_f64().unwrap_or(f64::NAN))
        .sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `2N` descriptors with an involutive pairing `j(i) ≠ i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    z: Vec<Vec<f64>>,
    partner: Vec<usize>,
}

impl PairBatch {
    pub fn new(z: Vec<Vec<f64>>, partner: Vec<usize>) -> Result<Self> {
        let m = z.len();
        if m < 4 || m % 2 != 0 {
            return Err(Error::DegenerateBatch(format!("need an even count of at least 4 descriptors, got {m}")));
        }
        if partner.len() != m {
            return Err(Error::DegenerateBatch("pairing map length differs from batch".into()));
        }
        for (i, &j) in partner.iter().enumerate() {
            if j >= m || j == i || partner[j] != i {
                return Err(Error::DegenerateBatch(format!("pairing is not an involution at {i}")));
            }
        }
        let dim = z[0].len();
        if dim == 0 || z.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("descriptors must share a nonzero dimension".into()));
        }
        if z.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("descriptor in batch".into()));
        }
        if z.iter().any(|v| norm(v) == 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { z, partner })
    }

    /// Layout `[a_0..a_{N-1}, p_0..p_{N-1}]` with `a_i ↔ p_i`.
    pub fn from_halves(anchors: Vec<Vec<f64>>, positives: Vec<Vec<f64>>) -> Result<Self> {
        let n = anchors.len();
        if positives.len() != n {
            return Err(Error::DegenerateBatch("anchor and positive counts differ".into()));
        }
        let partner = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
        Self::new(anchors.into_iter().chain(positives).collect(), partner)
    }

    pub fn descriptors(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn partner(&self) -> &[usize] {
        &self.partner
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Mean over all `2N` anchors of
/// `−log( exp(s_ij/τ) / Σ_{k≠i} exp(s_ik/τ) )`, with its gradient with
/// respect to every raw (unnormalised) descriptor.
pub fn nt_xent(batch: &PairBatch, cfg: &LossConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let m = batch.len();
    let d = batch.z[0].len();
    let norms: Vec<f64> = batch.z.iter().map(|v| norm(v)).collect();
    let mut n = vec![0.0; m * d];
    for (i, v) in batch.z.iter().enumerate() {
        for (dst, &x) in n[i * d..(i + 1) * d].iter_mut().zip(v) {
            *dst = x / norms[i];
        }
    }
    let mut sim = vec![0.0; m * m];
    gemm(m, d, m, &n, false, &n, true, &mut sim, 0.0);

    let inv_tau = 1.0 / cfg.tau;
    let mut loss = 0.0;
    // a[i][k] = ∂loss/∂s_ik through anchor i's term
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        let j = batch.partner[i];
        let logits: Vec<f64> = (0..m).map(|k| sim[i * m + k] * inv_tau).collect();
        let mx = (0..m).filter(|&k| k != i).map(|k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..m).filter(|&k| k != i).map(|k| (logits[k] - mx).exp()).sum();
        let lse = mx + z.ln();
        loss += lse - logits[j];
        for k in (0..m).filter(|&k| k != i) {
            let p = (logits[k] - lse).exp();
            let target = if k == j { 1.0 } else { 0.0 };
            a[i * m + k] = (p - target) * inv_tau / m as f64;
        }
    }
    loss /= m as f64;

    // s_ik = s_ki, so ∂/∂n_i = Σ_k (a_ik + a_ki) n_k
    let sym: Vec<f64> = (0..m * m).map(|idx| a[idx] + a[(idx % m) * m + idx / m]).collect();
    let mut dn = vec![0.0; m * d];
    gemm(m, m, d, &sym, false, &n, false, &mut dn, 0.0);
    let grads = (0..m)
        .map(|i| {
            let ni = &n[i * d..(i + 1) * d];
            let gi = &dn[i * d..(i + 1) * d];
            let proj: f64 = ni.iter().zip(gi).map(|(a, b)| a * b).sum();
            ni.iter().zip(gi).map(|(&nv, &gv)| (gv - nv * proj) / norms[i]).collect()
        })
        .collect();
    Ok((loss, grads))
}

/// Anything with a ground-truth position on a given traverse.
pub trait Located {
    fn position(&self) -> Position;
    fn traverse(&self) -> u32;
}

impl Located for PlaceSample {
    fn position(&self) -> Position {
        self.position
    }

    fn traverse(&self) -> u32 {
        self.traverse_id
    }
}

impl Located for (Position, u32) {
    fn position(&self) -> Position {
        self.0
    }

    fn traverse(&self) -> u32 {
        self.1
    }
}

/// Indices of anchor samples and their chosen positives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPlan {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
}

/// Picks `n` anchors more than `theta_m` apart from each other, each with a
/// positive drawn uniformly from the samples of other traverses within
/// `theta_m`.
pub fn build_batch<P: Located>(samples: &[P], n: usize, theta_m: f64, seed: u64) -> Result<PairPlan> {
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("batch needs at least 2 anchors, got {n}")));
    }
    let mut traverses: Vec<u32> = samples.iter().map(|s| s.traverse()).collect();
    traverses.sort_unstable();
    traverses.dedup();
    if traverses.len() < 2 {
        return Err(Error::InsufficientPositives("dataset spans fewer than 2 traverses".into()));
    }
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut anchors: Vec<usize> = Vec::with_capacity(n);
    for &i in &order {
        if anchors.len() == n {
            break;
        }
        let p = samples[i].position();
        if anchors.iter().all(|&a| samples[a].position().distance_m(&p) > theta_m) {
            anchors.push(i);
        }
    }
    if anchors.len() < n {
        return Err(Error::DegenerateBatch(format!(
            "only {} mutually distant places available for a batch of {n}",
            anchors.len()
        )));
    }
    let mut positives = Vec::with_capacity(n);
    for &a in &anchors {
        let (pa, ta) = (samples[a].position(), samples[a].traverse());
        let candidates: Vec<usize> = (0..samples.len())
            .filter(|&k| samples[k].traverse() != ta && samples[k].position().distance_m(&pa) <= theta_m)
            .collect();
        if candidates.is_empty() {
            return Err(Error::InsufficientPositives(format!(
                "sample {a} (traverse {ta}) has no other-traverse neighbour within {theta_m} m"
            )));
        }
        positives.push(candidates[rng.random_range(0..candidates.len())]);
    }
    Ok(PairPlan { anchors, positives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_batch(n: usize, d: usize, seed: u64) -> PairBatch {
        let mut rng = rng_from(seed);
        let mut v = || (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let a = (0..n).map(|_| v()).collect();
        let p = (0..n).map(|_| v()).collect();
        PairBatch::from_halves(a, p).unwrap()
    }

    #[test]
    fn cosine_basics() {
        let u = [0.3f64, -2.0, 5.0];
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -2.5 * x).collect();
        assert!((cosine_sim(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        let pos: Vec<f64> = u.iter().map(|x| 7.0 * x).collect();
        assert!((cosine_sim(&u, &pos).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine_sim(&[0.0f64, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn identical_descriptors() {
        let v = vec![0.5, -1.0, 2.0];
        let b = PairBatch::from_halves(vec![v.clone(), v.clone()], vec![v.clone(), v]).unwrap();
        let (loss, grads) = nt_xent(&b, &LossConfig::default()).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(grads.iter().flatten().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn orthogonal_negatives() {
        let n = 3;
        let e = |k: usize| (0..2 * n).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let anchors: Vec<_> = (0..n).map(e).collect();
        let b = PairBatch::from_halves(anchors.clone(), anchors).unwrap();
        let tau = 0.07;
        let (loss, _) = nt_xent(&b, &LossConfig { tau, batch_size: n }).unwrap();
        let pos = (1.0 / tau).exp();
        let expect = -(pos / (pos + (2 * n - 2) as f64)).ln();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_gradients() {
        let cfg = LossConfig::default();
        let b = random_batch(4, 8, 2);
        let (_, g) = nt_xent(&b, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..8 {
            for k in 0..8 {
                let mut zp = b.descriptors().to_vec();
                zp[i][k] += h;
                let fp = nt_xent(&PairBatch::new(zp.clone(), b.partner().to_vec()).unwrap(), &cfg).unwrap().0;
                zp[i][k] -= 2.0 * h;
                let fm = nt_xent(&PairBatch::new(zp, b.partner().to_vec()).unwrap(), &cfg).unwrap().0;
                let num = (fp - fm) / (2.0 * h);
                let rel = (g[i][k] - num).abs() / g[i][k].abs().max(num.abs()).max(1e-3);
                assert!(rel < 1e-6, "({i},{k}) analytic {} numeric {num}", g[i][k]);
            }
        }
    }

    #[test]
    fn degenerate_batches_rejected() {
        let v = vec![vec![1.0, 0.0]];
        assert!(matches!(
            PairBatch::from_halves(v.clone(), v),
            Err(Error::DegenerateBatch(_))
        ));
        let z = vec![vec![1.0]; 4];
        assert!(PairBatch::new(z.clone(), vec![1, 0, 3, 3]).is_err());
        assert!(PairBatch::new(z, vec![1, 2, 3, 0]).is_err());
        let zero = vec![vec![1.0], vec![0.0], vec![1.0], vec![2.0]];
        assert!(matches!(PairBatch::new(zero, vec![2, 3, 0, 1]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn better_positive_lowers_loss() {
        let cfg = LossConfig::default();
        let b = random_batch(3, 6, 9);
        let (l0, _) = nt_xent(&b, &cfg).unwrap();
        let mut z = b.descriptors().to_vec();
        // move positive of anchor 0 halfway towards the anchor
        let anchor = z[0].clone();
        for (p, a) in z[3].iter_mut().zip(&anchor) {
            *p = 0.5 * *p + 0.5 * a;
        }
        let before = cosine_sim(&b.descriptors()[0], &b.descriptors()[3]).unwrap();
        assert!(cosine_sim(&z[0], &z[3]).unwrap() > before);
        let (l1, _) = nt_xent(&PairBatch::new(z, b.partner().to_vec()).unwrap(), &cfg).unwrap();
        assert!(l1 < l0);
    }

    proptest! {
        #[test]
        fn loss_positive_and_invariant(seed in 0u64..1000, scale in 0.01f64..100.0, rot in 0usize..8) {
            let cfg = LossConfig::default();
            let b = random_batch(4, 5, seed);
            let (l, _) = nt_xent(&b, &cfg).unwrap();
            prop_assert!(l > 0.0);
            let scaled: Vec<Vec<f64>> = b.descriptors().iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let (ls, _) = nt_xent(&PairBatch::new(scaled, b.partner().to_vec()).unwrap(), &cfg).unwrap();
            prop_assert!((l - ls).abs() < 1e-9);
            // relabel i -> (i + rot) mod 8
            let m = b.len();
            let mut z = vec![Vec::new(); m];
            let mut partner = vec![0; m];
            for i in 0..m {
                z[(i + rot) % m] = b.descriptors()[i].clone();
                partner[(i + rot) % m] = (b.partner()[i] + rot) % m;
            }
            let (lp, _) = nt_xent(&PairBatch::new(z, partner).unwrap(), &cfg).unwrap();
            prop_assert!((l - lp).abs() < 1e-9);
        }
    }

    fn two_traverses(n: usize, spacing: f64, jitter: f64) -> Vec<(Position, u32)> {
        (0..2u32)
            .flat_map(|t| {
                (0..n).map(move |k| (Position::Route(k as f64 * spacing + if t == 1 { jitter } else { 0.0 }), t))
            })
            .collect()
    }

    #[test]
    fn identical_traverses_pair_by_place() {
        let s = two_traverses(10, 40.0, 0.0);
        let plan = build_batch(&s, 5, 30.0, 4).unwrap();
        for (&a, &p) in plan.anchors.iter().zip(&plan.positives) {
            assert_eq!(a % 10, p % 10);
            assert_ne!(s[a].1, s[p].1);
        }
        let mut sorted = plan.anchors.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
    }

    #[test]
    fn zero_radius_has_no_positives() {
        let s = two_traverses(10, 40.0, 1.5);
        assert!(matches!(build_batch(&s, 4, 0.0, 1), Err(Error::InsufficientPositives(_))));
    }

    #[test]
    fn pairs_respect_radius_and_traverse() {
        let mut rng = rng_from(3);
        let s: Vec<(Position, u32)> = (0..120)
            .map(|_| (Position::Route(rng.random_range(0.0..2000.0)), rng.random_range(0..3)))
            .collect();
        let mut ok = 0;
        for seed in 0..50 {
            let Ok(plan) = build_batch(&s, 6, 30.0, seed) else { continue };
            ok += 1;
            for (&a, &p) in plan.anchors.iter().zip(&plan.positives) {
                assert!(s[a].0.distance_m(&s[p].0) <= 30.0);
                assert_ne!(s[a].1, s[p].1);
            }
            for (x, &a) in plan.anchors.iter().enumerate() {
                for &b in &plan.anchors[x + 1..] {
                    assert!(s[a].0.distance_m(&s[b].0) > 30.0);
                }
            }
        }
        assert!(ok > 0);
    }

    #[test]
    fn same_seed_same_batch() {
        let s = two_traverses(20, 40.0, 2.0);
        assert_eq!(build_batch(&s, 8, 30.0, 5).unwrap(), build_batch(&s, 8, 30.0, 5).unwrap());
    }
}
