use super::*;
use crate::snn::{Dense, Init};
use crate::rng::rng_from;
use crate::tensor::Tensor;
use proptest::prelude::*;

fn cfg(warmup: u64, total: u64) -> OptimConfig {
    OptimConfig {
        base_lr: 1e-2,
        weight_decay: 0.0,
        betas: (0.9, 0.999),
        eps: 1e-8,
        warmup_steps: warmup,
        total_steps: total,
        clip_norm: None,
        seed: 0,
    }
}

#[test]
fn schedule_endpoints() {
    let c = cfg(10, 100);
    assert_eq!(lr_at(0, &c).unwrap(), 0.0);
    assert_eq!(lr_at(10, &c).unwrap(), c.base_lr);
    assert!(lr_at(100, &c).unwrap().abs() < 1e-18);
    assert!(matches!(lr_at(101, &c), Err(Error::StepOutOfRange { .. })));
    let mid = lr_at(55, &c).unwrap();
    assert!((mid - c.base_lr * 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn schedule_continuous_and_non_negative(warmup in 1u64..50, extra in 1u64..200) {
        let c = cfg(warmup, warmup + extra);
        for s in 0..=c.total_steps {
            prop_assert!(lr_at(s, &c).unwrap() >= 0.0);
        }
        let before = lr_at(warmup - 1, &c).unwrap();
        let at = lr_at(warmup, &c).unwrap();
        prop_assert!((at - before).abs() <= c.base_lr / warmup as f64 + 1e-15);
    }
}

fn scalar_model(w: f64, g: f64) -> Dense<f64> {
    let mut d = Dense::from_weights("p", Tensor::from_vec(vec![1, 1], vec![w]).unwrap(), None).unwrap();
    d.weight.grad = Tensor::from_vec(vec![1, 1], vec![g]).unwrap();
    d
}

#[test]
fn zero_gradient_fixed_point() {
    let mut m = scalar_model(0.7, 0.0);
    let mut opt = AdamW::<f64>::new(cfg(0, 10)).unwrap();
    for _ in 0..3 {
        opt.step(&mut m).unwrap();
    }
    assert_eq!(m.weight.value.data()[0], 0.7);
}

#[test]
fn decay_only_shrinks_geometrically() {
    let mut c = cfg(0, 10);
    c.weight_decay = 0.1;
    let mut m = scalar_model(2.0, 0.0);
    let mut opt = AdamW::<f64>::new(c.clone()).unwrap();
    let mut expect = 2.0;
    for t in 1..=3 {
        let lr = opt.step(&mut m).unwrap();
        assert_eq!(lr, lr_at(t, &c).unwrap());
        expect *= 1.0 - lr * 0.1;
        assert!((m.weight.value.data()[0] - expect).abs() < 1e-15);
    }
}

#[test]
fn hand_unrolled_three_steps() {
    let mut c = cfg(0, 4);
    c.weight_decay = 0.01;
    let grads = [0.5, -0.25, 1.0];
    let mut m = scalar_model(1.0, 0.0);
    let mut opt = AdamW::<f64>::new(c.clone()).unwrap();
    let (mut x, mut mm, mut vv) = (1.0f64, 0.0f64, 0.0f64);
    for (i, &g) in grads.iter().enumerate() {
        m.weight.grad = Tensor::from_vec(vec![1, 1], vec![g]).unwrap();
        opt.step(&mut m).unwrap();
        let t = (i + 1) as i32;
        let lr = c.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * f64::from(t) / 4.0).cos());
        x -= lr * 0.01 * x;
        mm = 0.9 * mm + 0.1 * g;
        vv = 0.999 * vv + 0.001 * g * g;
        let mh = mm / (1.0 - 0.9f64.powi(t));
        let vh = vv / (1.0 - 0.999f64.powi(t));
        x -= lr * mh / (vh.sqrt() + 1e-8);
        assert_eq!(m.weight.value.data()[0], x, "step {t}");
    }
}

#[test]
fn non_finite_gradient_rejected_without_change() {
    let mut m = scalar_model(1.0, f64::NAN);
    let mut opt = AdamW::<f64>::new(cfg(0, 10)).unwrap();
    assert!(matches!(opt.step(&mut m), Err(Error::NonFiniteGradient(_))));
    assert_eq!(m.weight.value.data()[0], 1.0);
    assert_eq!(opt.step, 0);
    assert!(opt.moments.is_empty());
}

#[test]
fn clipping_bounds_the_update() {
    let mut c = cfg(0, 10);
    c.clip_norm = Some(1e-3);
    let mut rng = rng_from(1);
    let mut a = Dense::<f64>::new("a", 4, 3, true, Init::KaimingNormal, &mut rng);
    a.weight.grad.fill(100.0);
    let before = a.weight.value.clone();
    let mut opt = AdamW::new(c).unwrap();
    opt.step(&mut a).unwrap();
    // Adam normalizes the first step, so the move is lr per element anyway
    for (x, y) in a.weight.value.data().iter().zip(before.data()) {
        assert!((x - y).abs() <= 1e-2 + 1e-12);
    }
}

#[test]
fn settings_resolve_warmup() {
    let o = OptimSettings::default().resolve(200, 3).unwrap();
    assert_eq!(o.warmup_steps, 10);
    assert!(OptimSettings::default().resolve(0, 3).is_err());
}
