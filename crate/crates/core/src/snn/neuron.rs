use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub v_th: f64,
    /// Slope of the sigmoid surrogate.
    pub alpha: f64,
    pub v_reset: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            v_th: 1.0,
            alpha: 4.0,
            v_reset: 0.0,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.v_th.is_finite() || !self.v_reset.is_finite() {
            return Err(Error::InvalidConfig("neuron v_th and v_reset must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "surrogate alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Integer spike counts. Fire layers emit {0, 1}; a SEW ADD junction can
/// produce 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTensor {
    shape: Vec<usize>,
    values: Vec<u8>,
}

impl SpikeTensor {
    pub fn new(shape: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Shape(format!(
                "spike tensor shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 2) {
            return Err(Error::Shape(format!("spike count {v} outside [0, 2]")));
        }
        Ok(Self { shape, values })
    }

    /// Converts a real tensor whose entries must all be exactly 0, 1 or 2.
    pub fn from_real<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let values = t
            .data()
            .iter()
            .map(|&v| {
                let f = v.to_f64().unwrap_or(f64::NAN);
                match f {
                    x if x == 0.0 => Ok(0u8),
                    x if x == 1.0 => Ok(1),
                    x if x == 2.0 => Ok(2),
                    x => Err(Error::Shape(format!("value {x} is not a spike count"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape: t.shape().to_vec(),
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::from_vec(self.shape.clone(), data).expect("shape checked at construction")
    }
}

/// Heaviside spike: 1 where `v ≥ v_th`.
pub fn fire<T: Scalar>(v: &Tensor<T>, cfg: &NeuronConfig) -> Result<SpikeTensor> {
    let th = T::lit(cfg.v_th);
    let mut values = Vec::with_capacity(v.len());
    for &x in v.data() {
        if !x.is_finite() {
            return Err(Error::NonFinite("membrane potential".into()));
        }
        values.push(u8::from(x >= th));
    }
    Ok(SpikeTensor {
        shape: v.shape().to_vec(),
        values,
    })
}

/// Same as [`fire`] but stays in the real tensor domain used by the layers.
pub fn fire_real<T: Scalar>(v: &Tensor<T>, cfg: &NeuronConfig) -> Result<Tensor<T>> {
    let th = T::lit(cfg.v_th);
    if v.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("membrane potential".into()));
    }
    Ok(v.map(|x| if x >= th { T::one() } else { T::zero() }))
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn smooth_fire<T: Scalar>(v: &Tensor<T>, cfg: &NeuronConfig) -> Tensor<T> {
    let (th, a) = (T::lit(cfg.v_th), T::lit(cfg.alpha));
    v.map(|x| sigmoid(a * (x - th)))
}

/// `upstream ⊙ α·σ′(α(v − v_th))`.
pub fn surrogate_backward<T: Scalar>(v: &Tensor<T>, upstream: &Tensor<T>, cfg: &NeuronConfig) -> Result<Tensor<T>> {
    if v.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "surrogate: potential {:?} vs upstream {:?}",
            v.shape(),
            upstream.shape()
        )));
    }
    let (th, a) = (T::lit(cfg.v_th), T::lit(cfg.alpha));
    v.zip_map(upstream, |x, g| {
        let s = sigmoid(a * (x - th));
        g * a * s * (T::one() - s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(vec![v.len()], v).unwrap()
    }

    #[test]
    fn threshold_is_inclusive() {
        let cfg = NeuronConfig::default();
        let s = fire(&t(vec![1.0, 0.0, 0.999_999, 3.0, -2.0]), &cfg).unwrap();
        assert_eq!(s.values(), &[1, 0, 0, 1, 0]);
    }

    #[test]
    fn fire_matches_comparison() {
        let cfg = NeuronConfig {
            v_th: 0.3,
            ..Default::default()
        };
        let mut rng = rng_from(3);
        let v: Vec<f64> = (0..500).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = fire(&t(v.clone()), &cfg).unwrap();
        for (x, o) in v.iter().zip(s.values()) {
            assert_eq!(*o == 1, *x >= 0.3);
        }
    }

    #[test]
    fn fire_rejects_nan() {
        let cfg = NeuronConfig::default();
        assert!(matches!(fire(&t(vec![0.0, f64::NAN]), &cfg), Err(Error::NonFinite(_))));
        assert!(fire_real(&t(vec![f64::INFINITY]), &cfg).is_err());
    }

    #[test]
    fn surrogate_at_threshold_is_quarter_alpha() {
        let cfg = NeuronConfig::default();
        let g = surrogate_backward(&t(vec![1.0]), &t(vec![1.0]), &cfg).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-15);
        let far = surrogate_backward(&t(vec![60.0, -60.0]), &t(vec![1.0, 1.0]), &cfg).unwrap();
        assert!(far.data().iter().all(|g| g.abs() < 1e-80));
    }

    #[test]
    fn surrogate_matches_finite_difference() {
        let cfg = NeuronConfig::default();
        let mut rng = rng_from(11);
        let h = 1e-5;
        for _ in 0..200 {
            let x: f64 = rng.random_range(-2.0..4.0);
            let up: f64 = rng.random_range(-1.5..1.5);
            let g = surrogate_backward(&t(vec![x]), &t(vec![up]), &cfg).unwrap().data()[0];
            let f = |v: f64| sigmoid(cfg.alpha * (v - cfg.v_th));
            let fd = up * (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((g - fd).abs() < 1e-6, "x={x} g={g} fd={fd}");
        }
    }

    #[test]
    fn surrogate_shape_mismatch() {
        let cfg = NeuronConfig::default();
        assert!(surrogate_backward(&t(vec![1.0]), &t(vec![1.0, 2.0]), &cfg).is_err());
    }

    #[test]
    fn spike_tensor_range() {
        assert!(SpikeTensor::new(vec![2], vec![0, 3]).is_err());
        let s = SpikeTensor::new(vec![3], vec![0, 1, 2]).unwrap();
        assert_eq!(s.to_tensor::<f32>().data(), &[0.0, 1.0, 2.0]);
        assert!(SpikeTensor::from_real(&t(vec![0.5])).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NeuronConfig::default().validate().is_ok());
        let bad = NeuronConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
