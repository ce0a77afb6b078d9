use super::neuron::{fire_real, smooth_fire, surrogate_backward, NeuronConfig};
use super::tape::{Cache, ProbeKind, Tape};
use super::{BufferVisitor, BufferVisitorMut, Layer, LayerId, Mode, Param, ParamVisitor, ParamVisitorMut, SpikeMode};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    KaimingNormal,
    /// `U(−1/√fan_in, 1/√fan_in)`.
    FanInUniform,
}

fn init_tensor<T: Scalar>(shape: &[usize], fan_in: usize, init: Init, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let fan = fan_in.max(1) as f64;
    let data = match init {
        Init::KaimingNormal => {
            let std = (2.0 / fan).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::lit(z * std)
                })
                .collect()
        }
        Init::FanInUniform => {
            let b = 1.0 / fan.sqrt();
            (0..n).map(|_| T::lit(rng.random_range(-b..b))).collect()
        }
    };
    Tensor::from_vec(shape.to_vec(), data).expect("init shape")
}

fn expect_input<T>(cache: Cache<T>, name: &str) -> Result<Tensor<T>> {
    match cache {
        Cache::Input(x) => Ok(x),
        _ => Err(Error::TapeMismatch {
            expected: format!("{name} input cache"),
            found: "different cache kind".into(),
        }),
    }
}

fn check_upstream<T: Scalar>(up: &Tensor<T>, shape: &[usize], name: &str) -> Result<()> {
    if up.shape() != shape {
        return Err(Error::Shape(format!(
            "{name}: upstream {:?}, expected {:?}",
            up.shape(),
            shape
        )));
    }
    Ok(())
}

fn out_extent(len: usize, k: usize, stride: usize, pad: usize, name: &str) -> Result<usize> {
    if len + 2 * pad < k {
        return Err(Error::Shape(format!(
            "{name}: input extent {len} too small for kernel {k} with padding {pad}"
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn src(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        let i = (o * self.s + kk) as isize - self.p as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let n = g.ho * g.wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &mut cols[((c * g.k + ki) * g.k + kj) * n..][..n];
                for oh in 0..g.ho {
                    let ih = g.src(oh, ki, g.h);
                    for ow in 0..g.wo {
                        row[oh * g.wo + ow] = match (ih, g.src(ow, kj, g.w)) {
                            (Some(ih), Some(iw)) => x[(c * g.h + ih) * g.w + iw],
                            _ => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geom, dx: &mut [T]) {
    let n = g.ho * g.wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &cols[((c * g.k + ki) * g.k + kj) * n..][..n];
                for oh in 0..g.ho {
                    let Some(ih) = g.src(oh, ki, g.h) else { continue };
                    for ow in 0..g.wo {
                        if let Some(iw) = g.src(ow, kj, g.w) {
                            dx[(c * g.h + ih) * g.w + iw] += row[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Full 2-D convolution over `[B, C, H, W]`, weight `[C_out, C_in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    id: LayerId,
    name: String,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = init_tensor(&[c_out, c_in, k, k], c_in * k * k, Init::KaimingNormal, rng);
        let bias = bias.then(|| Tensor::zeros(&[c_out]));
        Self::from_weights(name, weight, bias, stride, pad).expect("consistent shapes")
    }

    pub fn from_weights(
        name: impl Into<String>,
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let name = name.into();
        let (c_out, c_in, k, k2) = weight.dims4()?;
        if k != k2 || k == 0 || stride == 0 {
            return Err(Error::Shape(format!("{name}: bad kernel {:?} / stride {stride}", weight.shape())));
        }
        if let Some(b) = &bias {
            b.expect_shape(&[c_out])?;
        }
        Ok(Self {
            id: LayerId::fresh(),
            name,
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            c_in,
            c_out,
            k,
            stride,
            pad,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            out_extent(h, self.k, self.stride, self.pad, &self.name)?,
            out_extent(w, self.k, self.stride, self.pad, &self.name)?,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn geom(&self, h: usize, w: usize) -> Result<Geom> {
        let (ho, wo) = self.output_hw(h, w)?;
        Ok(Geom {
            c: self.c_in,
            h,
            w,
            k: self.k,
            s: self.stride,
            p: self.pad,
            ho,
            wo,
        })
    }

    /// Absorbs an inference-mode batch norm that follows this convolution.
    pub fn fold_batchnorm(&self, bn: &BatchNorm<T>) -> Result<Conv2d<T>> {
        let (scale, shift) = bn.inference_affine()?;
        if scale.len() != self.c_out {
            return Err(Error::Shape(format!("{}: cannot fold {}", self.name, bn.name)));
        }
        let per = self.c_in * self.k * self.k;
        let mut w = self.weight.value.clone();
        for (o, chunk) in w.data_mut().chunks_mut(per).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= scale[o]);
        }
        let b: Vec<T> = (0..self.c_out)
            .map(|o| {
                let b0 = self.bias.as_ref().map_or(T::zero(), |b| b.value.data()[o]);
                b0 * scale[o] + shift[o]
            })
            .collect();
        Conv2d::from_weights(
            self.name.clone(),
            w,
            Some(Tensor::from_vec(vec![self.c_out], b)?),
            self.stride,
            self.pad,
        )
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, _mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.c_in {
            return Err(Error::Shape(format!("{}: {c} input channels, expected {}", self.name, self.c_in)));
        }
        let g = self.geom(h, w)?;
        let (co, kk, n) = (self.c_out, self.c_in * self.k * self.k, g.ho * g.wo);
        let mut out = Tensor::zeros(&[b, co, g.ho, g.wo]);
        if b > 0 {
            let wv = self.weight.value.data();
            let bias = self.bias.as_ref().map(|p| p.value.data());
            let pointwise = self.is_pointwise();
            out.data_mut()
                .par_chunks_mut(co * n)
                .zip(x.data().par_chunks(c * h * w))
                .for_each(|(o, xb)| {
                    if pointwise {
                        gemm(co, kk, n, wv, false, xb, false, o, T::zero());
                    } else {
                        let mut cols = vec![T::zero(); kk * n];
                        im2col(xb, &g, &mut cols);
                        gemm(co, kk, n, wv, false, &cols, false, o, T::zero());
                    }
                    if let Some(bias) = bias {
                        for (row, &bv) in o.chunks_mut(n).zip(bias) {
                            row.iter_mut().for_each(|v| *v += bv);
                        }
                    }
                });
        }
        tape.probe(&self.name, ProbeKind::SynapticInput, x);
        tape.push_with(self.id, &self.name, || Cache::Input(x.clone()));
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let x = expect_input(tape.pop(self.id, &self.name)?, &self.name)?;
        let (b, c, h, w) = x.dims4()?;
        let g = self.geom(h, w)?;
        let (co, kk, n) = (self.c_out, self.c_in * self.k * self.k, g.ho * g.wo);
        check_upstream(up, &[b, co, g.ho, g.wo], &self.name)?;
        let mut dx = Tensor::zeros(x.shape());
        if b == 0 {
            return Ok(dx);
        }
        let wv = self.weight.value.data();
        let pointwise = self.is_pointwise();
        let partials: Vec<Vec<T>> = dx
            .data_mut()
            .par_chunks_mut(c * h * w)
            .zip(x.data().par_chunks(c * h * w))
            .zip(up.data().par_chunks(co * n))
            .map(|((dxb, xb), gb)| {
                let mut dw = vec![T::zero(); co * kk];
                if pointwise {
                    gemm(co, n, kk, gb, false, xb, true, &mut dw, T::zero());
                    gemm(kk, co, n, wv, true, gb, false, dxb, T::zero());
                } else {
                    let mut cols = vec![T::zero(); kk * n];
                    im2col(xb, &g, &mut cols);
                    gemm(co, n, kk, gb, false, &cols, true, &mut dw, T::zero());
                    gemm(kk, co, n, wv, true, gb, false, &mut cols, T::zero());
                    col2im(&cols, &g, dxb);
                }
                dw
            })
            .collect();
        let wg = self.weight.grad.data_mut();
        for p in &partials {
            wg.iter_mut().zip(p).for_each(|(a, &v)| *a += v);
        }
        if let Some(bias) = self.bias.as_mut() {
            let bg = bias.grad.data_mut();
            for gb in up.data().chunks(co * n) {
                for (o, row) in gb.chunks(n).enumerate() {
                    bg[o] += row.iter().copied().sum::<T>();
                }
            }
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        f(&format!("{}.weight", self.name), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }
}

/// One `k×k` filter per channel, weight `[C, 1, k, k]`.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d<T> {
    id: LayerId,
    name: String,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub channels: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> DepthwiseConv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = init_tensor(&[channels, 1, k, k], k * k, Init::KaimingNormal, rng);
        let bias = bias.then(|| Tensor::zeros(&[channels]));
        Self::from_weights(name, weight, bias, stride, pad).expect("consistent shapes")
    }

    pub fn from_weights(
        name: impl Into<String>,
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let name = name.into();
        let (c, one, k, k2) = weight.dims4()?;
        if one != 1 || k != k2 || k == 0 || stride == 0 {
            return Err(Error::Shape(format!("{name}: bad depthwise kernel {:?}", weight.shape())));
        }
        if let Some(b) = &bias {
            b.expect_shape(&[c])?;
        }
        Ok(Self {
            id: LayerId::fresh(),
            name,
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            channels: c,
            k,
            stride,
            pad,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            out_extent(h, self.k, self.stride, self.pad, &self.name)?,
            out_extent(w, self.k, self.stride, self.pad, &self.name)?,
        ))
    }

    fn geom(&self, h: usize, w: usize) -> Result<Geom> {
        let (ho, wo) = self.output_hw(h, w)?;
        Ok(Geom {
            c: 1,
            h,
            w,
            k: self.k,
            s: self.stride,
            p: self.pad,
            ho,
            wo,
        })
    }
}

impl<T: Scalar> Layer<T> for DepthwiseConv2d<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, _mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!("{}: {c} channels, expected {}", self.name, self.channels)));
        }
        let g = self.geom(h, w)?;
        let mut out = Tensor::zeros(&[b, c, g.ho, g.wo]);
        let (wv, k) = (self.weight.value.data(), self.k);
        let bias = self.bias.as_ref().map(|p| p.value.data());
        if b > 0 {
            out.data_mut()
                .par_chunks_mut(g.ho * g.wo)
                .zip(x.data().par_chunks(h * w))
                .enumerate()
                .for_each(|(i, (o, xp))| {
                    let ch = i % c;
                    let kern = &wv[ch * k * k..][..k * k];
                    let b0 = bias.map_or(T::zero(), |bv| bv[ch]);
                    for oh in 0..g.ho {
                        for ow in 0..g.wo {
                            let mut acc = b0;
                            for ki in 0..k {
                                let Some(ih) = g.src(oh, ki, h) else { continue };
                                for kj in 0..k {
                                    if let Some(iw) = g.src(ow, kj, w) {
                                        acc += kern[ki * k + kj] * xp[ih * w + iw];
                                    }
                                }
                            }
                            o[oh * g.wo + ow] = acc;
                        }
                    }
                });
        }
        tape.probe(&self.name, ProbeKind::SynapticInput, x);
        tape.push_with(self.id, &self.name, || Cache::Input(x.clone()));
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let x = expect_input(tape.pop(self.id, &self.name)?, &self.name)?;
        let (b, c, h, w) = x.dims4()?;
        let g = self.geom(h, w)?;
        check_upstream(up, &[b, c, g.ho, g.wo], &self.name)?;
        let mut dx = Tensor::zeros(x.shape());
        if b == 0 {
            return Ok(dx);
        }
        let k = self.k;
        let wv = self.weight.value.data();
        let partials: Vec<Vec<T>> = dx
            .data_mut()
            .par_chunks_mut(h * w)
            .zip(x.data().par_chunks(h * w))
            .zip(up.data().par_chunks(g.ho * g.wo))
            .enumerate()
            .map(|(i, ((dxp, xp), gp))| {
                let kern = &wv[(i % c) * k * k..][..k * k];
                let mut dw = vec![T::zero(); k * k];
                for oh in 0..g.ho {
                    for ow in 0..g.wo {
                        let gv = gp[oh * g.wo + ow];
                        if gv == T::zero() {
                            continue;
                        }
                        for ki in 0..k {
                            let Some(ih) = g.src(oh, ki, h) else { continue };
                            for kj in 0..k {
                                if let Some(iw) = g.src(ow, kj, w) {
                                    dw[ki * k + kj] += gv * xp[ih * w + iw];
                                    dxp[ih * w + iw] += gv * kern[ki * k + kj];
                                }
                            }
                        }
                    }
                }
                dw
            })
            .collect();
        let wg = self.weight.grad.data_mut();
        for (i, p) in partials.iter().enumerate() {
            let dst = &mut wg[(i % c) * k * k..][..k * k];
            dst.iter_mut().zip(p).for_each(|(a, &v)| *a += v);
        }
        if let Some(bias) = self.bias.as_mut() {
            let bg = bias.grad.data_mut();
            for (i, gp) in up.data().chunks(g.ho * g.wo).enumerate() {
                bg[i % c] += gp.iter().copied().sum::<T>();
            }
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        f(&format!("{}.weight", self.name), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }
}

/// Depthwise `k×k` (carrying the stride) followed by a pointwise `1×1`.
#[derive(Clone, Debug)]
pub struct DsConv<T> {
    name: String,
    pub depthwise: DepthwiseConv2d<T>,
    pub pointwise: Conv2d<T>,
}

impl<T: Scalar> DsConv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let name = name.into();
        let depthwise = DepthwiseConv2d::new(format!("{name}.dw"), c_in, k, stride, k / 2, false, rng);
        let pointwise = Conv2d::new(format!("{name}.pw"), c_in, c_out, 1, 1, 0, bias, rng);
        Self {
            name,
            depthwise,
            pointwise,
        }
    }

    pub fn from_parts(name: impl Into<String>, depthwise: DepthwiseConv2d<T>, pointwise: Conv2d<T>) -> Result<Self> {
        if depthwise.channels != pointwise.c_in || pointwise.k != 1 || pointwise.stride != 1 || pointwise.pad != 0 {
            return Err(Error::Shape("depthwise/pointwise pair does not compose".into()));
        }
        Ok(Self {
            name: name.into(),
            depthwise,
            pointwise,
        })
    }

    /// The full `[C_out, C_in, k, k]` kernel this factorisation represents.
    pub fn equivalent_kernel(&self) -> Tensor<T> {
        let (co, ci, k) = (self.pointwise.c_out, self.depthwise.channels, self.depthwise.k);
        let dw = self.depthwise.weight.value.data();
        let pw = self.pointwise.weight.value.data();
        let mut out = Tensor::zeros(&[co, ci, k, k]);
        let d = out.data_mut();
        for o in 0..co {
            for c in 0..ci {
                for j in 0..k * k {
                    d[(o * ci + c) * k * k + j] = pw[o * ci + c] * dw[c * k * k + j];
                }
            }
        }
        out
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.depthwise.output_hw(h, w)
    }
}

impl<T: Scalar> Layer<T> for DsConv<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let mid = self.depthwise.forward(x, mode, tape)?;
        self.pointwise.forward(&mid, mode, tape)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let mid = self.pointwise.backward(up, tape)?;
        self.depthwise.backward(&mid, tape)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.depthwise.visit_params(f);
        self.pointwise.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.depthwise.visit_params_mut(f);
        self.pointwise.visit_params_mut(f);
    }
}

/// Affine map over the last dimension, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    id: LayerId,
    name: String,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub d_in: usize,
    pub d_out: usize,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize, bias: bool, init: Init, rng: &mut impl Rng) -> Self {
        let weight = init_tensor(&[d_out, d_in], d_in, init, rng);
        let bias = bias.then(|| match init {
            Init::KaimingNormal => Tensor::zeros(&[d_out]),
            Init::FanInUniform => init_tensor(&[d_out], d_in, init, rng),
        });
        Self::from_weights(name, weight, bias).expect("consistent shapes")
    }

    pub fn from_weights(name: impl Into<String>, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let name = name.into();
        let &[d_out, d_in] = weight.shape() else {
            return Err(Error::Shape(format!("{name}: dense weight must be 2-D")));
        };
        if let Some(b) = &bias {
            b.expect_shape(&[d_out])?;
        }
        Ok(Self {
            id: LayerId::fresh(),
            name,
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            d_in,
            d_out,
        })
    }

    /// Absorbs an inference-mode batch norm over this layer's outputs.
    pub fn fold_batchnorm(&self, bn: &BatchNorm<T>) -> Result<Dense<T>> {
        let (scale, shift) = bn.inference_affine()?;
        if scale.len() != self.d_out || bn.layout != BnLayout::LastDim {
            return Err(Error::Shape(format!("{}: cannot fold {}", self.name, bn.name)));
        }
        let mut w = self.weight.value.clone();
        for (o, row) in w.data_mut().chunks_mut(self.d_in).enumerate() {
            row.iter_mut().for_each(|v| *v *= scale[o]);
        }
        let b: Vec<T> = (0..self.d_out)
            .map(|o| self.bias.as_ref().map_or(T::zero(), |b| b.value.data()[o]) * scale[o] + shift[o])
            .collect();
        Dense::from_weights(self.name.clone(), w, Some(Tensor::from_vec(vec![self.d_out], b)?))
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, _mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        if x.shape().last() != Some(&self.d_in) {
            return Err(Error::Shape(format!(
                "{}: input {:?}, expected last dim {}",
                self.name,
                x.shape(),
                self.d_in
            )));
        }
        let rows = x.len() / self.d_in;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty") = self.d_out;
        let mut out = Tensor::zeros(&shape);
        gemm(
            rows,
            self.d_in,
            self.d_out,
            x.data(),
            false,
            self.weight.value.data(),
            true,
            out.data_mut(),
            T::zero(),
        );
        if let Some(b) = &self.bias {
            for row in out.data_mut().chunks_mut(self.d_out) {
                row.iter_mut().zip(b.value.data()).for_each(|(v, &bv)| *v += bv);
            }
        }
        tape.probe(&self.name, ProbeKind::SynapticInput, x);
        tape.push_with(self.id, &self.name, || Cache::Input(x.clone()));
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let x = expect_input(tape.pop(self.id, &self.name)?, &self.name)?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty") = self.d_out;
        check_upstream(up, &shape, &self.name)?;
        let rows = x.len() / self.d_in;
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            rows,
            self.d_out,
            self.d_in,
            up.data(),
            false,
            self.weight.value.data(),
            false,
            dx.data_mut(),
            T::zero(),
        );
        gemm(
            self.d_out,
            rows,
            self.d_in,
            up.data(),
            true,
            x.data(),
            false,
            self.weight.grad.data_mut(),
            T::one(),
        );
        if let Some(b) = self.bias.as_mut() {
            let bg = b.grad.data_mut();
            for row in up.data().chunks(self.d_out) {
                bg.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        f(&format!("{}.weight", self.name), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }
}

/// Which axis batch norm normalises per feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnLayout {
    /// Axis 1 of `[B, C, ...]`.
    Channels,
    /// The last axis.
    LastDim,
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    id: LayerId,
    name: String,
    pub layout: BnLayout,
    pub features: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    running: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: impl Into<String>, features: usize, layout: BnLayout) -> Self {
        Self {
            id: LayerId::fresh(),
            name: name.into(),
            layout,
            features,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Param::new(Tensor::full(&[features], T::one())),
            beta: Param::new(Tensor::zeros(&[features])),
            running: Some((Tensor::zeros(&[features]), Tensor::full(&[features], T::one()))),
        }
    }

    /// Drops the running statistics; inference then fails until they are set.
    pub fn clear_running_stats(&mut self) {
        self.running = None;
    }

    pub fn set_running_stats(&mut self, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        mean.expect_shape(&[self.features])?;
        var.expect_shape(&[self.features])?;
        self.running = Some((mean, var));
        Ok(())
    }

    pub fn running_stats(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.running.as_ref().map(|(m, v)| (m, v))
    }

    /// Per-feature `(scale, shift)` of the inference-mode map.
    pub fn inference_affine(&self) -> Result<(Vec<T>, Vec<T>)> {
        let (rm, rv) = self
            .running
            .as_ref()
            .ok_or_else(|| Error::UninitializedBatchNorm(self.name.clone()))?;
        let eps = T::lit(self.eps);
        let scale: Vec<T> = (0..self.features)
            .map(|c| self.gamma.value.data()[c] / (rv.data()[c] + eps).sqrt())
            .collect();
        let shift = (0..self.features)
            .map(|c| self.beta.value.data()[c] - rm.data()[c] * scale[c])
            .collect();
        Ok((scale, shift))
    }

    /// `(outer, inner)` such that element `(o, c, i)` sits at `(o·C + c)·inner + i`.
    fn view(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let c = self.features;
        let ok = match self.layout {
            BnLayout::Channels => shape.len() >= 2 && shape[1] == c,
            BnLayout::LastDim => shape.last() == Some(&c),
        };
        if !ok {
            return Err(Error::Shape(format!(
                "{}: input {shape:?} does not carry {c} features",
                self.name
            )));
        }
        Ok(match self.layout {
            BnLayout::Channels => (shape[0], shape[2..].iter().product()),
            BnLayout::LastDim => (shape.iter().product::<usize>() / c, 1),
        })
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (outer, inner) = self.view(x.shape())?;
        let c = self.features;
        let count = outer * inner;
        let xd = x.data();
        let (mean, var): (Vec<T>, Vec<T>) = if mode.train {
            if count == 0 {
                return Err(Error::Shape(format!("{}: empty batch", self.name)));
            }
            let n = T::lit(count as f64);
            (0..c)
                .map(|ch| {
                    let vals = (0..outer).flat_map(|o| xd[(o * c + ch) * inner..][..inner].iter().copied());
                    let m = vals.clone().sum::<T>() / n;
                    let v = vals.map(|v| (v - m) * (v - m)).sum::<T>() / n;
                    (m, v)
                })
                .unzip()
        } else {
            let (rm, rv) = self
                .running
                .as_ref()
                .ok_or_else(|| Error::UninitializedBatchNorm(self.name.clone()))?;
            (rm.data().to_vec(), rv.data().to_vec())
        };
        let eps = T::lit(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        {
            let (gm, bt) = (self.gamma.value.data(), self.beta.value.data());
            let xh = x_hat.data_mut();
            let yd = y.data_mut();
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    for i in base..base + inner {
                        let h = (xd[i] - mean[ch]) * inv_std[ch];
                        xh[i] = h;
                        yd[i] = gm[ch] * h + bt[ch];
                    }
                }
            }
        }
        tape.push_with(self.id, &self.name, || Cache::BatchNorm {
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
            train: mode.train,
        });
        Ok(y)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let Cache::BatchNorm {
            x_hat,
            inv_std,
            batch_mean,
            batch_var,
            count,
            train,
        } = tape.pop(self.id, &self.name)?
        else {
            return Err(Error::TapeMismatch {
                expected: format!("{} batch-norm cache", self.name),
                found: "different cache kind".into(),
            });
        };
        check_upstream(up, x_hat.shape(), &self.name)?;
        let (outer, inner) = self.view(x_hat.shape())?;
        let c = self.features;
        let (xh, g) = (x_hat.data(), up.data());
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * xh[i];
                }
            }
        }
        let gamma = self.gamma.value.data().to_vec();
        let mut dx = Tensor::zeros(x_hat.shape());
        let n = T::lit(count as f64);
        let dd = dx.data_mut();
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                let k = gamma[ch] * inv_std[ch];
                for i in base..base + inner {
                    dd[i] = if train {
                        k * (g[i] - sum_g[ch] / n - xh[i] * sum_gx[ch] / n)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += sum_gx[ch];
            self.beta.grad.data_mut()[ch] += sum_g[ch];
        }
        if train {
            if let Some((rm, rv)) = self.running.as_mut() {
                let m = T::lit(self.momentum);
                let unbias = if count > 1 {
                    T::lit(count as f64 / (count as f64 - 1.0))
                } else {
                    T::one()
                };
                for ch in 0..c {
                    let a = &mut rm.data_mut()[ch];
                    *a = (T::one() - m) * *a + m * batch_mean[ch];
                    let v = &mut rv.data_mut()[ch];
                    *v = (T::one() - m) * *v + m * batch_var[ch] * unbias;
                }
            }
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        f(&format!("{}.gamma", self.name), &self.gamma);
        f(&format!("{}.beta", self.name), &self.beta);
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        f(&format!("{}.gamma", self.name), &mut self.gamma);
        f(&format!("{}.beta", self.name), &mut self.beta);
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        if let Some((m, v)) = &self.running {
            f(&format!("{}.running_mean", self.name), m);
            f(&format!("{}.running_var", self.name), v);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        if let Some((m, v)) = &mut self.running {
            f(&format!("{}.running_mean", self.name), m);
            f(&format!("{}.running_var", self.name), v);
        }
    }
}

/// Fire activation: Heaviside forward, sigmoid surrogate backward.
#[derive(Clone, Debug)]
pub struct Spike {
    id: LayerId,
    name: String,
    pub cfg: NeuronConfig,
}

impl Spike {
    pub fn new(name: impl Into<String>, cfg: NeuronConfig) -> Self {
        Self {
            id: LayerId::fresh(),
            name: name.into(),
            cfg,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl<T: Scalar> Layer<T> for Spike {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, v: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let out = match mode.spikes {
            SpikeMode::Heaviside => fire_real(v, &self.cfg)?,
            SpikeMode::Smooth => {
                if !v.all_finite() {
                    return Err(Error::NonFinite("membrane potential".into()));
                }
                smooth_fire(v, &self.cfg)
            }
        };
        tape.probe(&self.name, ProbeKind::Fire, &out);
        tape.push_with(self.id, &self.name, || Cache::Spike(v.clone()));
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        match tape.pop(self.id, &self.name)? {
            Cache::Spike(v) => surrogate_backward(&v, up, &self.cfg),
            _ => Err(Error::TapeMismatch {
                expected: format!("{} potential cache", self.name),
                found: "different cache kind".into(),
            }),
        }
    }
}

fn pool_geom(shape: &[usize], k: usize, name: &str) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let &[b, c, h, w] = shape else {
        return Err(Error::Shape(format!("{name}: expected a 4-D input, got {shape:?}")));
    };
    if k == 0 || h < k || w < k {
        return Err(Error::Shape(format!("{name}: {h}×{w} input too small for window {k}")));
    }
    Ok((b, c, h, w, h / k, w / k))
}

/// Non-overlapping `k×k` mean pooling; trailing rows/columns are dropped.
#[derive(Clone, Debug)]
pub struct AvgPool2d {
    id: LayerId,
    name: String,
    pub k: usize,
}

impl AvgPool2d {
    pub fn new(name: impl Into<String>, k: usize) -> Self {
        Self {
            id: LayerId::fresh(),
            name: name.into(),
            k,
        }
    }
}

impl<T: Scalar> Layer<T> for AvgPool2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, _mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (b, c, h, w, ho, wo) = pool_geom(x.shape(), self.k, &self.name)?;
        let k = self.k;
        let norm = T::lit((k * k) as f64);
        let mut out = Tensor::zeros(&[b, c, ho, wo]);
        let xd = x.data();
        for (p, o) in out.data_mut().chunks_mut(ho * wo).enumerate() {
            let xp = &xd[p * h * w..][..h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = T::zero();
                    for i in 0..k {
                        for j in 0..k {
                            acc += xp[(oh * k + i) * w + ow * k + j];
                        }
                    }
                    o[oh * wo + ow] = acc / norm;
                }
            }
        }
        tape.push_with(self.id, &self.name, || Cache::Shape(x.shape().to_vec()));
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let Cache::Shape(shape) = tape.pop(self.id, &self.name)? else {
            return Err(Error::TapeMismatch {
                expected: format!("{} shape cache", self.name),
                found: "different cache kind".into(),
            });
        };
        let (b, c, h, w, ho, wo) = pool_geom(&shape, self.k, &self.name)?;
        check_upstream(up, &[b, c, ho, wo], &self.name)?;
        let k = self.k;
        let norm = T::lit((k * k) as f64);
        let mut dx = Tensor::zeros(&shape);
        for (p, dp) in dx.data_mut().chunks_mut(h * w).enumerate() {
            let gp = &up.data()[p * ho * wo..][..ho * wo];
            for oh in 0..ho {
                for ow in 0..wo {
                    let gv = gp[oh * wo + ow] / norm;
                    for i in 0..k {
                        for j in 0..k {
                            dp[(oh * k + i) * w + ow * k + j] = gv;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Non-overlapping `k×k` max pooling; the first maximum wins ties.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    id: LayerId,
    name: String,
    pub k: usize,
}

impl MaxPool2d {
    pub fn new(name: impl Into<String>, k: usize) -> Self {
        Self {
            id: LayerId::fresh(),
            name: name.into(),
            k,
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, _mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (b, c, h, w, ho, wo) = pool_geom(x.shape(), self.k, &self.name)?;
        let k = self.k;
        let mut out = Tensor::zeros(&[b, c, ho, wo]);
        let mut argmax = vec![0usize; b * c * ho * wo];
        let xd = x.data();
        for (p, o) in out.data_mut().chunks_mut(ho * wo).enumerate() {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = p * h * w + oh * k * w + ow * k;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = p * h * w + (oh * k + i) * w + ow * k + j;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    o[oh * wo + ow] = xd[best];
                    argmax[p * ho * wo + oh * wo + ow] = best;
                }
            }
        }
        tape.push_with(self.id, &self.name, || Cache::MaxPool {
            argmax,
            in_shape: x.shape().to_vec(),
        });
        Ok(out)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let Cache::MaxPool { argmax, in_shape } = tape.pop(self.id, &self.name)? else {
            return Err(Error::TapeMismatch {
                expected: format!("{} argmax cache", self.name),
                found: "different cache kind".into(),
            });
        };
        if up.len() != argmax.len() {
            return Err(Error::Shape(format!("{}: upstream size mismatch", self.name)));
        }
        let mut dx = Tensor::zeros(&in_shape);
        let dd = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(up.data()) {
            dd[i] += g;
        }
        Ok(dx)
    }
}

/// Layers applied in order.
pub struct Sequential<T> {
    name: String,
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(name: impl Into<String>, layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Self {
            name: name.into(),
            layers,
        }
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h, mode, tape)?;
        }
        Ok(h)
    }

    fn backward(&mut self, up: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let mut g = up.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g, tape)?;
        }
        Ok(g)
    }

    fn visit_params(&self, f: &mut ParamVisitor<'_, T>) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, T>) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }

    fn visit_buffers(&self, f: &mut BufferVisitor<'_, T>) {
        self.layers.iter().for_each(|l| l.visit_buffers(f));
    }

    fn visit_buffers_mut(&mut self, f: &mut BufferVisitorMut<'_, T>) {
        self.layers.iter_mut().for_each(|l| l.visit_buffers_mut(f));
    }
}
