//! Analytical inference energy for the spiking network and for a dense
//! ANN counterpart, from measured activity.
//!
//! Access-count model per synaptic layer, all operands 32-bit:
//!
//! * synaptic events `ev`: for spike-count inputs, `Σ x_i · fanout(i)`;
//!   for real-valued inputs every connection is a MAC, so `ev = N_syn`.
//! * `E_mem = ev·(E_w + E_state_r + E_state_w) + s_in·E_in + out·E_out
//!   + n_bias·(E_w + E_state_w)`, where `out` is the number of output
//!   spikes for fire layers and the number of output values otherwise, and
//!   biases are loaded once per output neuron as the initial state.
//! * `E_ops = ev·(E_AC or E_MAC) + θ·E_ADD`, the second term being the
//!   post-spike reset.
//! * `E_addr = s_in·E_in` for spiking inputs: one address read per input
//!   spike event.

use crate::arch::{SynapseInfo, SynapseKind};
use crate::error::{Error, Result};
use crate::snn::{Layer, Mode, Probe, ProbeKind, Tape};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const BYTES_PER_VALUE: u64 = 4;
pub const PJ_PER_J: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TechConstants {
    pub e_add_pj: f64,
    pub e_mul_pj: f64,
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
    /// `(bytes, pJ per access)`, strictly increasing in both.
    pub sram_anchors: Vec<(u64, f64)>,
}

impl Default for TechConstants {
    fn default() -> Self {
        Self {
            e_add_pj: 0.1,
            e_mul_pj: 3.1,
            e_mac_pj: 3.2,
            e_ac_pj: 0.1,
            sram_anchors: vec![(8 * 1024, 10.0), (32 * 1024, 20.0), (1024 * 1024, 100.0)],
        }
    }
}

impl TechConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if [self.e_add_pj, self.e_mul_pj, self.e_mac_pj, self.e_ac_pj]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("energy constants must be finite and non-negative");
        }
        if (self.e_mac_pj - (self.e_add_pj + self.e_mul_pj)).abs() > 1e-9 {
            return bad("energy.e_mac_pj must equal e_add_pj + e_mul_pj");
        }
        if self.sram_anchors.len() < 2 {
            return bad("energy.sram_anchors needs at least two points");
        }
        if self
            .sram_anchors
            .windows(2)
            .any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1)
        {
            return bad("energy.sram_anchors must be strictly increasing in size and energy");
        }
        Ok(())
    }
}

/// Per-access SRAM energy in pJ for a memory of `size_bytes`, piecewise
/// linear through the anchors, extrapolated along the end segments and
/// clamped at zero.
pub fn sram_energy(size_bytes: u64, tech: &TechConstants) -> f64 {
    let a = &tech.sram_anchors;
    let s = size_bytes as f64;
    let seg = a
        .windows(2)
        .position(|w| s <= w[1].0 as f64)
        .unwrap_or(a.len() - 2);
    let ((x0, y0), (x1, y1)) = (a[seg], a[seg + 1]);
    if size_bytes == x0 {
        return y0;
    }
    if size_bytes == x1 {
        return y1;
    }
    let (x0, x1) = (x0 as f64, x1 as f64);
    (y0 + (s - x0) * (y1 - y0) / (x1 - x0)).max(0.0)
}

/// Per-access energies (pJ) of the memories one layer touches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessCosts {
    pub input_pj: f64,
    pub weight_pj: f64,
    pub state_pj: f64,
    pub output_pj: f64,
}

impl AccessCosts {
    pub fn uniform(pj: f64) -> Self {
        Self {
            input_pj: pj,
            weight_pj: pj,
            state_pj: pj,
            output_pj: pj,
        }
    }

    /// Memories sized at 32 bits per input, weight, neuron state and output.
    pub fn from_sizes(n_in: u64, weights: u64, n_out: u64, tech: &TechConstants) -> Self {
        let e = |n: u64| sram_energy(n.max(1) * BYTES_PER_VALUE, tech);
        Self {
            input_pj: e(n_in),
            weight_pj: e(weights),
            state_pj: e(n_out),
            output_pj: e(n_out),
        }
    }
}

/// Energy (J) of one IF+inst layer: every synaptic event reads a weight,
/// reads and writes a state and costs one accumulate.
pub fn energy_if_inst(n_syn: f64, spikes_per_syn: f64, costs: &AccessCosts, tech: &TechConstants) -> f64 {
    n_syn * spikes_per_syn * (costs.weight_pj + 2.0 * costs.state_pj + tech.e_ac_pj) / PJ_PER_J
}

/// Measured activity of one synaptic layer, averaged per input sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub spiking_input: bool,
    pub weights: u64,
    pub bias: bool,
    pub n_in: u64,
    pub n_out: u64,
    /// Connections, i.e. MACs of a dense pass.
    pub n_syn: u64,
    pub synaptic_events: f64,
    /// Sum of input values for spiking inputs (spike-equivalents).
    pub input_spikes: f64,
    /// θ: spikes emitted by the fire layer this synapse drives.
    pub output_spikes: f64,
    pub fires: bool,
    /// Fraction of zero-valued inputs.
    pub input_zero_fraction: f64,
}

impl LayerStats {
    pub fn spikes_per_syn(&self) -> f64 {
        if self.n_syn == 0 {
            0.0
        } else {
            self.synaptic_events / self.n_syn as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikeStats {
    pub samples: usize,
    pub layers: Vec<LayerStats>,
    /// θ for every fire layer, in order of first appearance.
    pub fire_totals: Vec<(String, f64)>,
}

impl SpikeStats {
    pub fn layer(&self, name: &str) -> Option<&LayerStats> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn total_spikes(&self) -> f64 {
        self.fire_totals.iter().map(|f| f.1).sum()
    }
}

/// How many `(output, tap)` pairs read input index `i` along one axis.
fn coverage(len_in: usize, len_out: usize, k: usize, stride: usize, pad: usize) -> Vec<u64> {
    let mut cov = vec![0u64; len_in];
    for o in 0..len_out {
        for t in 0..k {
            let i = (o * stride + t) as isize - pad as isize;
            if i >= 0 && (i as usize) < len_in {
                cov[i as usize] += 1;
            }
        }
    }
    cov
}

fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Fan-out of every element of one input sample and the output size.
fn fanout(kind: &SynapseKind, sample_shape: &[usize]) -> Result<(Vec<u64>, u64)> {
    let shape_err = || Error::Shape(format!("synapse {kind:?} cannot read input of shape {sample_shape:?}"));
    let (c_in, per_channel_out, k, stride, pad) = match *kind {
        SynapseKind::Conv { c_in, c_out, k, stride, pad } => (c_in, c_out, k, stride, pad),
        SynapseKind::Depthwise { channels, k, stride, pad } => (channels, 1, k, stride, pad),
        SynapseKind::Dense { d_in, d_out } => {
            if sample_shape.last() != Some(&d_in) {
                return Err(shape_err());
            }
            let n: usize = sample_shape.iter().product();
            return Ok((vec![d_out as u64; n], (n / d_in * d_out) as u64));
        }
    };
    let &[c, h, w] = sample_shape else {
        return Err(shape_err());
    };
    if c != c_in || h + 2 * pad < k || w + 2 * pad < k {
        return Err(shape_err());
    }
    let (ho, wo) = (out_len(h, k, stride, pad), out_len(w, k, stride, pad));
    let (ch, cw) = (coverage(h, ho, k, stride, pad), coverage(w, wo, k, stride, pad));
    let mut f = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for &a in &ch {
            for &b in &cw {
                f.push(per_channel_out as u64 * a * b);
            }
        }
    }
    let c_out = if let SynapseKind::Depthwise { channels, .. } = *kind { channels } else { per_channel_out };
    Ok((f, (c_out * ho * wo) as u64))
}

/// Runs inference over `inputs` and accumulates per-synapse activity,
/// averaged per sample. Values above one at spiking inputs (ADD junction
/// outputs, raw event counts) count as that many spike-equivalents.
pub fn monitor_spikes<T: Scalar, L: Layer<T> + ?Sized>(
    model: &L,
    synapses: &[SynapseInfo],
    inputs: &[Tensor<T>],
) -> Result<SpikeStats> {
    let mut samples = 0usize;
    let mut acc: Vec<Option<LayerStats>> = vec![None; synapses.len()];
    let mut fires: Vec<(String, f64)> = Vec::new();
    let index: HashMap<&str, usize> = synapses.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    for x in inputs {
        let b = *x.shape().first().ok_or_else(|| Error::Shape("empty input shape".into()))?;
        samples += b;
        let mut tape = Tape::inference().with_probes();
        model.forward(x, Mode::INFERENCE, &mut tape)?;
        let probes: Vec<Probe<T>> = tape.take_probes();
        for p in &probes {
            match p.kind {
                ProbeKind::Fire => {
                    let total: f64 = p.tensor.data().iter().map(|v| v.to_f64().unwrap_or(0.0)).sum();
                    match fires.iter_mut().find(|f| f.0 == p.name) {
                        Some(f) => f.1 += total,
                        None => fires.push((p.name.clone(), total)),
                    }
                }
                ProbeKind::SynapticInput => {
                    let Some(&i) = index.get(p.name.as_str()) else { continue };
                    let syn = &synapses[i];
                    let shape = &p.tensor.shape()[1..];
                    let (fan, n_out) = fanout(&syn.kind, shape)?;
                    let n_in = fan.len();
                    let n_syn: u64 = fan.iter().sum();
                    let entry = acc[i].get_or_insert_with(|| LayerStats {
                        name: syn.name.clone(),
                        spiking_input: syn.spiking_input,
                        weights: syn.weights as u64,
                        bias: syn.bias,
                        n_in: n_in as u64,
                        n_out,
                        n_syn,
                        synaptic_events: 0.0,
                        input_spikes: 0.0,
                        output_spikes: 0.0,
                        fires: syn.fire.is_some(),
                        input_zero_fraction: 0.0,
                    });
                    let mut zeros = 0usize;
                    for sample in p.tensor.data().chunks(n_in.max(1)) {
                        for (v, f) in sample.iter().zip(&fan) {
                            let v = v.to_f64().unwrap_or(0.0);
                            if v == 0.0 {
                                zeros += 1;
                            }
                            if syn.spiking_input {
                                entry.synaptic_events += v * *f as f64;
                                entry.input_spikes += v;
                            }
                        }
                        if !syn.spiking_input {
                            entry.synaptic_events += n_syn as f64;
                        }
                    }
                    entry.input_zero_fraction += zeros as f64 / n_in.max(1) as f64;
                }
                ProbeKind::Junction => {}
            }
        }
    }
    let n = samples.max(1) as f64;
    let mut layers = Vec::with_capacity(synapses.len());
    for (syn, a) in synapses.iter().zip(acc) {
        let mut l = a.ok_or_else(|| Error::MissingLayerStats(syn.name.clone()))?;
        l.synaptic_events /= n;
        l.input_spikes /= n;
        l.input_zero_fraction /= n;
        if let Some(f) = &syn.fire {
            l.output_spikes = fires.iter().find(|x| &x.0 == f).map(|x| x.1).unwrap_or(0.0) / n;
        }
        layers.push(l);
    }
    fires.iter_mut().for_each(|f| f.1 /= n);
    Ok(SpikeStats {
        samples,
        layers,
        fire_totals: fires,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub name: String,
    #[serde(rename = "e_mem_pJ")]
    pub e_mem_pj: f64,
    #[serde(rename = "e_ops_pJ")]
    pub e_ops_pj: f64,
    #[serde(rename = "e_addr_pJ")]
    pub e_addr_pj: f64,
    /// Energy of the same activity under the IF+inst single-term model.
    #[serde(rename = "e_if_inst_pJ")]
    pub e_if_inst_pj: f64,
    pub costs: AccessCosts,
}

impl LayerEnergy {
    pub fn total_pj(&self) -> f64 {
        self.e_mem_pj + self.e_ops_pj + self.e_addr_pj
    }
}

/// Per-layer split of one layer's energy given its access costs.
pub fn layer_energy(l: &LayerStats, costs: &AccessCosts, tech: &TechConstants) -> LayerEnergy {
    let ev = l.synaptic_events;
    let s_in = if l.spiking_input { l.input_spikes } else { l.n_in as f64 };
    let theta = l.output_spikes;
    let out = if l.fires { theta } else { l.n_out as f64 };
    let n_bias = if l.bias { l.n_out as f64 } else { 0.0 };
    let e_syn = if l.spiking_input { tech.e_ac_pj } else { tech.e_mac_pj };
    let e_mem = ev * (costs.weight_pj + 2.0 * costs.state_pj)
        + s_in * costs.input_pj
        + out * costs.output_pj
        + n_bias * (costs.weight_pj + costs.state_pj);
    let e_ops = ev * e_syn + theta * tech.e_add_pj;
    let e_addr = if l.spiking_input { l.input_spikes * costs.input_pj } else { 0.0 };
    LayerEnergy {
        name: l.name.clone(),
        e_mem_pj: e_mem,
        e_ops_pj: e_ops,
        e_addr_pj: e_addr,
        e_if_inst_pj: energy_if_inst(l.n_syn as f64, l.spikes_per_syn(), costs, tech) * PJ_PER_J,
        costs: *costs,
    }
}

/// Dense ANN counterpart of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnLayerSpec {
    pub name: String,
    pub n_in: u64,
    pub n_out: u64,
    pub n_syn: u64,
    pub weights: u64,
    /// Fraction of zero input activations.
    pub gamma: f64,
}

impl AnnLayerSpec {
    pub fn from_stats(l: &LayerStats, gamma: Option<f64>) -> Self {
        Self {
            name: l.name.clone(),
            n_in: l.n_in,
            n_out: l.n_out,
            n_syn: l.n_syn,
            weights: l.weights,
            gamma: gamma.unwrap_or(l.input_zero_fraction),
        }
    }
}

/// ANN energy in pJ of one layer: `(E_ops, E_mem)`. Zero inputs skip
/// their MACs and weight reads; inputs and outputs are read and written
/// once each.
pub fn ann_layer_energy(spec: &AnnLayerSpec, costs: &AccessCosts, tech: &TechConstants) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&spec.gamma) {
        return Err(Error::InvalidConfig(format!("{}: gamma {} outside [0, 1]", spec.name, spec.gamma)));
    }
    let active = spec.n_syn as f64 * (1.0 - spec.gamma);
    let ops = active * tech.e_mac_pj;
    let mem = spec.n_in as f64 * costs.input_pj + active * costs.weight_pj + spec.n_out as f64 * costs.output_pj;
    Ok((ops, mem))
}

/// Total ANN energy in joules with memories sized from layer dimensions.
pub fn ann_energy(specs: &[AnnLayerSpec], tech: &TechConstants) -> Result<f64> {
    let mut total = 0.0;
    for s in specs {
        let costs = AccessCosts::from_sizes(s.n_in, s.weights, s.n_out, tech);
        let (ops, mem) = ann_layer_energy(s, &costs, tech)?;
        total += ops + mem;
    }
    Ok(total / PJ_PER_J)
}

/// Spikes per synapse at which the IF+inst energy of a layer equals its
/// dense ANN counterpart; below it the spiking layer is cheaper.
pub fn break_even_rate(l: &LayerStats, gamma: f64, tech: &TechConstants) -> Result<f64> {
    let costs = AccessCosts::from_sizes(l.n_in, l.weights, l.n_out, tech);
    let (ops, mem) = ann_layer_energy(&AnnLayerSpec::from_stats(l, Some(gamma)), &costs, tech)?;
    let per_event = l.n_syn as f64 * (costs.weight_pj + 2.0 * costs.state_pj + tech.e_ac_pj);
    Ok(if per_event == 0.0 { f64::INFINITY } else { (ops + mem) / per_event })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub tech: TechConstants,
    pub samples: usize,
    pub layers: Vec<LayerEnergy>,
    #[serde(rename = "e_mem_pJ")]
    pub e_mem_pj: f64,
    #[serde(rename = "e_ops_pJ")]
    pub e_ops_pj: f64,
    #[serde(rename = "e_addr_pJ")]
    pub e_addr_pj: f64,
    pub e_mem_mj: f64,
    pub e_ops_mj: f64,
    pub e_addr_mj: f64,
    pub total_mj: f64,
    pub ann_total_mj: Option<f64>,
    /// ANN energy over spiking energy; above one means the SNN is cheaper.
    pub ann_over_snn: Option<f64>,
}

impl EnergyReport {
    pub fn total_pj(&self) -> f64 {
        self.e_mem_pj + self.e_ops_pj + self.e_addr_pj
    }
}

/// Three-way decomposition over every synapse of the model.
pub fn energy_decompose(synapses: &[SynapseInfo], stats: &SpikeStats, tech: &TechConstants) -> Result<EnergyReport> {
    tech.validate()?;
    let mut layers = Vec::with_capacity(synapses.len());
    let mut ann = Vec::with_capacity(synapses.len());
    for s in synapses {
        let l = stats.layer(&s.name).ok_or_else(|| Error::MissingLayerStats(s.name.clone()))?;
        let costs = AccessCosts::from_sizes(l.n_in, l.weights, l.n_out, tech);
        layers.push(layer_energy(l, &costs, tech));
        ann.push(AnnLayerSpec::from_stats(l, None));
    }
    let sum = |f: fn(&LayerEnergy) -> f64| layers.iter().map(f).sum::<f64>();
    let (e_mem, e_ops, e_addr) = (sum(|l| l.e_mem_pj), sum(|l| l.e_ops_pj), sum(|l| l.e_addr_pj));
    let ann_j = ann_energy(&ann, tech)?;
    let mj = |pj: f64| pj / PJ_PER_J * 1e3;
    let total = e_mem + e_ops + e_addr;
    Ok(EnergyReport {
        tech: tech.clone(),
        samples: stats.samples,
        layers,
        e_mem_pj: e_mem,
        e_ops_pj: e_ops,
        e_addr_pj: e_addr,
        e_mem_mj: mj(e_mem),
        e_ops_mj: mj(e_ops),
        e_addr_mj: mj(e_addr),
        total_mj: mj(total),
        ann_total_mj: Some(ann_j * 1e3),
        ann_over_snn: (total > 0.0).then(|| ann_j * PJ_PER_J / total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ModelConfig, SpikeVpr};
    use crate::snn::{Dense, NeuronConfig, Sequential, Spike};
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn sram_anchors_and_interpolation() {
        let t = TechConstants::default();
        assert_eq!(sram_energy(8 * 1024, &t), 10.0);
        assert_eq!(sram_energy(32 * 1024, &t), 20.0);
        assert_eq!(sram_energy(1024 * 1024, &t), 100.0);
        assert_eq!(sram_energy(20 * 1024, &t), 15.0);
        assert!((sram_energy(4, &t) - (10.0 - 8188.0 * 10.0 / 24576.0)).abs() < 1e-12);
        let mut last = 0.0;
        for kib in 1..2048 {
            let e = sram_energy(kib * 1024, &t);
            assert!(e >= last);
            last = e;
        }
        assert!(sram_energy(2 * 1024 * 1024, &t) > 100.0);
    }

    #[test]
    fn tech_validation() {
        let mut t = TechConstants::default();
        t.validate().unwrap();
        t.e_mac_pj = 3.0;
        assert!(t.validate().is_err());
        let mut t = TechConstants::default();
        t.sram_anchors.swap(0, 1);
        assert!(t.validate().is_err());
    }

    #[test]
    fn if_inst_scalar_cases() {
        let t = TechConstants::default();
        let c = AccessCosts::uniform(10.0);
        assert_eq!(energy_if_inst(100.0, 0.0, &c, &t), 0.0);
        let e = energy_if_inst(100.0, 1.0, &c, &t);
        assert!((e - 3.01e-9).abs() < 1e-21);
        assert!((energy_if_inst(100.0, 2.0, &c, &t) - 2.0 * e).abs() < 1e-21);
    }

    #[test]
    fn ann_dense_ten_by_ten() {
        let t = TechConstants::default();
        let spec = AnnLayerSpec {
            name: "fc".into(),
            n_in: 10,
            n_out: 10,
            n_syn: 100,
            weights: 100,
            gamma: 0.0,
        };
        let (ops, mem) = ann_layer_energy(&spec, &AccessCosts::uniform(10.0), &t).unwrap();
        assert!((ops - 320.0).abs() < 1e-9);
        assert!((mem - (100.0 + 1000.0 + 100.0)).abs() < 1e-9);
        let sparse = AnnLayerSpec { gamma: 1.0, ..spec };
        assert_eq!(ann_layer_energy(&sparse, &AccessCosts::uniform(10.0), &t).unwrap().0, 0.0);
    }

    fn two_neuron_net(bias: f32) -> (Sequential<f32>, Vec<SynapseInfo>) {
        let w = Tensor::from_vec(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = (bias != 0.0).then(|| Tensor::full(&[2], bias));
        let has_bias = b.is_some();
        let dense = Dense::from_weights("fc", w, b).unwrap();
        let net = Sequential::new(
            "net",
            vec![Box::new(dense), Box::new(Spike::new("fc.fire", NeuronConfig::default()))],
        );
        let syn = vec![SynapseInfo {
            name: "fc".into(),
            kind: SynapseKind::Dense { d_in: 3, d_out: 2 },
            weights: 6,
            bias: has_bias,
            spiking_input: true,
            fire: Some("fc.fire".into()),
        }];
        (net, syn)
    }

    #[test]
    fn forced_pair_fires_twice_and_silent_net_costs_nothing() {
        let (net, syn) = two_neuron_net(0.0);
        let x = Tensor::from_vec(vec![1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        let stats = monitor_spikes(&net, &syn, &[x]).unwrap();
        assert_eq!(stats.total_spikes(), 2.0);
        assert_eq!(stats.layers[0].output_spikes, 2.0);
        assert_eq!(stats.layers[0].synaptic_events, 4.0);

        let zero = Tensor::zeros(&[1, 3]);
        let stats = monitor_spikes(&net, &syn, &[zero]).unwrap();
        assert_eq!(stats.total_spikes(), 0.0);
        let r = energy_decompose(&syn, &stats, &TechConstants::default()).unwrap();
        assert_eq!(r.e_ops_pj, 0.0);
        assert_eq!(r.e_addr_pj, 0.0);
        assert_eq!(r.e_mem_pj, 0.0);
    }

    #[test]
    fn hand_audited_dense_layer() {
        // fc: 3 -> 2 with bias, input spikes [1, 1, 0]; both neurons fire
        let (net, syn) = two_neuron_net(0.5);
        let x = Tensor::from_vec(vec![1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        let stats = monitor_spikes(&net, &syn, &[x]).unwrap();
        let t = TechConstants::default();
        let c = AccessCosts::uniform(10.0);
        let e = layer_energy(&stats.layers[0], &c, &t);
        // ev = 2 inputs x fanout 2 = 4; s_in = 2; theta = 2; bias loads = 2
        // mem = 4*30 + 2*10 + 2*10 + 2*20 = 200; ops = 4*0.1 + 2*0.1; addr = 2*10
        assert!((e.e_mem_pj - 200.0).abs() < 1e-9);
        assert!((e.e_ops_pj - 0.6).abs() < 1e-9);
        assert!((e.e_addr_pj - 20.0).abs() < 1e-9);
        // N_syn = 6, spikes per synapse 4/6
        assert!((e.e_if_inst_pj - 4.0 * 30.1).abs() < 1e-9);
    }

    #[test]
    fn conv_fanout_matches_brute_force() {
        let kind = SynapseKind::Conv { c_in: 2, c_out: 3, k: 3, stride: 2, pad: 1 };
        let (fan, n_out) = fanout(&kind, &[2, 5, 6]).unwrap();
        let (ho, wo) = (3, 3);
        assert_eq!(n_out, 3 * ho * wo);
        for y in 0..5i64 {
            for x in 0..6i64 {
                let mut count = 0;
                for oy in 0..ho as i64 {
                    for ox in 0..wo as i64 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                if oy * 2 - 1 + ky == y && ox * 2 - 1 + kx == x {
                                    count += 3;
                                }
                            }
                        }
                    }
                }
                assert_eq!(fan[(y * 6 + x) as usize], count);
                assert_eq!(fan[30 + (y * 6 + x) as usize], count);
            }
        }
    }

    #[test]
    fn model_stats_match_recount_and_are_linear() {
        let cfg = ModelConfig::desk(16, 16);
        let model = SpikeVpr::<f32>::new(&cfg, 3).unwrap();
        let syn = model.synapses();
        let mut rng = rng_from(4);
        let x = Tensor::from_vec(
            vec![2, 2, 16, 16],
            (0..2 * 2 * 256).map(|_| if rng.random_bool(0.2) { rng.random_range(1..4) as f32 } else { 0.0 }).collect(),
        )
        .unwrap();
        let stats = monitor_spikes(&model, &syn, std::slice::from_ref(&x)).unwrap();
        assert_eq!(stats.layers.len(), syn.len());
        // independent recount of θ from dumped fire outputs
        let (_, probes) = model.infer_probed(&x).unwrap();
        for (name, theta) in &stats.fire_totals {
            let recount: f64 = probes
                .iter()
                .filter(|p| p.kind == ProbeKind::Fire && &p.name == name)
                .flat_map(|p| p.tensor.data().iter().map(|&v| f64::from(v)))
                .sum();
            assert_eq!(*theta, recount / 2.0);
        }
        let t = TechConstants::default();
        let r = energy_decompose(&syn, &stats, &t).unwrap();
        assert_eq!(r.total_pj(), r.e_mem_pj + r.e_ops_pj + r.e_addr_pj);
        assert!(r.layers.iter().all(|l| l.e_mem_pj >= 0.0 && l.e_ops_pj >= 0.0 && l.e_addr_pj >= 0.0));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"e_ac_pj\":0.1") && json.contains("\"e_mac_pj\":3.2"));

        // IF+inst energy is linear in activity
        let mut doubled = stats.layers[0].clone();
        doubled.synaptic_events *= 2.0;
        let c = AccessCosts::from_sizes(doubled.n_in, doubled.weights, doubled.n_out, &t);
        let a = layer_energy(&stats.layers[0], &c, &t).e_if_inst_pj;
        let b = layer_energy(&doubled, &c, &t).e_if_inst_pj;
        assert!((b - 2.0 * a).abs() <= 1e-9 * b.abs());

        let missing = SpikeStats::default();
        assert!(matches!(energy_decompose(&syn, &missing, &t), Err(Error::MissingLayerStats(_))));
    }

    #[test]
    fn break_even_separates_regimes() {
        let t = TechConstants::default();
        let l = LayerStats {
            name: "c".into(),
            spiking_input: true,
            weights: 9 * 32 * 32,
            bias: false,
            n_in: 32 * 16 * 16,
            n_out: 32 * 16 * 16,
            n_syn: 9 * 32 * 32 * 256,
            synaptic_events: 0.0,
            input_spikes: 0.0,
            output_spikes: 0.0,
            fires: true,
            input_zero_fraction: 0.5,
        };
        let r = break_even_rate(&l, 0.5, &t).unwrap();
        let costs = AccessCosts::from_sizes(l.n_in, l.weights, l.n_out, &t);
        let ann = {
            let (o, m) = ann_layer_energy(&AnnLayerSpec::from_stats(&l, Some(0.5)), &costs, &t).unwrap();
            o + m
        };
        let snn = |rate: f64| energy_if_inst(l.n_syn as f64, rate, &costs, &t) * PJ_PER_J;
        assert!(snn(0.5 * r) < ann && snn(2.0 * r) > ann);
    }
}
