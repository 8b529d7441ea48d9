//! Synaptic operation counting, spike-rate probes and the MAC/AC energy model.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use sdff_autograd::{no_grad, Tensor};

use crate::error::{Error, Result};
use crate::events::{stack_batch, SpikeInput};
use crate::net::SdformerFlow;
use crate::nn::Ctx;

/// Joules per multiply-accumulate (45 nm, 32-bit float).
pub const E_MAC: f64 = 4.6e-12;
/// Joules per accumulate.
pub const E_AC: f64 = 0.9e-12;

/// Shape description of one counted operation. Leading batch factors
/// (`images`, `tokens`, `groups`) include every time step and sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d { kh: usize, kw: usize, c_in: usize, c_out: usize, h_out: usize, w_out: usize, images: usize },
    ConvTranspose2d { kh: usize, kw: usize, c_in: usize, c_out: usize, h_in: usize, w_in: usize, images: usize },
    Linear { n_in: usize, n_out: usize, tokens: usize },
    BatchNorm { channels: usize, elements: usize },
    /// `Q·Kᵀ` per window and head.
    AttentionScores { groups: usize, tokens: usize, head_dim: usize },
    /// `(Q·Kᵀ + PE)·V` per window and head.
    AttentionValues { groups: usize, tokens: usize, head_dim: usize },
    /// Per-token sum of `Q` over the hidden channels.
    TokenSum { tokens: usize, dim: usize },
    /// Hadamard product of the token mask with `K`.
    TokenMask { tokens: usize, dim: usize },
    Other(String),
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv",
            LayerSpec::ConvTranspose2d { .. } => "conv_transpose",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::AttentionScores { .. } => "attn_qk",
            LayerSpec::AttentionValues { .. } => "attn_av",
            LayerSpec::TokenSum { .. } => "token_sum",
            LayerSpec::TokenMask { .. } => "token_mask",
            LayerSpec::Other(_) => "other",
        }
    }
}

fn prod(v: &[usize]) -> u64 {
    v.iter().map(|&x| x as u64).product()
}

/// Dense multiply-accumulate count. Batch norm is free.
pub fn count_flops(spec: &LayerSpec) -> Result<u64> {
    Ok(match *spec {
        LayerSpec::Conv2d { kh, kw, c_in, c_out, h_out, w_out, images } => {
            prod(&[kh, kw, c_in, c_out, h_out, w_out, images])
        }
        LayerSpec::ConvTranspose2d { kh, kw, c_in, c_out, h_in, w_in, images } => {
            prod(&[kh, kw, c_in, c_out, h_in, w_in, images])
        }
        LayerSpec::Linear { n_in, n_out, tokens } => prod(&[n_in, n_out, tokens]),
        LayerSpec::BatchNorm { .. } => 0,
        LayerSpec::AttentionScores { groups, tokens, head_dim }
        | LayerSpec::AttentionValues { groups, tokens, head_dim } => prod(&[groups, tokens, tokens, head_dim]),
        LayerSpec::TokenSum { tokens, dim } | LayerSpec::TokenMask { tokens, dim } => prod(&[tokens, dim]),
        LayerSpec::Other(ref kind) => return Err(Error::Invalid(format!("unknown layer kind `{kind}`"))),
    })
}

/// Accumulated statistics for one synaptic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub name: String,
    pub spec: LayerSpec,
    /// Dense MACs per sample over all time steps.
    pub macs: u64,
    pub nonzero: u64,
    pub elements: u64,
    /// Every observed input entry was 0 or 1.
    pub binary: bool,
    pub calls: u64,
}

impl LayerTrace {
    pub fn rate(&self) -> f64 {
        if self.elements == 0 {
            0.0
        } else {
            self.nonzero as f64 / self.elements as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrace {
    pub name: String,
    pub ones: u64,
    pub elements: u64,
}

/// Hook storage filled during profiled forward passes.
#[derive(Debug, Clone, Default)]
pub struct Probe {
    layers: Vec<LayerTrace>,
    spikes: Vec<SpikeTrace>,
    layer_index: HashMap<String, usize>,
    spike_index: HashMap<String, usize>,
}

impl Probe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn layers(&self) -> &[LayerTrace] {
        &self.layers
    }

    pub fn spikes(&self) -> &[SpikeTrace] {
        &self.spikes
    }

    pub fn record(&mut self, name: &str, spec: LayerSpec, input: &Tensor, batch: usize) -> Result<()> {
        let total = count_flops(&spec)?;
        if batch == 0 || total % batch as u64 != 0 {
            return Err(Error::Invalid(format!("{name}: {total} MACs not divisible by batch {batch}")));
        }
        let macs = total / batch as u64;
        let data = input.data();
        let nonzero = data.iter().filter(|&&v| v != 0.0).count() as u64;
        let binary = data.iter().all(|&v| v == 0.0 || v == 1.0);
        let elements = data.len() as u64;
        match self.layer_index.get(name) {
            Some(&i) => {
                let t = &mut self.layers[i];
                if t.macs != macs {
                    return Err(Error::Invalid(format!(
                        "{name}: probe inputs disagree on cost ({} vs {macs})",
                        t.macs
                    )));
                }
                t.nonzero += nonzero;
                t.elements += elements;
                t.binary &= binary;
                t.calls += 1;
            }
            None => {
                self.layer_index.insert(name.to_string(), self.layers.len());
                self.layers.push(LayerTrace {
                    name: name.to_string(),
                    spec,
                    macs,
                    nonzero,
                    elements,
                    binary,
                    calls: 1,
                });
            }
        }
        Ok(())
    }

    pub fn record_spikes(&mut self, name: &str, spikes: &Tensor) {
        let data = spikes.data();
        let ones = data.iter().filter(|&&v| v != 0.0).count() as u64;
        let elements = data.len() as u64;
        match self.spike_index.get(name) {
            Some(&i) => {
                self.spikes[i].ones += ones;
                self.spikes[i].elements += elements;
            }
            None => {
                self.spike_index.insert(name.to_string(), self.spikes.len());
                self.spikes.push(SpikeTrace {
                    name: name.to_string(),
                    ones,
                    elements,
                });
            }
        }
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyMode {
    Ann,
    Snn,
}

impl FromStr for EnergyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ann" => Ok(EnergyMode::Ann),
            "snn" => Ok(EnergyMode::Snn),
            other => Err(Error::Invalid(format!("energy mode must be ann or snn, got `{other}`"))),
        }
    }
}

impl fmt::Display for EnergyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnergyMode::Ann => "ann",
            EnergyMode::Snn => "snn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Charge {
    Ac,
    Mac,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEnergy {
    pub name: String,
    pub kind: &'static str,
    /// Dense MACs per time step.
    pub flops: f64,
    /// Dense MACs over the whole clip.
    pub macs: u64,
    pub spike_rate: f64,
    pub timesteps: usize,
    pub charge: Charge,
    pub energy_j: f64,
}

/// Energy of one layer. ANN: `flops·E_MAC`. SNN: `flops·R_s·T·E_AC` for
/// spike-gated layers, `flops·T·E_MAC` when the input is real-valued.
pub fn layer_energy(flops: f64, rate: f64, steps: usize, charge: Charge, mode: EnergyMode) -> f64 {
    match (mode, charge) {
        (EnergyMode::Ann, _) => flops * E_MAC,
        (EnergyMode::Snn, Charge::Ac) => flops * rate * steps as f64 * E_AC,
        (EnergyMode::Snn, Charge::Mac) => flops * steps as f64 * E_MAC,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub mode: EnergyMode,
    pub timesteps: usize,
    pub params: usize,
    pub layers: Vec<LayerEnergy>,
    pub total_j: f64,
}

impl EnergyReport {
    pub fn from_probe(probe: &Probe, steps: usize, params: usize, mode: EnergyMode) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("energy report needs T > 0".into()));
        }
        let layers: Vec<LayerEnergy> = probe
            .layers()
            .iter()
            .map(|t| {
                let charge = if t.binary { Charge::Ac } else { Charge::Mac };
                let flops = t.macs as f64 / steps as f64;
                let rate = t.rate();
                LayerEnergy {
                    name: t.name.clone(),
                    kind: t.spec.kind(),
                    flops,
                    macs: t.macs,
                    spike_rate: rate,
                    timesteps: steps,
                    charge,
                    energy_j: layer_energy(flops, rate, steps, charge, mode),
                }
            })
            .collect();
        let total_j = layers.iter().map(|l| l.energy_j).sum();
        Ok(Self {
            mode,
            timesteps: steps,
            params,
            layers,
            total_j,
        })
    }

    pub fn total_flops(&self) -> f64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    /// Unweighted mean input spike rate over spike-gated layers.
    pub fn avg_spike_rate(&self) -> f64 {
        let gated: Vec<f64> = self
            .layers
            .iter()
            .filter(|l| l.charge == Charge::Ac)
            .map(|l| l.spike_rate)
            .collect();
        if gated.is_empty() {
            0.0
        } else {
            gated.iter().sum::<f64>() / gated.len() as f64
        }
    }

    /// MAC-weighted spike rate over spike-gated layers.
    pub fn weighted_spike_rate(&self) -> f64 {
        let (num, den) = self
            .layers
            .iter()
            .filter(|l| l.charge == Charge::Ac)
            .fold((0.0, 0.0), |(n, d), l| (n + l.flops * l.spike_rate, d + l.flops));
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "summary mode={} Param(M)={:.4} FLOPS(G)={:.6} avg_spiking_rate={:.4} Power(mJ)={:.6e}",
            self.mode,
            self.params as f64 / 1e6,
            self.total_flops() / 1e9,
            self.avg_spike_rate(),
            self.total_j * 1e3
        )
    }

    /// One record per layer, then a note and the summary line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.layers {
            s.push_str(&format!(
                "layer name={} op={} flops={} macs={} spike_rate={:.6} timesteps={} charge={} energy_j={:.6e}\n",
                l.name,
                l.kind,
                l.flops,
                l.macs,
                l.spike_rate,
                l.timesteps,
                match l.charge {
                    Charge::Ac => "ac",
                    Charge::Mac => "mac",
                },
                l.energy_j
            ));
        }
        s.push_str(
            "note real-valued inputs (Conv_head, attention value products, flow heads) are charged at MAC cost in snn mode\n",
        );
        s.push_str(&self.summary_line());
        s.push('\n');
        s
    }
}

/// Profiles `model` on each probe input in inference mode, one sample per
/// forward, and prices the accumulated traces.
pub fn estimate_energy(model: &SdformerFlow, inputs: &[SpikeInput], mode: EnergyMode) -> Result<EnergyReport> {
    if inputs.is_empty() {
        return Err(Error::Invalid("empty probe set".into()));
    }
    let _g = no_grad();
    let steps = model.config.time_steps;
    let mut probe = Probe::new();
    for x in inputs {
        let t = stack_batch(&[x])?;
        let mut cx = Ctx::with_probe(1, steps, probe);
        model.forward(&t, &mut cx)?;
        probe = cx.take_probe().expect("probe attached");
    }
    EnergyReport::from_probe(&probe, steps, model.param_count(), mode)
}
