//! Parameterized building blocks shared by the network: linear, convolution,
//! transposed convolution, batch norm and spiking activations, plus the
//! forward context that carries the optional profiling probe.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sdff_autograd::{Conv2dParams, Tensor};

use crate::energy::{LayerSpec, Probe};
use crate::error::{Error, Result};
use crate::neurons::{Neuron, NeuronKind};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-forward state: batch size, time steps, and the profiling probe if
/// one is attached.
#[derive(Debug)]
pub struct Ctx {
    pub batch: usize,
    pub steps: usize,
    /// Batch norm uses batch statistics and updates its running estimates.
    pub training: bool,
    probe: Option<Probe>,
}

impl Ctx {
    pub fn new(batch: usize, steps: usize) -> Self {
        Self {
            batch,
            steps,
            training: true,
            probe: None,
        }
    }

    /// Inference context: batch norm uses running statistics.
    pub fn eval(batch: usize, steps: usize) -> Self {
        Self {
            training: false,
            ..Self::new(batch, steps)
        }
    }

    /// Profiling context, in inference mode.
    pub fn with_probe(batch: usize, steps: usize, probe: Probe) -> Self {
        Self {
            batch,
            steps,
            training: false,
            probe: Some(probe),
        }
    }

    pub fn take_probe(&mut self) -> Option<Probe> {
        self.probe.take()
    }

    pub fn probe(&self) -> Option<&Probe> {
        self.probe.as_ref()
    }

    /// Records a synaptic layer's dense cost and the tensor gating it.
    pub fn record(&mut self, name: &str, spec: LayerSpec, input: &Tensor) -> Result<()> {
        match self.probe.as_mut() {
            Some(p) => p.record(name, spec, input, self.batch),
            None => Ok(()),
        }
    }

    /// Records a spiking activation's output rate (diagnostics only).
    pub fn record_spikes(&mut self, name: &str, spikes: &Tensor) {
        if let Some(p) = self.probe.as_mut() {
            p.record_spikes(name, spikes);
        }
    }
}

/// Uniform `±√(6 / fan_in)`.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, shape: &[usize]) -> Result<Tensor> {
    let bound = (6.0 / fan_in.max(1) as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Ok(Tensor::parameter(data, shape)?)
}

fn zeros_param(shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::parameter(vec![0.0; shape.iter().product()], shape)?)
}

/// `y = x·W + b` on the last axis; `W` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(name: impl Into<String>, n_in: usize, n_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            weight: kaiming_uniform(rng, n_in, &[n_in, n_out])?,
            bias: if bias { Some(zeros_param(&[n_out])?) } else { None },
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.weight.shape()[0], self.weight.shape()[1])
    }

    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let (n_in, n_out) = self.dims();
        let s = x.shape();
        if s.last() != Some(&n_in) {
            return Err(Error::Invalid(format!("{}: input {:?} for {n_in} features", self.name, s)));
        }
        let tokens = x.numel() / n_in;
        cx.record(&self.name, LayerSpec::Linear { n_in, n_out, tokens }, x)?;
        let mut y = x.reshape(&[tokens, n_in])?.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.add(b)?;
        }
        let mut out_shape = s.to_vec();
        *out_shape.last_mut().expect("rank >= 1") = n_out;
        Ok(y.reshape(&out_shape)?)
    }

    pub fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{}.weight", self.name), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{}.bias", self.name), b.clone()));
        }
    }
}

/// 2-D convolution over `[N, C, H, W]`, weight `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub params: Conv2dParams,
}

impl Conv {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        params: Conv2dParams,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            weight: kaiming_uniform(rng, c_in * k * k, &[c_out, c_in, k, k])?,
            bias: if bias { Some(zeros_param(&[c_out])?) } else { None },
            params,
        })
    }

    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.bias.as_ref(), self.params)?;
        let w = self.weight.shape();
        let ys = y.shape();
        cx.record(
            &self.name,
            LayerSpec::Conv2d {
                kh: w[2],
                kw: w[3],
                c_in: w[1],
                c_out: w[0],
                h_out: ys[2],
                w_out: ys[3],
                images: ys[0],
            },
            x,
        )?;
        Ok(y)
    }

    pub fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{}.weight", self.name), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{}.bias", self.name), b.clone()));
        }
    }
}

/// Transposed convolution, weight `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose {
    pub name: String,
    pub weight: Tensor,
    pub params: Conv2dParams,
}

impl ConvTranspose {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        params: Conv2dParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            weight: kaiming_uniform(rng, c_in * k * k, &[c_in, c_out, k, k])?,
            params,
        })
    }

    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let w = self.weight.shape();
        let xs = x.shape();
        if xs.len() == 4 {
            cx.record(
                &self.name,
                LayerSpec::ConvTranspose2d {
                    kh: w[2],
                    kw: w[3],
                    c_in: w[0],
                    c_out: w[1],
                    h_in: xs[2],
                    w_in: xs[3],
                    images: xs[0],
                },
                x,
            )?;
        }
        Ok(x.conv_transpose2d(&self.weight, None, self.params)?)
    }

    pub fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{}.weight", self.name), self.weight.clone()));
    }
}

/// Batch norm: batch statistics in training, running statistics otherwise.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            gamma: Tensor::parameter(vec![1.0; channels], &[channels])?,
            beta: zeros_param(&[channels])?,
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
        })
    }

    /// Normalizes every axis except `axis`.
    pub fn forward(&self, x: &Tensor, axis: usize, cx: &Ctx) -> Result<Tensor> {
        let s = x.shape();
        let c = self.gamma.numel();
        if axis >= s.len() || s[axis] != c {
            return Err(Error::Invalid(format!("{}: {c} channels, input {s:?} axis {axis}", self.name)));
        }
        if cx.training {
            let y = x.batch_norm(&self.gamma, &self.beta, axis, BN_EPS)?;
            self.update_running(x, axis);
            return Ok(y);
        }
        let mean = self.running_mean.data();
        let inv_std: Vec<f32> = self.running_var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut bshape = vec![c];
        bshape.resize(s.len() - axis, 1);
        let shift: Vec<f32> = mean.iter().zip(&inv_std).map(|(m, i)| -m * i).collect();
        let scale = self.gamma.mul(&Tensor::new(inv_std, &[c])?)?;
        let shift = self.gamma.mul(&Tensor::new(shift, &[c])?)?.add(&self.beta)?;
        let y = x.mul(&scale.reshape(&bshape)?)?;
        Ok(y.add(&shift.reshape(&bshape)?)?)
    }

    /// Channel-last input: the channel is the final axis.
    pub fn forward_last(&self, x: &Tensor, cx: &Ctx) -> Result<Tensor> {
        let c = *x.shape().last().ok_or_else(|| Error::Invalid("BN on a scalar".into()))?;
        let y = self.forward(&x.reshape(&[x.numel() / c.max(1), c])?, 1, cx)?;
        Ok(y.reshape(x.shape())?)
    }

    fn update_running(&self, x: &Tensor, axis: usize) {
        let s = x.shape();
        let c = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let outer: usize = s[..axis].iter().product();
        let n = outer * inner;
        if n < 2 {
            return;
        }
        let d = x.data();
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for &v in &d[base..base + inner] {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let nf = n as f64;
        self.running_mean.update_data(|m| {
            for ch in 0..c {
                m[ch] = ((1.0 - BN_MOMENTUM) * m[ch] as f64 + BN_MOMENTUM * sum[ch] / nf) as f32;
            }
        });
        self.running_var.update_data(|r| {
            for ch in 0..c {
                let mean = sum[ch] / nf;
                let var = ((sq[ch] - nf * mean * mean) / (nf - 1.0)).max(0.0);
                r[ch] = ((1.0 - BN_MOMENTUM) * r[ch] as f64 + BN_MOMENTUM * var) as f32;
            }
        });
    }

    pub fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{}.gamma", self.name), self.gamma.clone()));
        out.push((format!("{}.beta", self.name), self.beta.clone()));
        out.push((format!("{}.running_mean", self.name), self.running_mean.clone()));
        out.push((format!("{}.running_var", self.name), self.running_var.clone()));
    }
}

/// A named spiking activation applied along the leading `T·B` axis.
#[derive(Debug, Clone)]
pub struct Spiking {
    pub name: String,
    pub neuron: Neuron,
}

impl Spiking {
    pub fn new(name: impl Into<String>, kind: NeuronKind, steps: usize) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            neuron: Neuron::new(kind, steps)?,
        })
    }

    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let t = cx.steps;
        if t == 0 || x.numel() % t != 0 {
            return Err(Error::Invalid(format!("{}: {:?} not divisible into {t} steps", self.name, x.shape())));
        }
        let s = self.neuron.forward(&x.reshape(&[t, x.numel() / t])?)?;
        cx.record_spikes(&self.name, &s);
        Ok(s.reshape(x.shape())?)
    }

    pub fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        for (suffix, p) in self.neuron.parameters() {
            out.push((format!("{}.{suffix}", self.name), p));
        }
    }
}

pub fn to_channels_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute(&[0, 2, 3, 1])?)
}

pub fn to_channels_first(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute(&[0, 3, 1, 2])?)
}
