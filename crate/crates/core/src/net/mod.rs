//! The spiking swin encoder/decoder for optical flow.
//!
//! Convolutional parts run on `[T·B, C, H, W]`, transformer stages on
//! `[T·B, H, W, D]`; time is always the outermost factor of the first axis.

mod config;

pub use config::{AttentionKind, ModelConfig, ShortcutKind};
pub(crate) use config::{parse_bool, parse_num};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdff_autograd::{Conv2dParams, Tensor};

use crate::error::{Error, Result};
use crate::neurons::NeuronKind;
use crate::nn::{to_channels_first, to_channels_last, BatchNorm, Conv, ConvTranspose, Ctx, Linear, Spiking};
use crate::swin::{DotAttention, QkAttention, WindowPlan};

/// Shortcut wrapper: MS computes `x + f(SN(x))`, SEW computes
/// `SN(x) + SN'(f(SN(x)))`.
#[derive(Debug, Clone)]
pub struct Residual {
    pub sn_in: Spiking,
    pub sn_out: Option<Spiking>,
}

impl Residual {
    pub fn new(name: &str, kind: ShortcutKind, neuron: NeuronKind, steps: usize) -> Result<Self> {
        Ok(Self {
            sn_in: Spiking::new(format!("{name}.sn_in"), neuron, steps)?,
            sn_out: match kind {
                ShortcutKind::Ms => None,
                ShortcutKind::Sew => Some(Spiking::new(format!("{name}.sn_out"), neuron, steps)?),
            },
        })
    }

    pub fn apply(
        &self,
        x: &Tensor,
        cx: &mut Ctx,
        branch: impl FnOnce(&Tensor, &mut Ctx) -> Result<Tensor>,
    ) -> Result<Tensor> {
        let s = self.sn_in.forward(x, cx)?;
        let y = branch(&s, cx)?;
        match &self.sn_out {
            None => Ok(x.add(&y)?),
            Some(sn) => Ok(s.add(&sn.forward(&y, cx)?)?),
        }
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.sn_in.collect(out);
        if let Some(sn) = &self.sn_out {
            sn.collect(out);
        }
    }
}

/// Residual block of two 3×3 convolutions: `BN(Conv(SN(BN(Conv(·)))))`.
#[derive(Debug, Clone)]
pub struct ConvResBlock {
    pub residual: Residual,
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub sn: Spiking,
    pub conv2: Conv,
    pub bn2: BatchNorm,
}

impl ConvResBlock {
    fn new(name: &str, ch: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let p = Conv2dParams::new(1, 1);
        Ok(Self {
            residual: Residual::new(name, cfg.shortcut, cfg.neuron, cfg.time_steps)?,
            conv1: Conv::new(format!("{name}.conv1"), ch, ch, 3, p, false, rng)?,
            bn1: BatchNorm::new(format!("{name}.bn1"), ch)?,
            sn: Spiking::new(format!("{name}.sn"), cfg.neuron, cfg.time_steps)?,
            conv2: Conv::new(format!("{name}.conv2"), ch, ch, 3, p, false, rng)?,
            bn2: BatchNorm::new(format!("{name}.bn2"), ch)?,
        })
    }

    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        self.residual.apply(x, cx, |s, cx| {
            let h = self.bn1.forward(&self.conv1.forward(s, cx)?, 1, cx)?;
            let h = self.sn.forward(&h, cx)?;
            self.bn2.forward(&self.conv2.forward(&h, cx)?, 1, cx)
        })
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.residual.collect(out);
        self.conv1.collect(out);
        self.bn1.collect(out);
        self.sn.collect(out);
        self.conv2.collect(out);
        self.bn2.collect(out);
    }
}

/// Spiking feature generator: `Conv_head → SN → strided Conv → BN`, then
/// two residual blocks. Halves the spatial size.
#[derive(Debug, Clone)]
pub struct FeatureGenerator {
    pub head: Conv,
    pub sn: Spiking,
    pub down: Conv,
    pub bn: BatchNorm,
    pub blocks: [ConvResBlock; 2],
}

impl FeatureGenerator {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.base_dim;
        Ok(Self {
            head: Conv::new("sfg.head", cfg.in_channels, d, 3, Conv2dParams::new(1, 1), false, rng)?,
            sn: Spiking::new("sfg.sn", cfg.neuron, cfg.time_steps)?,
            down: Conv::new("sfg.down", d, d, 3, Conv2dParams::new(2, 1), false, rng)?,
            bn: BatchNorm::new("sfg.bn", d)?,
            blocks: [
                ConvResBlock::new("sfg.res0", d, cfg, rng)?,
                ConvResBlock::new("sfg.res1", d, cfg, rng)?,
            ],
        })
    }

    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::Invalid(format!("feature generator needs even spatial dims, got {s:?}")));
        }
        let h = self.sn.forward(&self.head.forward(x, cx)?, cx)?;
        let mut z = self.bn.forward(&self.down.forward(&h, cx)?, 1, cx)?;
        for b in &self.blocks {
            z = b.forward(&z, cx)?;
        }
        Ok(z)
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.head.collect(out);
        self.sn.collect(out);
        self.down.collect(out);
        self.bn.collect(out);
        for b in &self.blocks {
            b.collect(out);
        }
    }
}

/// Patch embedding `BN(Conv_P(SN(x)))` with an optional 1×1 stride-P
/// convolutional shortcut on the real-valued input.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub sn: Spiking,
    pub conv: Conv,
    pub bn: BatchNorm,
    pub shortcut: Option<Conv>,
}

impl PatchEmbed {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.base_dim;
        let p = cfg.patch;
        Ok(Self {
            sn: Spiking::new("spe.sn", cfg.neuron, cfg.time_steps)?,
            conv: Conv::new("spe.conv", d, d, p, Conv2dParams::new(p, 0), false, rng)?,
            bn: BatchNorm::new("spe.bn", d)?,
            shortcut: if cfg.use_spe_shortcut {
                Some(Conv::new("spe.shortcut", d, d, 1, Conv2dParams::new(p, 0), false, rng)?)
            } else {
                None
            },
        })
    }

    /// `[T·B, D, H, W]` in, channel-last `[T·B, H/P, W/P, D]` out.
    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let p = self.conv.params.stride;
        let s = x.shape();
        if s.len() != 4 || s[2] % p != 0 || s[3] % p != 0 {
            return Err(Error::Invalid(format!("patch {p} does not divide {s:?}")));
        }
        let mut z = self.bn.forward(&self.conv.forward(&self.sn.forward(x, cx)?, cx)?, 1, cx)?;
        if let Some(sc) = &self.shortcut {
            z = z.add(&sc.forward(x, cx)?)?;
        }
        to_channels_last(&z)
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.sn.collect(out);
        self.conv.collect(out);
        self.bn.collect(out);
        if let Some(sc) = &self.shortcut {
            sc.collect(out);
        }
    }
}

#[derive(Debug, Clone)]
pub enum Attention {
    Dot(DotAttention),
    Qk(QkAttention),
}

impl Attention {
    pub fn forward(&self, s: &Tensor, plan: &WindowPlan, cx: &mut Ctx) -> Result<Tensor> {
        match self {
            Attention::Dot(a) => a.forward(s, plan, cx),
            Attention::Qk(a) => a.forward(s, plan, cx),
        }
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        match self {
            Attention::Dot(a) => a.collect(out),
            Attention::Qk(a) => a.collect(out),
        }
    }
}

/// Spiking MLP `BN(Linear(SN(BN(Linear(s)))))` on spike input `s`.
#[derive(Debug, Clone)]
pub struct SpikingMlp {
    pub fc1: Linear,
    pub bn1: BatchNorm,
    pub sn: Spiking,
    pub fc2: Linear,
    pub bn2: BatchNorm,
}

impl SpikingMlp {
    fn new(name: &str, dim: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let hidden = dim * cfg.mlp_ratio;
        Ok(Self {
            fc1: Linear::new(format!("{name}.fc1"), dim, hidden, true, rng)?,
            bn1: BatchNorm::new(format!("{name}.bn1"), hidden)?,
            sn: Spiking::new(format!("{name}.sn"), cfg.neuron, cfg.time_steps)?,
            fc2: Linear::new(format!("{name}.fc2"), hidden, dim, true, rng)?,
            bn2: BatchNorm::new(format!("{name}.bn2"), dim)?,
        })
    }

    pub fn forward(&self, s: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let h = self.sn.forward(&self.bn1.forward_last(&self.fc1.forward(s, cx)?, cx)?, cx)?;
        self.bn2.forward_last(&self.fc2.forward(&h, cx)?, cx)
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.fc1.collect(out);
        self.bn1.collect(out);
        self.sn.collect(out);
        self.fc2.collect(out);
        self.bn2.collect(out);
    }
}

/// One spatiotemporal swin block: window attention then MLP, each with a shortcut.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub shifted: bool,
    pub attn_res: Residual,
    pub attn: Attention,
    pub mlp_res: Residual,
    pub mlp: SpikingMlp,
}

impl SwinBlock {
    fn new(name: &str, stage: usize, shifted: bool, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dim = cfg.base_dim << stage;
        let win = cfg.window_config(stage);
        let t = cfg.time_steps;
        let attn = match cfg.attention {
            AttentionKind::Dot => Attention::Dot(DotAttention::new(&format!("{name}.attn"), dim, &win, cfg.neuron, t, rng)?),
            AttentionKind::Qk => Attention::Qk(QkAttention::new(&format!("{name}.attn"), dim, &win, cfg.neuron, t, rng)?),
        };
        Ok(Self {
            shifted,
            attn_res: Residual::new(&format!("{name}.attn_res"), cfg.shortcut, cfg.neuron, t)?,
            attn,
            mlp_res: Residual::new(&format!("{name}.mlp_res"), cfg.shortcut, cfg.neuron, t)?,
            mlp: SpikingMlp::new(&format!("{name}.mlp"), dim, cfg, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, plan: &WindowPlan, cx: &mut Ctx) -> Result<Tensor> {
        let x = self.attn_res.apply(x, cx, |s, cx| self.attn.forward(s, plan, cx))?;
        self.mlp_res.apply(&x, cx, |s, cx| self.mlp.forward(s, cx))
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.attn_res.collect(out);
        self.attn.collect(out);
        self.mlp_res.collect(out);
        self.mlp.collect(out);
    }
}

/// Spiking patch merge `BN(Linear(SN(z)))` over 2×2 neighbourhoods.
#[derive(Debug, Clone)]
pub struct PatchMerge {
    pub sn: Spiking,
    pub linear: Linear,
    pub bn: BatchNorm,
}

impl PatchMerge {
    fn new(name: &str, dim: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            sn: Spiking::new(format!("{name}.sn"), cfg.neuron, cfg.time_steps)?,
            linear: Linear::new(format!("{name}.linear"), 4 * dim, 2 * dim, false, rng)?,
            bn: BatchNorm::new(format!("{name}.bn"), 2 * dim)?,
        })
    }

    /// `[N, H, W, D]` to `[N, H/2, W/2, 2D]`.
    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<Tensor> {
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::Invalid(format!("patch merge needs even spatial dims, got {s:?}")));
        }
        let (n, h, w, d) = (s[0], s[1], s[2], s[3]);
        let spikes = self.sn.forward(x, cx)?;
        let merged = spikes
            .reshape(&[n, h / 2, 2, w / 2, 2, d])?
            .permute(&[0, 1, 3, 4, 2, 5])?
            .reshape(&[n, h / 2, w / 2, 4 * d])?;
        self.bn.forward_last(&self.linear.forward(&merged, cx)?, cx)
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.sn.collect(out);
        self.linear.collect(out);
        self.bn.collect(out);
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub index: usize,
    pub blocks: Vec<SwinBlock>,
    pub merge: Option<PatchMerge>,
}

impl Stage {
    /// Runs the blocks and returns `(skip features, merged output)`.
    pub fn forward(&self, x: &Tensor, cfg: &ModelConfig, cx: &mut Ctx) -> Result<(Tensor, Option<Tensor>)> {
        let s = x.shape();
        let steps = cfg.time_steps;
        let dims = [steps, s[1], s[2]];
        let batch = s[0] / steps;
        let win = cfg.window_config(self.index);
        let plans = [
            WindowPlan::new(&win, dims, batch, s[3], false)?,
            WindowPlan::new(&win, dims, batch, s[3], true)?,
        ];
        let mut z = x.clone();
        for b in &self.blocks {
            z = b.forward(&z, &plans[usize::from(b.shifted)], cx)?;
        }
        let merged = match &self.merge {
            Some(m) => Some(m.forward(&z, cx)?),
            None => None,
        };
        Ok((z, merged))
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        for b in &self.blocks {
            b.collect(out);
        }
        if let Some(m) = &self.merge {
            m.collect(out);
        }
    }
}

/// `BN(ConvT(SN(concat)))` followed by a 1×1 flow head.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub sn: Spiking,
    pub deconv: ConvTranspose,
    pub bn: BatchNorm,
    pub head: Conv,
}

impl Decoder {
    fn new(name: &str, c_in: usize, c_out: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            sn: Spiking::new(format!("{name}.sn"), cfg.neuron, cfg.time_steps)?,
            deconv: ConvTranspose::new(
                format!("{name}.deconv"),
                c_in,
                c_out,
                3,
                Conv2dParams::new(2, 1).with_output_padding(1),
                rng,
            )?,
            bn: BatchNorm::new(format!("{name}.bn"), c_out)?,
            head: Conv::new(format!("{name}.flow"), c_out, 2, 1, Conv2dParams::new(1, 0), true, rng)?,
        })
    }

    /// Returns `(features, per-step flow)` at twice the input resolution.
    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<(Tensor, Tensor)> {
        let z = self.bn.forward(&self.deconv.forward(&self.sn.forward(x, cx)?, cx)?, 1, cx)?;
        let flow = self.head.forward(&z, cx)?;
        Ok((z, flow))
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.sn.collect(out);
        self.deconv.collect(out);
        self.bn.collect(out);
        self.head.collect(out);
    }
}

/// Multi-scale network output. Flows are `[B, 2, h, w]`, time-averaged.
#[derive(Debug, Clone)]
pub struct FlowOutput {
    /// Coarse to fine, one per decoder.
    pub scales: Vec<Tensor>,
    /// Finest prediction resized to the input resolution.
    pub full: Tensor,
}

#[derive(Debug, Clone)]
pub struct SdformerFlow {
    pub config: ModelConfig,
    pub sfg: FeatureGenerator,
    pub spe: PatchEmbed,
    pub stages: Vec<Stage>,
    pub bottleneck: [ConvResBlock; 2],
    pub decoders: Vec<Decoder>,
}

impl SdformerFlow {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let cfg = &config;
        let dims = cfg.dims();
        let e = cfg.encoders;
        let sfg = FeatureGenerator::new(cfg, rng)?;
        let spe = PatchEmbed::new(cfg, rng)?;
        let mut stages = Vec::with_capacity(e);
        for l in 0..e {
            let blocks = (0..cfg.depths[l])
                .map(|m| SwinBlock::new(&format!("stage{l}.block{m}"), l, m % 2 == 1, cfg, rng))
                .collect::<Result<Vec<_>>>()?;
            let merge = if l + 1 < e {
                Some(PatchMerge::new(&format!("stage{l}.merge"), dims[l], cfg, rng)?)
            } else {
                None
            };
            stages.push(Stage { index: l, blocks, merge });
        }
        let deep = dims[e - 1];
        let bottleneck = [
            ConvResBlock::new("bottleneck0", deep, cfg, rng)?,
            ConvResBlock::new("bottleneck1", deep, cfg, rng)?,
        ];
        let mut decoders = Vec::with_capacity(e);
        let mut c_x = deep;
        for j in 0..e {
            let skip = dims[e - 1 - j];
            let c_out = if j + 2 <= e { dims[e - 2 - j] } else { dims[0] / 2 };
            decoders.push(Decoder::new(&format!("decoder{j}"), c_x + skip + 2, c_out, cfg, rng)?);
            c_x = c_out;
        }
        Ok(Self {
            config,
            sfg,
            spe,
            stages,
            bottleneck,
            decoders,
        })
    }

    /// Named learnable tensors in a stable order.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        self.state().into_iter().filter(|(_, t)| t.requires_grad()).collect()
    }

    /// Parameters plus batch-norm running statistics.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.sfg.collect(&mut out);
        self.spe.collect(&mut out);
        for s in &self.stages {
            s.collect(&mut out);
        }
        for b in &self.bottleneck {
            b.collect(&mut out);
        }
        for d in &self.decoders {
            d.collect(&mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Encoder skip features, fine to coarse, channel-last.
    pub fn encode(&self, x: &Tensor, cx: &mut Ctx) -> Result<Vec<Tensor>> {
        let cfg = &self.config;
        let s = x.shape();
        if s.len() != 4 || s[1] != cfg.in_channels || s[0] == 0 || s[0] % cfg.time_steps != 0 {
            return Err(Error::Invalid(format!(
                "input {s:?} must be [T·B, {}, H, W] with T={}",
                cfg.in_channels, cfg.time_steps
            )));
        }
        cfg.check_input(s[2], s[3])?;
        let z = self.sfg.forward(x, cx)?;
        let mut z = self.spe.forward(&z, cx)?;
        let mut skips = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (skip, merged) = stage.forward(&z, cfg, cx)?;
            skips.push(skip);
            if let Some(m) = merged {
                z = m;
            }
        }
        Ok(skips)
    }

    /// Flow for a `[T·B, C, H, W]` batch.
    pub fn forward(&self, x: &Tensor, cx: &mut Ctx) -> Result<FlowOutput> {
        let steps = self.config.time_steps;
        let batch = x.shape().first().copied().unwrap_or(0) / steps;
        if cx.steps != steps || cx.batch != batch {
            return Err(Error::Invalid(format!(
                "context (T={}, B={}) does not match input (T={steps}, B={batch})",
                cx.steps, cx.batch
            )));
        }
        let (out_h, out_w) = (x.shape()[2], x.shape()[3]);
        let skips = self.encode(x, cx)?;
        let mut z = to_channels_first(skips.last().expect("at least one stage"))?;
        for b in &self.bottleneck {
            z = b.forward(&z, cx)?;
        }
        let mut pred: Option<Tensor> = None;
        let mut scales = Vec::with_capacity(self.decoders.len());
        let e = self.decoders.len();
        for (j, dec) in self.decoders.iter().enumerate() {
            let skip = to_channels_first(&skips[e - 1 - j])?;
            if skip.shape()[2..] != z.shape()[2..] {
                return Err(Error::Invalid(format!(
                    "decoder {j}: skip {:?} does not match features {:?}",
                    skip.shape(),
                    z.shape()
                )));
            }
            let p = match pred.take() {
                Some(p) => p,
                None => Tensor::zeros(&[z.shape()[0], 2, z.shape()[2], z.shape()[3]]),
            };
            let (next, flow) = dec.forward(&Tensor::concat(&[z, skip, p], 1)?, cx)?;
            let fs = flow.shape().to_vec();
            scales.push(flow.reshape(&[steps, batch * 2 * fs[2] * fs[3]])?.mean_axis(0, false)?.reshape(&[
                batch, 2, fs[2], fs[3],
            ])?);
            pred = Some(flow);
            z = next;
        }
        let finest = scales.last().expect("at least one decoder");
        let full = finest.upsample_bilinear(out_h, out_w)?;
        Ok(FlowOutput { scales, full })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_input(batch: usize, size: usize, value: f32) -> Tensor {
        let cfg = ModelConfig::tiny();
        Tensor::full(&[cfg.time_steps * batch, cfg.in_channels, size, size], value)
    }

    #[test]
    fn tiny_forward_shapes() {
        let model = SdformerFlow::new(ModelConfig::tiny(), 0).unwrap();
        let mut cx = Ctx::new(2, 5);
        let out = model.forward(&tiny_input(2, 32, 0.5), &mut cx).unwrap();
        let shapes: Vec<_> = out.scales.iter().map(|s| s.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 2, 8, 8], vec![2, 2, 16, 16]]);
        assert_eq!(out.full.shape(), &[2, 2, 32, 32]);
    }

    #[test]
    fn three_encoder_scales() {
        let mut cfg = ModelConfig::tiny();
        cfg.encoders = 3;
        cfg.depths = vec![2, 2, 2];
        cfg.heads = vec![1, 2, 4];
        let model = SdformerFlow::new(cfg.clone(), 0).unwrap();
        let mut cx = Ctx::new(1, 5);
        let x = Tensor::full(&[5, 4, 64, 64], 0.3);
        let out = model.forward(&x, &mut cx).unwrap();
        let sizes: Vec<usize> = out.scales.iter().map(|s| s.shape()[2]).collect();
        assert_eq!(sizes, vec![8, 16, 32]);
        assert_eq!(out.full.shape(), &[1, 2, 64, 64]);
    }

    #[test]
    fn feature_generator_shape() {
        let mut cfg = ModelConfig::tiny();
        cfg.base_dim = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sfg = FeatureGenerator::new(&cfg, &mut rng).unwrap();
        let mut cx = Ctx::new(1, 5);
        let y = sfg.forward(&Tensor::full(&[5, 4, 64, 64], 0.2), &mut cx).unwrap();
        assert_eq!(y.shape(), &[5, 16, 32, 32]);
        assert!(sfg.forward(&Tensor::zeros(&[5, 4, 63, 64]), &mut cx).is_err());
    }

    #[test]
    fn patch_merge_shape_and_constancy() {
        let cfg = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = PatchMerge::new("m", 8, &cfg, &mut rng).unwrap();
        let mut cx = Ctx::new(1, 5);
        let x = Tensor::full(&[5, 16, 16, 8], 0.4);
        let y = m.forward(&x, &mut cx).unwrap();
        assert_eq!(y.shape(), &[5, 8, 8, 16]);
        let v = y.to_vec();
        for t in 0..5 {
            let base = &v[t * 8 * 8 * 16..][..16];
            for p in 0..64 {
                assert_eq!(&v[t * 8 * 8 * 16 + p * 16..][..16], base);
            }
        }
        assert!(m.forward(&Tensor::zeros(&[5, 15, 16, 8]), &mut cx).is_err());
    }

    #[test]
    fn zero_flow_heads_give_zero_flow() {
        let model = SdformerFlow::new(ModelConfig::tiny(), 3).unwrap();
        for d in &model.decoders {
            d.head.weight.update_data(|w| w.fill(0.0));
        }
        let mut cx = Ctx::new(1, 5);
        let out = model.forward(&tiny_input(1, 32, 1.0), &mut cx).unwrap();
        for s in out.scales.iter().chain([&out.full]) {
            assert!(s.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let model = SdformerFlow::new(ModelConfig::tiny(), 9).unwrap();
            let mut cx = Ctx::new(1, 5);
            let x = Tensor::new((0..5 * 4 * 32 * 32).map(|i| ((i * 7919) % 13) as f32 / 6.0).collect(), &[5, 4, 32, 32]).unwrap();
            model.forward(&x, &mut cx).unwrap().full.to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = SdformerFlow::new(ModelConfig::tiny(), 0).unwrap();
        let mut cx = Ctx::new(1, 5);
        assert!(model.forward(&Tensor::zeros(&[5, 4, 36, 32]), &mut cx).is_err());
        assert!(model.forward(&Tensor::zeros(&[5, 3, 32, 32]), &mut cx).is_err());
        assert!(model.forward(&Tensor::zeros(&[10, 4, 32, 32]), &mut cx).is_err());
    }

    #[test]
    fn lif_parameter_count_ignores_time_steps() {
        let mut a = ModelConfig::tiny();
        a.neuron = NeuronKind::Lif;
        let mut b = a.clone();
        b.time_steps = 3;
        let pa = SdformerFlow::new(a.clone(), 0).unwrap().param_count();
        assert_eq!(pa, SdformerFlow::new(b, 0).unwrap().param_count());
        let mut p = a.clone();
        p.neuron = NeuronKind::Psn;
        let m = SdformerFlow::new(p, 0).unwrap();
        let sn_layers = m.parameters().iter().filter(|(n, _)| n.ends_with("psn_weight")).count();
        assert_eq!(m.param_count(), pa + sn_layers * (25 + 5));
    }
}
