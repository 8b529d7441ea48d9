//! 3-D (time × height × width) windowing with cyclic shifts, and the two
//! spike-driven window attention variants.
//!
//! Token tensors use the time-major channel-last layout `[T·B, H, W, D]`.
//! Window tensors use `[B, N_w, heads, N_t, D_h]`.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sdff_autograd::{Tensor, GATHER_ZERO};

use crate::energy::LayerSpec;
use crate::error::{Error, Result};
use crate::neurons::NeuronKind;
use crate::nn::{BatchNorm, Ctx, Linear, Spiking};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    /// `(T_w, H_w, W_w)`.
    pub extent: [usize; 3],
    /// Shift used by the shifted blocks; half the extent when `None`.
    pub shift: Option<[usize; 3]>,
    pub heads: usize,
}

impl WindowConfig {
    pub fn new(extent: [usize; 3], heads: usize) -> Result<Self> {
        let cfg = Self {
            extent,
            shift: None,
            heads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.extent.contains(&0) || self.heads == 0 {
            return Err(Error::Invalid(format!(
                "window {:?} with {} heads",
                self.extent, self.heads
            )));
        }
        if let Some(s) = self.shift {
            if (0..3).any(|a| s[a] >= self.extent[a]) {
                return Err(Error::Invalid(format!("shift {s:?} not below extent {:?}", self.extent)));
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.extent.iter().product()
    }

    /// Entries of the relative position table, `(2T_w−1)(2H_w−1)(2W_w−1)`.
    pub fn relative_offsets(&self) -> usize {
        self.extent.iter().map(|e| 2 * e - 1).product()
    }

    fn default_shift(&self) -> [usize; 3] {
        self.shift.unwrap_or([self.extent[0] / 2, self.extent[1] / 2, self.extent[2] / 2])
    }
}

/// A window layout resolved against concrete feature dimensions.
///
/// Axes no longer than the configured extent get a single window covering
/// the axis and no shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub dims: [usize; 3],
    pub batch: usize,
    pub channels: usize,
    pub heads: usize,
    pub configured: [usize; 3],
    pub extent: [usize; 3],
    pub shift: [usize; 3],
    pub padded: [usize; 3],
    pub counts: [usize; 3],
}

impl WindowPlan {
    pub fn new(cfg: &WindowConfig, dims: [usize; 3], batch: usize, channels: usize, shifted: bool) -> Result<Self> {
        cfg.validate()?;
        if dims.contains(&0) || batch == 0 {
            return Err(Error::Invalid(format!("cannot window dims {dims:?} with batch {batch}")));
        }
        if channels % cfg.heads != 0 {
            return Err(Error::Invalid(format!("{channels} channels not divisible by {} heads", cfg.heads)));
        }
        let want = cfg.default_shift();
        let mut extent = [0; 3];
        let mut shift = [0; 3];
        let mut padded = [0; 3];
        let mut counts = [0; 3];
        for a in 0..3 {
            if dims[a] <= cfg.extent[a] {
                extent[a] = dims[a];
                shift[a] = 0;
            } else {
                extent[a] = cfg.extent[a];
                shift[a] = if shifted { want[a] } else { 0 };
            }
            counts[a] = dims[a].div_ceil(extent[a]);
            padded[a] = counts[a] * extent[a];
        }
        Ok(Self {
            dims,
            batch,
            channels,
            heads: cfg.heads,
            configured: cfg.extent,
            extent,
            shift,
            padded,
            counts,
        })
    }

    pub fn windows(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn tokens(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn window_shape(&self) -> [usize; 5] {
        [self.batch, self.windows(), self.heads, self.tokens(), self.head_dim()]
    }

    pub fn token_shape(&self) -> [usize; 4] {
        [self.dims[0] * self.batch, self.dims[1], self.dims[2], self.channels]
    }

    pub fn is_shifted(&self) -> bool {
        self.shift.iter().any(|&s| s > 0)
    }

    pub fn is_padded(&self) -> bool {
        self.padded != self.dims
    }

    /// Window and in-window token of a padded-grid position after the shift.
    fn slot(&self, p: [usize; 3]) -> (usize, usize) {
        let w = (p[0] / self.extent[0] * self.counts[1] + p[1] / self.extent[1]) * self.counts[2] + p[2] / self.extent[2];
        let t = ((p[0] % self.extent[0]) * self.extent[1] + p[1] % self.extent[1]) * self.extent[2] + p[2] % self.extent[2];
        (w, t)
    }

    /// Shifted-grid position occupied by original coordinate `c`.
    fn shifted_pos(&self, c: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| (c[a] + self.padded[a] - self.shift[a]) % self.padded[a])
    }

    /// Original coordinate shown at shifted-grid position `p`; `None` for padding.
    fn source(&self, p: [usize; 3]) -> Option<[usize; 3]> {
        let c: [usize; 3] = std::array::from_fn(|a| (p[a] + self.shift[a]) % self.padded[a]);
        (0..3).all(|a| c[a] < self.dims[a]).then_some(c)
    }

    fn position(&self, w: usize, tok: usize) -> [usize; 3] {
        let (cw, ch) = (self.counts[2], self.counts[1]);
        let wi = [w / (ch * cw), (w / cw) % ch, w % cw];
        let (ew, eh) = (self.extent[2], self.extent[1]);
        let ti = [tok / (eh * ew), (tok / ew) % eh, tok % ew];
        std::array::from_fn(|a| wi[a] * self.extent[a] + ti[a])
    }

    /// Gather index taking `[T·B, H, W, D]` to `[B, N_w, heads, N_t, D_h]`
    /// (pad, roll by −shift, partition, split heads).
    pub fn partition_index(&self) -> Rc<[u32]> {
        let [b_n, n_w, heads, n_t, d_h] = self.window_shape();
        let [_, h, w] = self.dims;
        let d = self.channels;
        let mut idx = Vec::with_capacity(b_n * n_w * heads * n_t * d_h);
        for b in 0..b_n {
            for win in 0..n_w {
                for head in 0..heads {
                    for tok in 0..n_t {
                        match self.source(self.position(win, tok)) {
                            None => idx.extend(std::iter::repeat_n(GATHER_ZERO, d_h)),
                            Some([ct, ch, cw]) => {
                                let base = (((ct * b_n + b) * h + ch) * w + cw) * d + head * d_h;
                                idx.extend((0..d_h).map(|k| (base + k) as u32));
                            }
                        }
                    }
                }
            }
        }
        idx.into()
    }

    /// Gather index taking `[B, N_w, heads, N_t, D_h]` back to `[T·B, H, W, D]`.
    pub fn reverse_index(&self) -> Rc<[u32]> {
        let [b_n, n_w, heads, n_t, d_h] = self.window_shape();
        let [t_n, h, w] = self.dims;
        let mut idx = Vec::with_capacity(t_n * b_n * h * w * self.channels);
        for t in 0..t_n {
            for b in 0..b_n {
                for y in 0..h {
                    for x in 0..w {
                        let (win, tok) = self.slot(self.shifted_pos([t, y, x]));
                        for head in 0..heads {
                            let base = (((b * n_w + win) * heads + head) * n_t + tok) * d_h;
                            idx.extend((0..d_h).map(|k| (base + k) as u32));
                        }
                    }
                }
            }
        }
        idx.into()
    }

    fn region(&self, p: [usize; 3]) -> usize {
        let mut r = 0;
        for a in 0..3 {
            let label = if self.shift[a] == 0 || p[a] < self.padded[a] - self.extent[a] {
                0
            } else if p[a] < self.padded[a] - self.shift[a] {
                1
            } else {
                2
            };
            r = r * 3 + label;
        }
        r
    }

    /// `[N_w, N_t, N_t]` with 1 where query `i` may attend key `j`: both come
    /// from the same pre-shift region and `j` is not padding. `None` when
    /// no pair is masked.
    pub fn attention_mask(&self) -> Option<Vec<f32>> {
        if !self.is_shifted() && !self.is_padded() {
            return None;
        }
        let (n_w, n_t) = (self.windows(), self.tokens());
        let mut mask = vec![0.0f32; n_w * n_t * n_t];
        for win in 0..n_w {
            let info: Vec<(usize, bool)> = (0..n_t)
                .map(|tok| {
                    let p = self.position(win, tok);
                    (self.region(p), self.source(p).is_some())
                })
                .collect();
            for i in 0..n_t {
                for j in 0..n_t {
                    if info[i].0 == info[j].0 && info[j].1 {
                        mask[(win * n_t + i) * n_t + j] = 1.0;
                    }
                }
            }
        }
        Some(mask)
    }

    /// Relative position table row for every token pair, `[N_t, N_t]`,
    /// laid out for the configured (unclamped) extent.
    pub fn relative_index(&self) -> Vec<usize> {
        let n_t = self.tokens();
        let [ct, ch, cw] = self.configured;
        let coords: Vec<[usize; 3]> = (0..n_t).map(|tok| self.position(0, tok)).collect();
        let mut idx = Vec::with_capacity(n_t * n_t);
        for a in &coords {
            for b in &coords {
                let dt = a[0] + ct - 1 - b[0];
                let dh = a[1] + ch - 1 - b[1];
                let dw = a[2] + cw - 1 - b[2];
                idx.push((dt * (2 * ch - 1) + dh) * (2 * cw - 1) + dw);
            }
        }
        idx
    }

    /// In-window position (row-major over the configured extent) of every
    /// token of `[T·B, H, W]`.
    pub fn token_positions(&self) -> Vec<usize> {
        let [t_n, h, w] = self.dims;
        let [_, ch, cw] = self.configured;
        let mut pos = Vec::with_capacity(t_n * self.batch * h * w);
        for t in 0..t_n {
            for _ in 0..self.batch {
                for y in 0..h {
                    for x in 0..w {
                        let p = self.shifted_pos([t, y, x]);
                        let e = self.extent;
                        pos.push(((p[0] % e[0]) * ch + p[1] % e[1]) * cw + p[2] % e[2]);
                    }
                }
            }
        }
        pos
    }
}

fn check_tokens(x: &Tensor, plan: &WindowPlan) -> Result<()> {
    if x.shape() != plan.token_shape() {
        return Err(Error::Invalid(format!(
            "token tensor {:?} does not match plan {:?}",
            x.shape(),
            plan.token_shape()
        )));
    }
    Ok(())
}

/// `[T·B, H, W, D]` to `[B·N_w·heads, N_t, D_h]`.
pub fn window_partition(x: &Tensor, plan: &WindowPlan) -> Result<Tensor> {
    check_tokens(x, plan)?;
    let [b, n_w, heads, n_t, d_h] = plan.window_shape();
    Ok(x.gather(plan.partition_index(), &[b * n_w * heads, n_t, d_h])?)
}

/// Inverse of [`window_partition`]; padding is cropped.
pub fn window_reverse(windows: &Tensor, plan: &WindowPlan) -> Result<Tensor> {
    let [b, n_w, heads, n_t, d_h] = plan.window_shape();
    if windows.numel() != b * n_w * heads * n_t * d_h {
        return Err(Error::Invalid(format!("window tensor {:?} does not match plan", windows.shape())));
    }
    Ok(windows.gather(plan.reverse_index(), &plan.token_shape())?)
}

fn roll_index(shape: [usize; 4], offsets: [usize; 3], steps: usize, forward: bool) -> Rc<[u32]> {
    let [tb, h, w, d] = shape;
    let b = tb / steps;
    let mut idx = Vec::with_capacity(tb * h * w * d);
    let pick = |p: usize, s: usize, n: usize| if forward { (p + s) % n } else { (p + n - s % n) % n };
    for t in 0..steps {
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let st = pick(t, offsets[0], steps);
                    let sy = pick(y, offsets[1], h);
                    let sx = pick(x, offsets[2], w);
                    let base = (((st * b + bi) * h + sy) * w + sx) * d;
                    idx.extend((0..d).map(|k| (base + k) as u32));
                }
            }
        }
    }
    idx.into()
}

/// Rolls `[T·B, H, W, D]` by `−offsets` along `(T, H, W)`.
pub fn cyclic_shift(x: &Tensor, steps: usize, offsets: [usize; 3]) -> Result<Tensor> {
    let s: [usize; 4] = x
        .shape()
        .try_into()
        .map_err(|_| Error::Invalid(format!("cyclic shift expects rank 4, got {:?}", x.shape())))?;
    if steps == 0 || s[0] % steps != 0 {
        return Err(Error::Invalid(format!("{:?} not divisible into {steps} steps", s)));
    }
    Ok(x.gather(roll_index(s, offsets, steps, true), &s)?)
}

/// Inverse of [`cyclic_shift`].
pub fn cyclic_unshift(x: &Tensor, steps: usize, offsets: [usize; 3]) -> Result<Tensor> {
    let s: [usize; 4] = x
        .shape()
        .try_into()
        .map_err(|_| Error::Invalid(format!("cyclic shift expects rank 4, got {:?}", x.shape())))?;
    if steps == 0 || s[0] % steps != 0 {
        return Err(Error::Invalid(format!("{:?} not divisible into {steps} steps", s)));
    }
    Ok(x.gather(roll_index(s, offsets, steps, false), &s)?)
}

fn is_binary(x: &Tensor) -> bool {
    x.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

/// `((Q·Kᵀ + bias) ⊙ mask)·V · scale` on `[B, N_w, heads, N_t, D_h]` inputs.
/// `bias` and `mask` broadcast against `[B, N_w, heads, N_t, N_t]`.
pub fn sdsa_dot(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: Option<&Tensor>,
    mask: Option<&Tensor>,
    scale: Option<f32>,
) -> Result<Tensor> {
    let s = q.shape().to_vec();
    if s.len() != 5 || k.shape() != s.as_slice() || v.shape() != s.as_slice() {
        return Err(Error::Invalid(format!(
            "attention inputs {:?}/{:?}/{:?} must share a rank-5 shape",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if cfg!(debug_assertions) && !(is_binary(q) && is_binary(k) && is_binary(v)) {
        return Err(Error::Invalid("spike-driven attention requires binary Q, K, V".into()));
    }
    let (g, n_t, d_h) = (s[0] * s[1] * s[2], s[3], s[4]);
    let mut a = q.reshape(&[g, n_t, d_h])?.matmul(&k.reshape(&[g, n_t, d_h])?.transpose_last()?)?;
    if bias.is_some() || mask.is_some() {
        a = a.reshape(&[s[0], s[1], s[2], n_t, n_t])?;
        if let Some(b) = bias {
            a = a.add(b)?;
        }
        if let Some(m) = mask {
            a = a.mul(m)?;
        }
        a = a.reshape(&[g, n_t, n_t])?;
    }
    let mut out = a.matmul(&v.reshape(&[g, n_t, d_h])?)?;
    if let Some(sc) = scale {
        out = out.mul_scalar(sc);
    }
    Ok(out.reshape(&s)?)
}

/// Token attention of the linear variant on `[N, heads, D_h]`:
/// `A_t = SN(Σ_d Q)` per head, `z' = A_t ⊗ K`. Returns `(A_t, z')`.
pub fn qk_token_attention(q: &Tensor, k: &Tensor, sn: &Spiking, cx: &mut Ctx) -> Result<(Tensor, Tensor)> {
    if q.rank() != 3 || q.shape() != k.shape() {
        return Err(Error::Invalid(format!(
            "token attention inputs {:?}/{:?} must share a [N, heads, D_h] shape",
            q.shape(),
            k.shape()
        )));
    }
    let a = sn.forward(&q.sum_axis(2, true)?, cx)?;
    let z = k.mul(&a)?;
    Ok((a, z))
}

/// Q, K, V-style projection `SN(BN(Linear(x)))`, optionally with an
/// additive term before the activation.
#[derive(Debug, Clone)]
pub struct SpikeProjection {
    pub linear: Linear,
    pub bn: BatchNorm,
    pub sn: Spiking,
}

impl SpikeProjection {
    fn new(name: &str, dim: usize, neuron: NeuronKind, steps: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(format!("{name}.linear"), dim, dim, true, rng)?,
            bn: BatchNorm::new(format!("{name}.bn"), dim)?,
            sn: Spiking::new(format!("{name}.sn"), neuron, steps)?,
        })
    }

    fn forward(&self, x: &Tensor, extra: Option<&Tensor>, cx: &mut Ctx) -> Result<Tensor> {
        let mut h = self.bn.forward_last(&self.linear.forward(x, cx)?, cx)?;
        if let Some(e) = extra {
            h = h.add(e)?;
        }
        self.sn.forward(&h, cx)
    }

    fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.linear.collect(out);
        self.bn.collect(out);
        self.sn.collect(out);
    }
}

/// Dot-product spike-driven window attention with a relative position table.
#[derive(Debug, Clone)]
pub struct DotAttention {
    pub name: String,
    pub q: SpikeProjection,
    pub k: SpikeProjection,
    pub v: SpikeProjection,
    /// `[(2T_w−1)(2H_w−1)(2W_w−1), heads]`.
    pub rel_table: Tensor,
    pub proj: Linear,
    pub bn: BatchNorm,
    pub neuron: NeuronKind,
}

impl DotAttention {
    pub fn new(name: &str, dim: usize, window: &WindowConfig, neuron: NeuronKind, steps: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let rows = window.relative_offsets();
        let table = (0..rows * window.heads).map(|_| rng.random_range(-0.02f32..0.02)).collect();
        Ok(Self {
            name: name.to_string(),
            q: SpikeProjection::new(&format!("{name}.q"), dim, neuron, steps, rng)?,
            k: SpikeProjection::new(&format!("{name}.k"), dim, neuron, steps, rng)?,
            v: SpikeProjection::new(&format!("{name}.v"), dim, neuron, steps, rng)?,
            rel_table: Tensor::parameter(table, &[rows, window.heads])?,
            proj: Linear::new(format!("{name}.proj"), dim, dim, true, rng)?,
            bn: BatchNorm::new(format!("{name}.bn"), dim)?,
            neuron,
        })
    }

    /// Relative bias gathered to `[heads, N_t, N_t]`.
    pub fn bias(&self, plan: &WindowPlan) -> Result<Tensor> {
        let heads = plan.heads;
        let n_t = plan.tokens();
        let rel = plan.relative_index();
        let mut idx = Vec::with_capacity(heads * n_t * n_t);
        for h in 0..heads {
            idx.extend(rel.iter().map(|&r| (r * heads + h) as u32));
        }
        Ok(self.rel_table.gather(idx.into(), &[heads, n_t, n_t])?)
    }

    /// Spikes `[T·B, H, W, D]` in, membrane-domain `[T·B, H, W, D]` out.
    pub fn forward(&self, s: &Tensor, plan: &WindowPlan, cx: &mut Ctx) -> Result<Tensor> {
        check_tokens(s, plan)?;
        let shape = plan.window_shape();
        let part = plan.partition_index();
        let split = |t: Tensor| t.gather(part.clone(), &shape);
        let q = split(self.q.forward(s, None, cx)?)?;
        let k = split(self.k.forward(s, None, cx)?)?;
        let v = split(self.v.forward(s, None, cx)?)?;
        let [b, n_w, heads, n_t, d_h] = shape;
        let groups = b * n_w * heads;
        cx.record(&format!("{}.qk", self.name), LayerSpec::AttentionScores { groups, tokens: n_t, head_dim: d_h }, &q)?;
        let mask = match plan.attention_mask() {
            Some(m) => Some(Tensor::new(m, &[n_w, 1, n_t, n_t])?),
            None => None,
        };
        let bias = self.bias(plan)?;
        let scale = (self.neuron == NeuronKind::Lif).then(|| 1.0 / d_h as f32);
        if cx.probe().is_some() {
            // the value product is gated by the real-valued biased scores
            let scores = q
                .reshape(&[groups, n_t, d_h])?
                .matmul(&k.reshape(&[groups, n_t, d_h])?.transpose_last()?)?
                .reshape(&[b, n_w, heads, n_t, n_t])?
                .add(&bias)?;
            let scores = match &mask {
                Some(m) => scores.mul(m)?,
                None => scores,
            };
            cx.record(
                &format!("{}.av", self.name),
                LayerSpec::AttentionValues { groups, tokens: n_t, head_dim: d_h },
                &scores,
            )?;
        }
        let y = sdsa_dot(&q, &k, &v, Some(&bias), mask.as_ref(), scale)?;
        let y = y.gather(plan.reverse_index(), &plan.token_shape())?;
        self.bn.forward_last(&self.proj.forward(&y, cx)?, cx)
    }

    pub fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.q.collect(out);
        self.k.collect(out);
        self.v.collect(out);
        out.push((format!("{}.rel_table", self.name), self.rel_table.clone()));
        self.proj.collect(out);
        self.bn.collect(out);
    }
}

/// Linear-complexity spike-driven attention: a per-token mask from Q gates K.
#[derive(Debug, Clone)]
pub struct QkAttention {
    pub name: String,
    pub q: SpikeProjection,
    pub k: SpikeProjection,
    /// `[N_t, D]`, one vector per in-window position.
    pub pe: Tensor,
    pub sn_attn: Spiking,
    pub sn_out: Spiking,
    pub proj: Linear,
    pub bn: BatchNorm,
}

impl QkAttention {
    pub fn new(name: &str, dim: usize, window: &WindowConfig, neuron: NeuronKind, steps: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n_t = window.tokens();
        let pe = (0..n_t * dim).map(|_| rng.random_range(-0.02f32..0.02)).collect();
        Ok(Self {
            name: name.to_string(),
            q: SpikeProjection::new(&format!("{name}.q"), dim, neuron, steps, rng)?,
            k: SpikeProjection::new(&format!("{name}.k"), dim, neuron, steps, rng)?,
            pe: Tensor::parameter(pe, &[n_t, dim])?,
            sn_attn: Spiking::new(format!("{name}.sn_attn"), neuron, steps)?,
            sn_out: Spiking::new(format!("{name}.sn_out"), neuron, steps)?,
            proj: Linear::new(format!("{name}.proj"), dim, dim, true, rng)?,
            bn: BatchNorm::new(format!("{name}.bn"), dim)?,
        })
    }

    /// PE broadcast to every token of `[T·B, H, W, D]` by its window position.
    pub fn positional(&self, plan: &WindowPlan) -> Result<Tensor> {
        let d = plan.channels;
        let pos = plan.token_positions();
        let idx: Vec<u32> = pos.iter().flat_map(|&p| (0..d).map(move |c| (p * d + c) as u32)).collect();
        Ok(self.pe.gather(idx.into(), &plan.token_shape())?)
    }

    pub fn forward(&self, s: &Tensor, plan: &WindowPlan, cx: &mut Ctx) -> Result<Tensor> {
        check_tokens(s, plan)?;
        let pe = self.positional(plan)?;
        let q = self.q.forward(s, None, cx)?;
        let k = self.k.forward(s, Some(&pe), cx)?;
        let [tb, h, w, d] = plan.token_shape();
        let n = tb * h * w;
        let split = [n, plan.heads, plan.head_dim()];
        let (q3, k3) = (q.reshape(&split)?, k.reshape(&split)?);
        cx.record(&format!("{}.token_sum", self.name), LayerSpec::TokenSum { tokens: n, dim: d }, &q3)?;
        let (a, z) = qk_token_attention(&q3, &k3, &self.sn_attn, cx)?;
        if cx.probe().is_some() {
            let a_full = a.detach().mul(&Tensor::ones(&split))?;
            cx.record(&format!("{}.token_mask", self.name), LayerSpec::TokenMask { tokens: n, dim: d }, &a_full)?;
        }
        let z = self.sn_out.forward(&z.reshape(&plan.token_shape())?, cx)?;
        self.bn.forward_last(&self.proj.forward(&z, cx)?, cx)
    }

    pub fn collect(&self, out: &mut Vec<(String, Tensor)>) {
        self.q.collect(out);
        self.k.collect(out);
        out.push((format!("{}.pe", self.name), self.pe.clone()));
        self.sn_attn.collect(out);
        self.sn_out.collect(out);
        self.proj.collect(out);
        self.bn.collect(out);
    }
}
