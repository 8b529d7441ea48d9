//! Supervised training, the masked L1 flow loss, AdamW, and flow metrics.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdff_autograd::{no_grad, Tensor};

use crate::energy::Probe;
use crate::error::{Error, Result};
use crate::events::{stack_batch, SpikeInput};
use crate::flow::FlowField;
use crate::net::SdformerFlow;
use crate::nn::Ctx;
use crate::synth::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub weight_decay: f32,
    /// Learning rate halves every this many epochs.
    pub lr_step_epochs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Also supervise every coarser scale, upsampled to full resolution.
    pub intermediate_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-2,
            lr_step_epochs: 10,
            epochs: 1,
            batch: 4,
            seed: 0,
            max_steps: None,
            intermediate_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("train.weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.lr_step_epochs == 0 || self.batch == 0 {
            return Err(Error::Config("train.lr_step_epochs and train.batch must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let halvings = (epoch / self.lr_step_epochs).min(i32::MAX as usize) as i32;
        self.lr * 0.5f32.powi(halvings)
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(params: &[(String, Tensor)], lr: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "optimizer built for {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if self.lr == 0.0 {
            self.step += 1;
            return Ok(());
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (lr, wd, b1, b2, eps) = (self.lr, self.weight_decay, self.beta1, self.beta2, self.eps);
        for (i, (name, p)) in params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            if g.len() != self.m[i].len() {
                return Err(Error::Invalid(format!("{name}: size changed since optimizer creation")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.update_data(|w| {
                for j in 0..w.len() {
                    w[j] -= lr * wd * w[j];
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    let mh = m[j] / bc1;
                    let vh = v[j] / bc2;
                    w[j] -= lr * mh / (vh.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}

/// Mean over valid pixels of `|Δu| + |Δv|`. `pred`/`gt` are `[B, 2, H, W]`,
/// `mask` is `[B, 1, H, W]` with 1 at valid pixels.
pub fn l1_flow_loss(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let s = pred.shape();
    if s.len() != 4 || s[1] != 2 || gt.shape() != s || mask.shape() != [s[0], 1, s[2], s[3]] {
        return Err(Error::Invalid(format!(
            "loss shapes pred {s:?}, gt {:?}, mask {:?}",
            gt.shape(),
            mask.shape()
        )));
    }
    let n = mask.data().iter().filter(|&&m| m != 0.0).count();
    if n == 0 {
        return Err(Error::Invalid("no valid ground-truth pixels".into()));
    }
    let diff = pred.sub(&gt.detach())?.abs();
    Ok(diff.mul(&mask.detach())?.sum_all().mul_scalar(1.0 / n as f32))
}

/// Batched model input and targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: Tensor,
    pub gt: Tensor,
    pub mask: Tensor,
    pub size: usize,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        let inputs: Vec<&SpikeInput> = samples.iter().map(|s| &s.input).collect();
        let input = stack_batch(&inputs)?;
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let mut gt = Vec::with_capacity(samples.len() * 2 * h * w);
        let mut mask = Vec::with_capacity(samples.len() * h * w);
        for s in samples {
            if (s.gt.height, s.gt.width) != (h, w) {
                return Err(Error::Invalid(format!(
                    "ground truth {}x{} does not match input {w}x{h}",
                    s.gt.width, s.gt.height
                )));
            }
            for (i, &ok) in s.gt.valid.iter().enumerate() {
                gt.push(if ok { s.gt.u[i] } else { 0.0 });
            }
            for (i, &ok) in s.gt.valid.iter().enumerate() {
                gt.push(if ok { s.gt.v[i] } else { 0.0 });
            }
            mask.extend(s.gt.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }));
        }
        let b = samples.len();
        Ok(Self {
            input,
            gt: Tensor::new(gt, &[b, 2, h, w])?,
            mask: Tensor::new(mask, &[b, 1, h, w])?,
            size: b,
        })
    }
}

/// Training loss for one batch: the full-resolution prediction, plus each
/// coarser scale upsampled when `intermediate` is set.
pub fn batch_loss(model: &SdformerFlow, batch: &Batch, intermediate: bool) -> Result<Tensor> {
    let mut cx = Ctx::new(batch.size, model.config.time_steps);
    let out = model.forward(&batch.input, &mut cx)?;
    let mut loss = l1_flow_loss(&out.full, &batch.gt, &batch.mask)?;
    if intermediate {
        let (h, w) = (batch.gt.shape()[2], batch.gt.shape()[3]);
        for s in &out.scales[..out.scales.len() - 1] {
            let up = s.upsample_bilinear(h, w)?;
            loss = loss.add(&l1_flow_loss(&up, &batch.gt, &batch.mask)?)?;
        }
    }
    Ok(loss)
}

/// Spike rates of every spiking layer for one batch, in forward order.
pub fn spike_rates(model: &SdformerFlow, input: &Tensor, batch: usize) -> Result<Vec<(String, f64)>> {
    let _g = no_grad();
    let mut cx = Ctx::with_probe(batch, model.config.time_steps, Probe::new());
    model.forward(input, &mut cx)?;
    let probe = cx.take_probe().expect("probe attached");
    Ok(probe
        .spikes()
        .iter()
        .map(|s| (s.name.clone(), if s.elements == 0 { 0.0 } else { s.ones as f64 / s.elements as f64 }))
        .collect())
}

fn grad_norms(params: &[(String, Tensor)]) -> Vec<(String, f64)> {
    params
        .iter()
        .filter_map(|(n, t)| {
            t.grad()
                .map(|g| (n.clone(), g.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()))
        })
        .collect()
}

fn numeric_failure(model: &SdformerFlow, batch: &Batch, step: usize, what: &str) -> Error {
    let params = model.parameters();
    let mut msg = format!("{what} at step {step}\nspike rates:");
    match spike_rates(model, &batch.input, batch.size) {
        Ok(rates) => {
            for (n, r) in rates {
                msg.push_str(&format!("\n  {n} {r:.4}"));
            }
        }
        Err(e) => msg.push_str(&format!(" unavailable ({e})")),
    }
    msg.push_str("\ngrad norms:");
    for (n, g) in grad_norms(&params) {
        msg.push_str(&format!("\n  {n} {g:.4e}"));
    }
    Error::Numeric(msg)
}

/// Forward, backward and one optimizer step. Returns the loss.
pub fn train_step(model: &SdformerFlow, opt: &mut AdamW, batch: &Batch, intermediate: bool, step: usize) -> Result<f32> {
    let params = model.parameters();
    for (_, p) in &params {
        p.zero_grad();
    }
    let loss = batch_loss(model, batch, intermediate)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(numeric_failure(model, batch, step, &format!("loss is {value}")));
    }
    loss.backward()?;
    if let Some((name, _)) = params
        .iter()
        .find(|(_, p)| p.grad_ref().as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())))
    {
        return Err(numeric_failure(model, batch, step, &format!("non-finite gradient in {name}")));
    }
    opt.step(&params)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f32,
    pub steps: usize,
    pub mean_loss: f32,
    pub losses: Vec<f32>,
}

/// Runs the optimizer over state that persists across epochs.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub opt: AdamW,
    pub steps_done: usize,
}

impl Trainer {
    pub fn new(model: &SdformerFlow, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(&model.parameters(), cfg.lr, cfg.weight_decay);
        Ok(Self { cfg, opt, steps_done: 0 })
    }

    pub fn finished(&self) -> bool {
        self.cfg.max_steps.is_some_and(|m| self.steps_done >= m)
    }

    /// One pass over `data` in a seed- and epoch-determined order.
    pub fn train_epoch(&mut self, model: &SdformerFlow, data: &[Sample], epoch: usize) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Invalid("empty training set".into()));
        }
        let lr = self.cfg.lr_at(epoch);
        self.opt.lr = lr;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.batch) {
            if self.finished() {
                break;
            }
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = Batch::new(&samples)?;
            let loss = train_step(model, &mut self.opt, &batch, self.cfg.intermediate_loss, self.steps_done)?;
            self.steps_done += 1;
            losses.push(loss);
        }
        let mean_loss = if losses.is_empty() {
            f32::NAN
        } else {
            (losses.iter().map(|&l| l as f64).sum::<f64>() / losses.len() as f64) as f32
        };
        Ok(EpochStats {
            epoch,
            lr,
            steps: losses.len(),
            mean_loss,
            losses,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub aee: f64,
    pub outlier_pct: f64,
    pub aae: f64,
    pub pixels: usize,
}

impl Metrics {
    /// One structured record: `epoch=.. split=.. loss=.. aee=.. outlier_pct=.. aae=..`.
    pub fn log_line(&self, epoch: usize, split: &str, loss: Option<f32>) -> String {
        let loss = loss.map_or_else(|| "nan".to_string(), |l| format!("{l:.6}"));
        format!(
            "epoch={epoch} split={split} loss={loss} aee={:.6} outlier_pct={:.4} aae={:.4}",
            self.aee, self.outlier_pct, self.aae
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "aee={:.6} outlier_pct={:.4} aae={:.4} pixels={}",
            self.aee, self.outlier_pct, self.aae, self.pixels
        )
    }
}

/// Angle in degrees between `(u, v, 1)` vectors.
pub fn angular_error(pu: f64, pv: f64, gu: f64, gv: f64) -> f64 {
    let dot = pu * gu + pv * gv + 1.0;
    let n = ((pu * pu + pv * pv + 1.0) * (gu * gu + gv * gv + 1.0)).sqrt();
    (dot / n).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Pools every valid ground-truth pixel over all pairs.
pub fn flow_metrics(pairs: &[(FlowField, FlowField)]) -> Result<Metrics> {
    let (mut epe, mut out, mut ang, mut n) = (0.0f64, 0usize, 0.0f64, 0usize);
    for (pred, gt) in pairs {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::Invalid(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        for i in 0..gt.len() {
            if !gt.valid[i] {
                continue;
            }
            let (pu, pv) = (pred.u[i] as f64, pred.v[i] as f64);
            let (gu, gv) = (gt.u[i] as f64, gt.v[i] as f64);
            let e = ((pu - gu).powi(2) + (pv - gv).powi(2)).sqrt();
            epe += e;
            out += usize::from(e > 3.0);
            ang += angular_error(pu, pv, gu, gv);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("no valid ground-truth pixels to evaluate".into()));
    }
    Ok(Metrics {
        aee: epe / n as f64,
        outlier_pct: 100.0 * out as f64 / n as f64,
        aae: ang / n as f64,
        pixels: n,
    })
}

/// Full-resolution predictions in inference mode, one sample at a time.
pub fn predict(model: &SdformerFlow, data: &[Sample]) -> Result<Vec<FlowField>> {
    let _g = no_grad();
    data.iter()
        .map(|s| {
            let x = stack_batch(&[&s.input])?;
            let mut cx = Ctx::eval(1, model.config.time_steps);
            let out = model.forward(&x, &mut cx)?;
            let (h, w) = (out.full.shape()[2], out.full.shape()[3]);
            FlowField::from_tensor(&out.full.reshape(&[2, h, w])?)
        })
        .collect()
}

pub fn evaluate(model: &SdformerFlow, data: &[Sample]) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    let preds = predict(model, data)?;
    let pairs: Vec<(FlowField, FlowField)> = preds.into_iter().zip(data.iter().map(|s| s.gt.clone())).collect();
    flow_metrics(&pairs)
}

/// Metrics of the all-zero prediction.
pub fn zero_flow_metrics(data: &[Sample]) -> Result<Metrics> {
    let pairs: Vec<(FlowField, FlowField)> = data
        .iter()
        .map(|s| (FlowField::constant(s.gt.width, s.gt.height, 0.0, 0.0), s.gt.clone()))
        .collect();
    flow_metrics(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(d: Vec<f32>, s: &[usize]) -> Tensor {
        Tensor::new(d, s).unwrap()
    }

    #[test]
    fn loss_examples() {
        let pred = Tensor::parameter(vec![1.0, 0.0], &[1, 2, 1, 1]).unwrap();
        let gt = t(vec![0.0, 0.0], &[1, 2, 1, 1]);
        let mask = t(vec![1.0], &[1, 1, 1, 1]);
        let l = l1_flow_loss(&pred, &gt, &mask).unwrap();
        assert_eq!(l.item(), 1.0);
        l.backward().unwrap();
        assert_eq!(pred.grad().unwrap(), vec![1.0, 0.0]);
        assert_eq!(l1_flow_loss(&gt, &gt, &mask).unwrap().item(), 0.0);
        assert!(l1_flow_loss(&pred, &gt, &t(vec![0.0], &[1, 1, 1, 1])).is_err());
    }

    #[test]
    fn invalid_pixels_do_not_count() {
        let pred = t(vec![1.0, 5.0, 9.0, 0.0, 0.0, 0.0], &[1, 2, 1, 3]);
        let gt = t(vec![0.0; 6], &[1, 2, 1, 3]);
        let mask = t(vec![1.0, 0.0, 0.0], &[1, 1, 1, 3]);
        assert_eq!(l1_flow_loss(&pred, &gt, &mask).unwrap().item(), 1.0);
    }

    #[test]
    fn schedule_halves() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(9), 1e-3);
        assert_eq!(c.lr_at(10), 5e-4);
        assert_eq!(c.lr_at(25), 2.5e-4);
        assert!(TrainConfig { lr: 0.0, ..c.clone() }.validate().is_err());
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let p = Tensor::parameter(vec![1.0, -1.0], &[2]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut opt = AdamW::new(&params, 0.1, 0.0);
        p.square().sum_all().backward().unwrap();
        opt.step(&params).unwrap();
        let w = p.to_vec();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let p = Tensor::parameter(vec![2.0], &[1]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut opt = AdamW::new(&params, 0.1, 0.5);
        p.mul_scalar(0.0).sum_all().backward().unwrap();
        opt.step(&params).unwrap();
        assert!((p.item() - 2.0 * (1.0 - 0.05)).abs() < 1e-6);
    }

    #[test]
    fn metric_examples() {
        let one = |u, v| FlowField::constant(1, 1, u, v);
        let m = flow_metrics(&[(one(3.1, 0.0), one(0.0, 0.0))]).unwrap();
        assert!((m.aee - 3.1).abs() < 1e-6);
        assert_eq!(m.outlier_pct, 100.0);
        let m = flow_metrics(&[(one(1.0, 0.0), one(0.0, 1.0))]).unwrap();
        assert!((m.aae - 60.0).abs() < 1e-9);
        let m = flow_metrics(&[(one(2.0, -1.0), one(2.0, -1.0))]).unwrap();
        assert_eq!((m.aee, m.outlier_pct, m.aae), (0.0, 0.0, 0.0));
        assert!(flow_metrics(&[]).is_err());
    }

    #[test]
    fn metric_log_line_fields() {
        let m = Metrics {
            aee: 1.5,
            outlier_pct: 2.0,
            aae: 3.0,
            pixels: 4,
        };
        assert_eq!(
            m.log_line(3, "val", Some(0.25)),
            "epoch=3 split=val loss=0.250000 aee=1.500000 outlier_pct=2.0000 aae=3.0000"
        );
    }
}
