use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sdff_core::checkpoint::Checkpoint;
use sdff_core::config::RunConfig;
use sdff_core::energy::{estimate_energy, EnergyMode};
use sdff_core::flow::FlowField;
use sdff_core::net::{ModelConfig, SdformerFlow};
use sdff_core::synth::{generate_scenes, load_dataset, read_manifest, scene_to_sample, write_dataset, Sample};
use sdff_core::train::{evaluate, predict, zero_flow_metrics, Trainer};

use crate::viz::flow_to_image;
use crate::{EnergyArgs, EvalArgs, SynthArgs, TrainArgs, VizArgs};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub const THREADS_ENV: &str = "SDFF_THREADS";

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    use sdff_core::Error as E;
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<E>() {
        Some(E::Config(_) | E::Invalid(_)) => EXIT_USAGE,
        Some(E::Numeric(_)) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

pub struct Global {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

impl Global {
    fn load_config(&self, overrides: &[(&str, Option<String>)]) -> Result<(RunConfig, bool)> {
        let (mut cfg, has_model) = match &self.config {
            Some(p) => {
                require_file(p)?;
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let cfg = RunConfig::parse(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                let has_model = text.lines().any(|l| l.trim_start().starts_with("model."));
                (cfg, has_model)
            }
            None => (RunConfig::default(), false),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.apply(k, v).with_context(|| format!("--{}", k.split_once('.').map_or(*k, |p| p.1)))?;
            }
        }
        cfg.validate()?;
        Ok((cfg, has_model))
    }

    fn out_dir(&self, cfg: &RunConfig, require_empty: bool) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.data.out_dir.clone())
            .ok_or_else(|| usage("an output directory is required (--out or data.out_dir)"))?;
        if dir.exists() {
            if !dir.is_dir() {
                return Err(usage(format!("{} exists and is not a directory", dir.display())));
            }
            let non_empty = fs::read_dir(&dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .next()
                .is_some();
            if require_empty && non_empty && !self.force {
                return Err(usage(format!("{} is not empty; pass --force to write into it", dir.display())));
            }
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let probe = dir.join(".sdff-write-test");
        fs::write(&probe, b"").with_context(|| format!("{} is not writable", dir.display()))?;
        fs::remove_file(&probe).ok();
        Ok(dir)
    }
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path_opt(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(usage(format!("{} does not exist or is not a file", p.display())));
    }
    Ok(())
}

fn require_dataset(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(usage(format!("dataset directory {} does not exist", dir.display())));
    }
    read_manifest(dir).with_context(|| format!("dataset {}", dir.display()))?;
    Ok(())
}

/// Worker-thread cap from the environment, 1 when unset.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(usage(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
        },
    }
}

/// Loads several datasets, at most `threads` at a time.
fn load_datasets(dirs: &[&Path], bins: usize, blocks: usize, threads: usize) -> Result<Vec<Vec<Sample>>> {
    let mut out = Vec::with_capacity(dirs.len());
    for group in dirs.chunks(threads.max(1)) {
        let loaded: Vec<sdff_core::Result<Vec<Sample>>> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|d| s.spawn(move || load_dataset(d, bins, blocks)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("loader thread panicked")).collect()
        });
        for (dir, r) in group.iter().zip(loaded) {
            out.push(r.with_context(|| format!("loading {}", dir.display()))?);
        }
    }
    Ok(out)
}

fn synth_samples(cfg: &RunConfig, count: usize, seed: u64) -> Result<Vec<Sample>> {
    let d = &cfg.data;
    generate_scenes(&d.scene, count, seed, d.flow, (d.flow_min, d.flow_max))?
        .iter()
        .map(|s| Ok(scene_to_sample(s, d.scene.duration_us, d.bins, d.blocks)?))
        .collect()
}

/// Voxelization implied by a model's input shape.
fn model_binning(m: &ModelConfig) -> Result<(usize, usize)> {
    if m.in_channels % 2 != 0 {
        return Err(usage(format!("model.in_channels={} must be even", m.in_channels)));
    }
    let blocks = m.in_channels / 2;
    Ok((m.time_steps * blocks, blocks))
}

fn open_checkpoint(global: &Global, flag: &Option<PathBuf>, overrides: &[(&str, Option<String>)]) -> Result<(RunConfig, SdformerFlow)> {
    let (mut cfg, has_model) = global.load_config(overrides)?;
    let path = flag
        .clone()
        .or_else(|| cfg.data.checkpoint.clone())
        .ok_or_else(|| usage("a checkpoint is required (--checkpoint or data.checkpoint)"))?;
    require_file(&path)?;
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if has_model && ck.config != cfg.model {
        return Err(usage(format!(
            "checkpoint {} has model config {} but the run config specifies {}",
            path.display(),
            ck.config.fingerprint(),
            cfg.model.fingerprint()
        )));
    }
    cfg.model = ck.config.clone();
    let (bins, blocks) = model_binning(&cfg.model)?;
    cfg.data.bins = bins;
    cfg.data.blocks = blocks;
    let model = ck.into_model()?;
    Ok((cfg, model))
}

/// Dataset from `dir`, or `count` in-memory scenes drawn from the seed.
fn eval_samples(cfg: &RunConfig, dir: Option<&Path>, count: usize) -> Result<Vec<Sample>> {
    match dir {
        Some(d) => Ok(load_datasets(&[d], cfg.data.bins, cfg.data.blocks, 1)?.remove(0)),
        None => synth_samples(cfg, count, cfg.train.seed),
    }
}

pub fn synth(global: &Global, a: &SynthArgs) -> Result<()> {
    let (cfg, _) = global.load_config(&[
        ("data.scenes", opt(&a.scenes)),
        ("data.flow", a.flow.clone()),
        ("data.size", opt(&a.size)),
        ("data.pattern", a.pattern.clone()),
        ("data.dots", opt(&a.dots)),
        ("data.duration_us", opt(&a.duration_us)),
    ])?;
    if cfg.data.scenes == 0 {
        return Err(usage("data.scenes must be positive"));
    }
    let dir = global.out_dir(&cfg, true)?;
    let d = &cfg.data;
    let scenes = generate_scenes(&d.scene, d.scenes, cfg.train.seed, d.flow, (d.flow_min, d.flow_max))?;
    write_dataset(&dir, &d.scene, &scenes)?;
    let events: usize = scenes.iter().map(|s| s.events.len()).sum();
    println!("wrote {} scenes ({events} events) to {}", scenes.len(), dir.display());
    Ok(())
}

pub fn train(global: &Global, a: &TrainArgs) -> Result<()> {
    let (cfg, _) = global.load_config(&[
        ("data.train_dir", path_opt(&a.train_dir)),
        ("data.val_dir", path_opt(&a.val_dir)),
        ("train.epochs", opt(&a.epochs)),
        ("train.max_steps", opt(&a.max_steps)),
        ("train.batch", opt(&a.batch)),
        ("train.lr", opt(&a.lr)),
        ("data.scenes", opt(&a.scenes)),
    ])?;
    let threads = thread_cap()?;
    let d = &cfg.data;
    for dir in [&d.train_dir, &d.val_dir].into_iter().flatten() {
        require_dataset(dir)?;
    }
    let out = global.out_dir(&cfg, true)?;

    let (train, val) = match (&d.train_dir, &d.val_dir) {
        (Some(t), Some(v)) => {
            let mut sets = load_datasets(&[t, v], d.bins, d.blocks, threads)?;
            let val = sets.pop();
            (sets.pop().unwrap_or_default(), val)
        }
        (Some(t), None) => (load_datasets(&[t], d.bins, d.blocks, threads)?.remove(0), None),
        (None, v) => {
            let seed = cfg.train.seed;
            let train = synth_samples(&cfg, d.scenes, seed)?;
            let val = match v {
                Some(v) => load_datasets(&[v], d.bins, d.blocks, threads)?.remove(0),
                None => synth_samples(&cfg, (d.scenes / 8).max(4), seed.wrapping_add(0x5eed))?,
            };
            (train, Some(val))
        }
    };

    fs::write(out.join("config.txt"), cfg.to_text()).context("writing config.txt")?;
    let log_path = out.join("metrics.log");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let model = SdformerFlow::new(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(&model, cfg.train.clone())?;
    println!(
        "training {} params on {} samples, model {}",
        model.param_count(),
        train.len(),
        cfg.model.fingerprint()
    );
    if let Some(v) = &val {
        let line = zero_flow_metrics(v)?.log_line(0, "zero_flow", None);
        writeln!(log, "{line}")?;
    }
    for epoch in 0..cfg.train.epochs {
        if trainer.finished() {
            break;
        }
        let stats = trainer.train_epoch(&model, &train, epoch)?;
        let line = format!(
            "epoch={epoch} split=train loss={:.6} lr={:e} steps={} total_steps={}",
            stats.mean_loss, stats.lr, stats.steps, trainer.steps_done
        );
        println!("{line}");
        writeln!(log, "{line}")?;
        if let Some(v) = &val {
            let line = evaluate(&model, v)?.log_line(epoch, "val", None);
            println!("{line}");
            writeln!(log, "{line}")?;
        }
        Checkpoint::from_model(&model).save(&out.join("last.ckpt"))?;
    }
    let final_path = out.join("model.ckpt");
    Checkpoint::from_model(&model).save(&final_path)?;
    println!("wrote {}", final_path.display());
    Ok(())
}

pub fn eval(global: &Global, a: &EvalArgs) -> Result<()> {
    let (cfg, model) = open_checkpoint(global, &a.checkpoint, &[("data.scenes", opt(&a.scenes))])?;
    let dir = a.data.clone().or_else(|| cfg.data.val_dir.clone());
    if let Some(d) = &dir {
        require_dataset(d)?;
    }
    let samples = eval_samples(&cfg, dir.as_deref(), cfg.data.scenes)?;
    let m = evaluate(&model, &samples)?;
    let zero = zero_flow_metrics(&samples)?;
    println!("{m}");
    println!("zero_flow {zero}");
    println!("aee_ratio={:.4}", m.aee / zero.aee);
    Ok(())
}

pub fn energy(global: &Global, a: &EnergyArgs) -> Result<()> {
    let modes: Vec<EnergyMode> = match a.mode.as_str() {
        "both" => vec![EnergyMode::Snn, EnergyMode::Ann],
        m => vec![m.parse().map_err(|e: sdff_core::Error| usage(e.to_string()))?],
    };
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let (cfg, model) = open_checkpoint(global, &a.checkpoint, &[])?;
    let dir = a.data.clone().or_else(|| cfg.data.val_dir.clone());
    if let Some(d) = &dir {
        require_dataset(d)?;
    }
    let out = global.out_dir(&cfg, false)?;
    let mut samples = eval_samples(&cfg, dir.as_deref(), a.samples)?;
    samples.truncate(a.samples);
    let inputs: Vec<_> = samples.into_iter().map(|s| s.input).collect();
    let mut totals = Vec::new();
    for mode in modes {
        let report = estimate_energy(&model, &inputs, mode)?;
        let path = out.join(format!("energy_{mode}.txt"));
        fs::write(&path, report.to_text()).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", report.summary_line());
        totals.push((mode, report.total_j, report.weighted_spike_rate() * cfg.model.time_steps as f64));
    }
    if let [(_, snn, rs_t), (_, ann, _)] = totals[..] {
        println!("snn_over_ann={:.4} rate_times_steps={rs_t:.4}", snn / ann);
    }
    Ok(())
}

pub fn viz(global: &Global, a: &VizArgs) -> Result<()> {
    let (cfg, _) = global.load_config(&[])?;
    if a.flo.is_empty() && a.checkpoint.is_none() && cfg.data.checkpoint.is_none() {
        return Err(usage("viz needs --flo files or a checkpoint"));
    }
    for f in &a.flo {
        require_file(f)?;
    }
    let mut images: Vec<(String, FlowField)> = Vec::new();
    for f in &a.flo {
        let stem = f.file_stem().map_or_else(|| "flow".into(), |s| s.to_string_lossy().into_owned());
        images.push((stem, FlowField::read_flo(f).with_context(|| format!("reading {}", f.display()))?));
    }
    if a.flo.is_empty() {
        let (cfg, model) = open_checkpoint(global, &a.checkpoint, &[])?;
        let dir = a.data.clone().or_else(|| cfg.data.val_dir.clone());
        if let Some(d) = &dir {
            require_dataset(d)?;
        }
        let mut samples = eval_samples(&cfg, dir.as_deref(), a.limit)?;
        samples.truncate(a.limit);
        for (i, (pred, s)) in predict(&model, &samples)?.into_iter().zip(&samples).enumerate() {
            images.push((format!("pred_{i:04}"), pred));
            images.push((format!("gt_{i:04}"), s.gt.clone()));
        }
    }
    let out = global.out_dir(&cfg, false)?;
    for (name, flow) in &images {
        let path = out.join(format!("{name}.png"));
        flow_to_image(flow).save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} images to {}", images.len(), out.display());
    Ok(())
}
