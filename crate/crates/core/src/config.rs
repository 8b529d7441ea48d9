//! Flat `section.key=value` run configuration for the command-line tool.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::net::{parse_bool, parse_num, ModelConfig};
use crate::synth::{Pattern, SceneConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub bins: usize,
    pub blocks: usize,
    pub scenes: usize,
    /// Fixed flow for every synthesized scene.
    pub flow: Option<(f32, f32)>,
    pub flow_min: f32,
    pub flow_max: f32,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            val_dir: None,
            checkpoint: None,
            out_dir: None,
            bins: 10,
            blocks: 2,
            scenes: 64,
            flow: None,
            flow_min: 1.0,
            flow_max: 3.0,
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            train: TrainConfig {
                batch: 8,
                epochs: 30,
                ..TrainConfig::default()
            },
            data: DataConfig::default(),
        }
    }
}

pub fn parse_pair(key: &str, s: &str) -> Result<(f32, f32)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected `u,v`, got `{s}`")))?;
    Ok((parse_num(key, a)?, parse_num(key, b)?))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected key=value, got `{line}`")))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(perr(format!("duplicate key `{k}`")));
            }
            cfg.apply(k, v.trim()).map_err(|e| perr(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one `section.key`; unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("`{key}` has no section prefix")))?;
        match section {
            "model" => {
                if !ModelConfig::KEYS.contains(&name) {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
                self.model.apply(name, value)
            }
            "train" => self.apply_train(key, name, value),
            "data" => self.apply_data(key, name, value),
            _ => Err(Error::Config(format!("unknown section in `{key}`"))),
        }
    }

    fn apply_train(&mut self, key: &str, name: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match name {
            "lr" => t.lr = parse_num(key, v)?,
            "weight_decay" => t.weight_decay = parse_num(key, v)?,
            "lr_step_epochs" => t.lr_step_epochs = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "batch" => t.batch = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "max_steps" => t.max_steps = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "intermediate_loss" => t.intermediate_loss = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn apply_data(&mut self, key: &str, name: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let path = || -> Result<Option<PathBuf>> {
            if v.is_empty() {
                return Err(Error::Config(format!("{key}: empty path")));
            }
            Ok(Some(PathBuf::from(v)))
        };
        match name {
            "train_dir" => d.train_dir = path()?,
            "val_dir" => d.val_dir = path()?,
            "checkpoint" => d.checkpoint = path()?,
            "out_dir" => d.out_dir = path()?,
            "bins" => d.bins = parse_num(key, v)?,
            "blocks" => d.blocks = parse_num(key, v)?,
            "scenes" => d.scenes = parse_num(key, v)?,
            "flow" => d.flow = if v == "random" { None } else { Some(parse_pair(key, v)?) },
            "flow_min" => d.flow_min = parse_num(key, v)?,
            "flow_max" => d.flow_max = parse_num(key, v)?,
            "size" => d.scene.size = parse_num(key, v)?,
            "duration_us" => d.scene.duration_us = parse_num(key, v)?,
            "contrast" => d.scene.contrast = parse_num(key, v)?,
            "dots" => d.scene.dots = parse_num(key, v)?,
            "pattern" => {
                d.scene.pattern = match v {
                    "dots" => Pattern::Dots,
                    "bars" => Pattern::Bars,
                    _ => return Err(Error::Config(format!("{key}: expected dots or bars, got `{v}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.blocks == 0 || d.bins == 0 || d.bins % d.blocks != 0 {
            return Err(Error::Config(format!(
                "data.bins={} must be a positive multiple of data.blocks={}",
                d.bins, d.blocks
            )));
        }
        if d.bins / d.blocks != self.model.time_steps || 2 * d.blocks != self.model.in_channels {
            return Err(Error::Config(format!(
                "data.bins={} and data.blocks={} give T={} C={}, model expects T={} C={}",
                d.bins,
                d.blocks,
                d.bins / d.blocks,
                2 * d.blocks,
                self.model.time_steps,
                self.model.in_channels
            )));
        }
        if !(d.flow_min >= 0.0 && d.flow_max >= d.flow_min && d.flow_max.is_finite()) {
            return Err(Error::Config(format!(
                "data.flow_min={} and data.flow_max={} must satisfy 0 <= min <= max",
                d.flow_min, d.flow_max
            )));
        }
        if d.flow.is_some_and(|(u, v)| !(u.is_finite() && v.is_finite())) {
            return Err(Error::Config("data.flow must be finite".into()));
        }
        if d.scene.size == 0 || d.scene.duration_us == 0 || !(d.scene.contrast > 0.0 && d.scene.contrast.is_finite()) {
            return Err(Error::Config("data.size, data.duration_us and data.contrast must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text that parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = self.model.to_kv();
        let t = &self.train;
        let d = &self.data;
        let _ = writeln!(s, "train.lr={}", t.lr);
        let _ = writeln!(s, "train.weight_decay={}", t.weight_decay);
        let _ = writeln!(s, "train.lr_step_epochs={}", t.lr_step_epochs);
        let _ = writeln!(s, "train.epochs={}", t.epochs);
        let _ = writeln!(s, "train.batch={}", t.batch);
        let _ = writeln!(s, "train.seed={}", t.seed);
        match t.max_steps {
            Some(m) => {
                let _ = writeln!(s, "train.max_steps={m}");
            }
            None => s.push_str("train.max_steps=none\n"),
        }
        let _ = writeln!(s, "train.intermediate_loss={}", t.intermediate_loss);
        for (k, p) in [
            ("train_dir", &d.train_dir),
            ("val_dir", &d.val_dir),
            ("checkpoint", &d.checkpoint),
            ("out_dir", &d.out_dir),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s, "data.{k}={}", p.display());
            }
        }
        let _ = writeln!(s, "data.bins={}", d.bins);
        let _ = writeln!(s, "data.blocks={}", d.blocks);
        let _ = writeln!(s, "data.scenes={}", d.scenes);
        match d.flow {
            Some((u, v)) => {
                let _ = writeln!(s, "data.flow={u},{v}");
            }
            None => s.push_str("data.flow=random\n"),
        }
        let _ = writeln!(s, "data.flow_min={}", d.flow_min);
        let _ = writeln!(s, "data.flow_max={}", d.flow_max);
        let _ = writeln!(s, "data.size={}", d.scene.size);
        let _ = writeln!(s, "data.duration_us={}", d.scene.duration_us);
        let _ = writeln!(s, "data.contrast={}", d.scene.contrast);
        let _ = writeln!(s, "data.dots={}", d.scene.dots);
        let pattern = match d.scene.pattern {
            Pattern::Dots => "dots",
            Pattern::Bars => "bars",
        };
        let _ = writeln!(s, "data.pattern={pattern}");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let c = RunConfig::parse("# run\nmodel.base_dim=16\ntrain.lr=0.002\ndata.flow=2,0\ndata.train_dir=/tmp/x\n").unwrap();
        assert_eq!(c.model.base_dim, 16);
        assert_eq!(c.train.lr, 0.002);
        assert_eq!(c.data.flow, Some((2.0, 0.0)));
        assert_eq!(c.data.train_dir, Some(PathBuf::from("/tmp/x")));
        for bad in ["train.lrr=1", "model.nope=1", "foo.bar=1", "nodot=1", "train.lr", "train.lr=1\ntrain.lr=2"] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn text_roundtrip() {
        let mut c = RunConfig::default();
        c.apply("data.checkpoint", "/tmp/m.ckpt").unwrap();
        c.apply("train.max_steps", "10").unwrap();
        c.apply("data.pattern", "bars").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn data_must_match_model_input() {
        assert!(RunConfig::parse("data.bins=12").is_err());
        assert!(RunConfig::parse("data.bins=15\ndata.blocks=3").is_err());
        assert!(RunConfig::parse("data.bins=15\ndata.blocks=3\nmodel.in_channels=6\n").is_ok());
        assert!(RunConfig::parse("train.lr=0").is_err());
        assert!(RunConfig::parse("data.flow_min=3\ndata.flow_max=1").is_err());
    }
}
