use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neurons::NeuronKind;
use crate::swin::WindowConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Dot,
    Qk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortcutKind {
    /// Membrane shortcut: residual added before the spiking activation.
    Ms,
    /// Spike-element-wise shortcut: residual added between spike tensors.
    Sew,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, $($variant:path => $text:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text,)+ })
            }
        }
    };
}

text_enum!(AttentionKind, "attention", AttentionKind::Dot => "dot", AttentionKind::Qk => "qk");
text_enum!(ShortcutKind, "shortcut", ShortcutKind::Ms => "ms", ShortcutKind::Sew => "sew");
text_enum!(NeuronKind, "neuron", NeuronKind::Lif => "lif", NeuronKind::Psn => "psn");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub time_steps: usize,
    /// Channels after the feature generator and patch embedding.
    pub base_dim: usize,
    pub patch: usize,
    pub encoders: usize,
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    /// `(T_w, H_w, W_w)`.
    pub window: [usize; 3],
    pub shift: Option<[usize; 3]>,
    pub mlp_ratio: usize,
    pub neuron: NeuronKind,
    pub attention: AttentionKind,
    pub shortcut: ShortcutKind,
    pub use_spe_shortcut: bool,
}

impl Default for ModelConfig {
    /// Full-size four-encoder network.
    fn default() -> Self {
        Self {
            in_channels: 4,
            time_steps: 5,
            base_dim: 96,
            patch: 2,
            encoders: 4,
            depths: vec![2, 2, 6, 2],
            heads: vec![3, 6, 12, 24],
            window: [2, 9, 9],
            shift: None,
            mlp_ratio: 4,
            neuron: NeuronKind::Lif,
            attention: AttentionKind::Dot,
            shortcut: ShortcutKind::Ms,
            use_spe_shortcut: true,
        }
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: `{s}` is not a comma-separated integer list")))
        })
        .collect()
}

fn parse_triple(key: &str, s: &str) -> Result<[usize; 3]> {
    let v = parse_list(key, s)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected three integers, got `{s}`")))
}

pub(crate) fn parse_num<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{s}`")))
}

pub(crate) fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got `{other}`"))),
    }
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = &[
        "in_channels",
        "time_steps",
        "base_dim",
        "patch",
        "encoders",
        "depths",
        "heads",
        "window",
        "shift",
        "mlp_ratio",
        "neuron",
        "attention",
        "shortcut",
        "spe_shortcut",
    ];

    /// Two-stage desk-scale network: QK attention with PSN neurons.
    pub fn tiny() -> Self {
        Self {
            in_channels: 4,
            time_steps: 5,
            base_dim: 8,
            patch: 2,
            encoders: 2,
            depths: vec![2, 2],
            heads: vec![1, 2],
            window: [2, 4, 4],
            shift: None,
            mlp_ratio: 4,
            neuron: NeuronKind::Psn,
            attention: AttentionKind::Qk,
            shortcut: ShortcutKind::Ms,
            use_spe_shortcut: true,
        }
    }

    /// Channel width of every encoder stage.
    pub fn dims(&self) -> Vec<usize> {
        (0..self.encoders).map(|l| self.base_dim << l).collect()
    }

    pub fn window_config(&self, stage: usize) -> WindowConfig {
        WindowConfig {
            extent: self.window,
            shift: self.shift,
            heads: self.heads[stage],
        }
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        2 * self.patch * (1 << (self.encoders.max(1) - 1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.time_steps == 0 || self.patch == 0 || self.mlp_ratio == 0 {
            return bad("in_channels, time_steps, patch and mlp_ratio must be positive".into());
        }
        if self.encoders == 0 || self.encoders > 6 {
            return bad(format!("encoders must be in 1..=6, got {}", self.encoders));
        }
        if self.depths.len() != self.encoders || self.heads.len() != self.encoders {
            return bad(format!(
                "{} encoders need {0} depths and heads, got {:?} / {:?}",
                self.encoders, self.depths, self.heads
            ));
        }
        if self.base_dim < 2 || self.base_dim % 2 != 0 {
            return bad(format!("base_dim must be even, got {}", self.base_dim));
        }
        for (l, (&d, &h)) in self.depths.iter().zip(&self.heads).enumerate() {
            if d == 0 || d % 2 != 0 {
                return bad(format!("stage {l} depth {d} must be even and positive"));
            }
            let dim = self.base_dim << l;
            if h == 0 || dim % h != 0 {
                return bad(format!("stage {l} dim {dim} not divisible by {h} heads"));
            }
        }
        self.window_config(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = self.spatial_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::Invalid(format!(
                "input {height}x{width} must be a positive multiple of {m} in both axes"
            )));
        }
        Ok(())
    }

    /// Canonical `model.key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("model.{k}={v}\n"));
        put("in_channels", self.in_channels.to_string());
        put("time_steps", self.time_steps.to_string());
        put("base_dim", self.base_dim.to_string());
        put("patch", self.patch.to_string());
        put("encoders", self.encoders.to_string());
        put("depths", list(&self.depths));
        put("heads", list(&self.heads));
        put("window", list(&self.window));
        if let Some(sh) = self.shift {
            put("shift", list(&sh));
        }
        put("mlp_ratio", self.mlp_ratio.to_string());
        put("neuron", self.neuron.to_string());
        put("attention", self.attention.to_string());
        put("shortcut", self.shortcut.to_string());
        put("spe_shortcut", self.use_spe_shortcut.to_string());
        s
    }

    /// Applies `key → value` overrides (keys without the `model.` prefix).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key;
        match key {
            "in_channels" => self.in_channels = parse_num(k, value)?,
            "time_steps" => self.time_steps = parse_num(k, value)?,
            "base_dim" => self.base_dim = parse_num(k, value)?,
            "patch" => self.patch = parse_num(k, value)?,
            "encoders" => self.encoders = parse_num(k, value)?,
            "depths" => self.depths = parse_list(k, value)?,
            "heads" => self.heads = parse_list(k, value)?,
            "window" => self.window = parse_triple(k, value)?,
            "shift" => self.shift = Some(parse_triple(k, value)?),
            "mlp_ratio" => self.mlp_ratio = parse_num(k, value)?,
            "neuron" => self.neuron = value.trim().parse()?,
            "attention" => self.attention = value.trim().parse()?,
            "shortcut" => self.shortcut = value.trim().parse()?,
            "spe_shortcut" => self.use_spe_shortcut = parse_bool(k, value)?,
            other => return Err(Error::Config(format!("unknown key `model.{other}`"))),
        }
        Ok(())
    }

    /// Parses the text produced by [`ModelConfig::to_kv`], starting from
    /// the full-size defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let key = k.trim().strip_prefix("model.").ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("`{}` is not a model key", k.trim()),
            })?;
            if seen.insert(key.to_string(), ()).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key `model.{key}`"),
                });
            }
            cfg.apply(key, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        for mut cfg in [ModelConfig::default(), ModelConfig::tiny()] {
            assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
            cfg.shift = Some([1, 2, 2]);
            cfg.shortcut = ShortcutKind::Sew;
            assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_unknown_and_inconsistent() {
        assert!(ModelConfig::from_kv("model.colour=red").is_err());
        assert!(ModelConfig::from_kv("model.encoders=3").is_err());
        assert!(ModelConfig::from_kv("model.neuron=glif").is_err());
        assert!(ModelConfig::from_kv("model.patch=2\nmodel.patch=2").is_err());
        let mut cfg = ModelConfig::tiny();
        cfg.depths = vec![3, 2];
        assert!(cfg.validate().is_err());
        cfg.depths = vec![2, 2];
        cfg.heads = vec![3, 2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ModelConfig::tiny();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.base_dim = 16;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn input_multiple() {
        let cfg = ModelConfig::tiny();
        assert_eq!(cfg.spatial_multiple(), 8);
        assert!(cfg.check_input(32, 32).is_ok());
        assert!(cfg.check_input(36, 32).is_err());
        assert_eq!(ModelConfig::default().spatial_multiple(), 32);
    }
}
