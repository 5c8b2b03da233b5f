//! `key = value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::{LossKind, LossWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Epochs for stages 1, 2 and 3.
    pub epochs: [usize; 3],
    pub lr: f64,
    pub clip: f64,
    /// Clip each loss's gradient separately instead of the summed gradient.
    pub clip_per_loss: bool,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// Losses removed from every stage (ablations).
    pub disabled: Vec<LossKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: [30, 30, 20],
            lr: 0.05,
            clip: 5.0,
            clip_per_loss: true,
            batch_size: 1,
            weights: LossWeights::default(),
            disabled: Vec::new(),
        }
    }
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl TrainConfig {
    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    pub fn check(&self) -> Result<()> {
        self.model.check()?;
        if self.epochs.iter().all(|&e| e == 0) {
            return Err(Error::Config("at least one stage needs epochs".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "dim" => m.dim = value(key, v)?,
            "layers" => m.layers = value(key, v)?,
            "z_dim" => m.z_dim = value(key, v)?,
            "tri_dim" => m.tri_dim = if v == "none" { None } else { Some(value(key, v)?) },
            "tri_hidden" => m.tri_hidden = value(key, v)?,
            "attention" => m.attention = value(key, v)?,
            "alpha" => m.alpha = value(key, v)?,
            "tau" => m.tau = value(key, v)?,
            "max_len" => m.max_len = value(key, v)?,
            "max_pairs" => m.max_pairs = value(key, v)?,
            "vsh_passes" => m.vsh_passes = value(key, v)?,
            "seed" => m.seed = value(key, v)?,
            "epochs_stage1" => self.epochs[0] = value(key, v)?,
            "epochs_stage2" => self.epochs[1] = value(key, v)?,
            "epochs_stage3" => self.epochs[2] = value(key, v)?,
            "lr" => self.lr = value(key, v)?,
            "clip" => self.clip = value(key, v)?,
            "clip_per_loss" => self.clip_per_loss = value(key, v)?,
            "batch_size" => self.batch_size = value(key, v)?,
            "disable" => {
                self.disabled = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| LossKind::parse(s).ok_or_else(|| Error::Config(format!("unknown loss {s:?} in disable"))))
                    .collect::<Result<_>>()?;
            }
            _ => {
                let kind = key
                    .strip_prefix("weight_")
                    .and_then(LossKind::parse)
                    .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
                self.weights.0.insert(kind, value(key, v)?);
            }
        }
        Ok(())
    }

    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dim", m.dim.to_string());
        put("layers", m.layers.to_string());
        put("z_dim", m.z_dim.to_string());
        put("tri_dim", m.tri_dim.map_or("none".into(), |t| t.to_string()));
        put("tri_hidden", m.tri_hidden.to_string());
        put("attention", m.attention.to_string());
        put("alpha", m.alpha.to_string());
        put("tau", m.tau.to_string());
        put("max_len", m.max_len.to_string());
        put("max_pairs", m.max_pairs.to_string());
        put("vsh_passes", m.vsh_passes.to_string());
        put("seed", m.seed.to_string());
        for (i, e) in self.epochs.iter().enumerate() {
            put(&format!("epochs_stage{}", i + 1), e.to_string());
        }
        put("lr", self.lr.to_string());
        put("clip", self.clip.to_string());
        put("clip_per_loss", self.clip_per_loss.to_string());
        put("batch_size", self.batch_size.to_string());
        for k in LossKind::ALL {
            put(&format!("weight_{k}"), self.weights.get(k).to_string());
        }
        let disabled: Vec<&str> = self.disabled.iter().map(|k| k.name()).collect();
        put("disable", disabled.join(","));
        s
    }

    /// Losses active in `stage` after removing disabled ones.
    pub fn active(&self, stage: u8) -> Result<Vec<LossKind>> {
        let mut a = crate::objectives::training_schedule(stage)?;
        a.retain(|k| !self.disabled.contains(k));
        Ok(a)
    }
}
