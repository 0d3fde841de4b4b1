//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::encoders::SpeechPool;
use crate::error::{KomeiError, Result};
use crate::fusion::{AlignmentConfig, Reduction, StackFlags};
use crate::numerics::{AdamWConfig, Schedule};
use crate::prediction::LossWeights;

/// Every tunable of a run. Defaults follow the reference fine-tuning setup
/// (batch 128, lr 5e-5, 1000 warmup steps) at desk-scale dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub d_g: usize,
    pub d_t: usize,
    pub d_v: usize,
    pub d_s: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub tau: f64,
    pub reduction: Reduction,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub an_eps: f64,
    pub share_an: bool,
    pub text: bool,
    pub image: bool,
    pub speech: bool,
    pub cfa: bool,
    pub ca: bool,
    pub gu: bool,
    pub sa: bool,
    pub speech_pool: SpeechPool,
    pub image_count: usize,
    pub toy_fallback: bool,
    pub split_ratio: f64,
    pub paths: DataPaths,
}

/// File locations. Not part of the config hash.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub image_table: Option<PathBuf>,
    pub speech_table: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_g: 64,
            d_t: 64,
            d_v: 64,
            d_s: 64,
            batch_size: 128,
            lr: 5e-5,
            warmup_steps: 1000,
            epochs: 30,
            patience: 5,
            seed: 0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            tau: 0.07,
            reduction: Reduction::Mean,
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.1,
            an_eps: 1e-5,
            share_an: true,
            text: true,
            image: true,
            speech: true,
            cfa: true,
            ca: true,
            gu: true,
            sa: true,
            speech_pool: SpeechPool::Mean,
            image_count: 4,
            toy_fallback: false,
            split_ratio: 0.8,
            paths: DataPaths::default(),
        }
    }
}

const PATH_KEYS: [&str; 6] = ["train", "val", "test", "vocab", "image_table", "speech_table"];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| KomeiError::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(KomeiError::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn reduction_str(r: Reduction) -> &'static str {
    match r {
        Reduction::Mean => "mean",
        Reduction::Sum => "sum",
    }
}

impl TrainConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "d_g" => self.d_g = parse_value(key, value)?,
            "d_t" => self.d_t = parse_value(key, value)?,
            "d_v" => self.d_v = parse_value(key, value)?,
            "d_s" => self.d_s = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "reduction" => {
                self.reduction = match value {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(KomeiError::Config(format!("unknown reduction {value:?}"))),
                }
            }
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "an_eps" => self.an_eps = parse_value(key, value)?,
            "share_an" => self.share_an = parse_bool(key, value)?,
            "text" => self.text = parse_bool(key, value)?,
            "image" => self.image = parse_bool(key, value)?,
            "speech" => self.speech = parse_bool(key, value)?,
            "cfa" => self.cfa = parse_bool(key, value)?,
            "ca" => self.ca = parse_bool(key, value)?,
            "gu" => self.gu = parse_bool(key, value)?,
            "sa" => self.sa = parse_bool(key, value)?,
            "speech_pool" => self.speech_pool = value.parse()?,
            "image_count" => self.image_count = parse_value(key, value)?,
            "toy_fallback" => self.toy_fallback = parse_bool(key, value)?,
            "split_ratio" => self.split_ratio = parse_value(key, value)?,
            "train" => self.paths.train = Some(PathBuf::from(value)),
            "val" => self.paths.val = Some(PathBuf::from(value)),
            "test" => self.paths.test = Some(PathBuf::from(value)),
            "vocab" => self.paths.vocab = Some(PathBuf::from(value)),
            "image_table" => self.paths.image_table = Some(PathBuf::from(value)),
            "speech_table" => self.paths.speech_table = Some(PathBuf::from(value)),
            _ => return Err(KomeiError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| KomeiError::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value).map_err(|e| KomeiError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KomeiError::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text of every hashed key, one per line in a fixed order.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("d_g", self.d_g.to_string());
        kv("d_t", self.d_t.to_string());
        kv("d_v", self.d_v.to_string());
        kv("d_s", self.d_s.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("epochs", self.epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("seed", self.seed.to_string());
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("beta1", format!("{:?}", self.beta1));
        kv("beta2", format!("{:?}", self.beta2));
        kv("adam_eps", format!("{:?}", self.adam_eps));
        kv("tau", format!("{:?}", self.tau));
        kv("reduction", reduction_str(self.reduction).into());
        kv("alpha", format!("{:?}", self.alpha));
        kv("beta", format!("{:?}", self.beta));
        kv("gamma", format!("{:?}", self.gamma));
        kv("an_eps", format!("{:?}", self.an_eps));
        kv("share_an", self.share_an.to_string());
        kv("text", self.text.to_string());
        kv("image", self.image.to_string());
        kv("speech", self.speech.to_string());
        kv("cfa", self.cfa.to_string());
        kv("ca", self.ca.to_string());
        kv("gu", self.gu.to_string());
        kv("sa", self.sa.to_string());
        kv("speech_pool", self.speech_pool.as_str().into());
        kv("image_count", self.image_count.to_string());
        kv("toy_fallback", self.toy_fallback.to_string());
        kv("split_ratio", format!("{:?}", self.split_ratio));
        s
    }

    /// Canonical text followed by any set paths.
    pub fn to_text(&self) -> String {
        let mut s = self.canonical_text();
        let p = &self.paths;
        for (key, value) in PATH_KEYS.iter().zip([&p.train, &p.val, &p.test, &p.vocab, &p.image_table, &p.speech_table])
        {
            if let Some(v) = value {
                let _ = writeln!(s, "{key} = {}", v.display());
            }
        }
        s
    }

    /// Hex SHA-256 of [`Self::canonical_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KomeiError::Config(m));
        if self.d_g == 0 || self.d_t == 0 || self.d_v == 0 || self.d_s == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.tau > 0.0) || !(self.an_eps > 0.0) || !(self.adam_eps > 0.0) {
            return bad("lr, tau, an_eps and adam_eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.weight_decay >= 0.0) {
            return bad("betas must lie in [0, 1) and weight_decay must be >= 0".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        if self.image_count == 0 || self.image_count > u16::MAX as usize {
            return bad("image_count must lie in 1..=65535".into());
        }
        self.loss_weights().validate()?;
        if self.sa && !self.gu {
            return bad("sa requires gu".into());
        }
        if self.gu && !self.ca {
            return bad("gu requires ca".into());
        }
        let evidence = self.image || self.speech;
        if !self.text && !evidence {
            return bad("at least one modality must be enabled".into());
        }
        if (self.cfa || self.ca) && !(self.text && evidence) {
            return bad("cfa and ca need text plus at least one evidence modality".into());
        }
        Ok(())
    }

    pub fn stack_flags(&self) -> StackFlags {
        StackFlags {
            gu: self.gu,
            sa: self.sa,
        }
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            tau: self.tau,
            reduction: self.reduction,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn adamw(&self, total_steps: u64) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            schedule: Schedule::LinearWarmup {
                warmup_steps: self.warmup_steps,
                total_steps,
            },
        }
    }

    /// Turns every fusion component off.
    pub fn without_components(mut self) -> Self {
        self.cfa = false;
        self.ca = false;
        self.gu = false;
        self.sa = false;
        self
    }
}
