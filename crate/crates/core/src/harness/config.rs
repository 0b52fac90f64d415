//! Line-oriented run configuration.
//!
//! Each non-blank line is `section.key = value`; lines starting with `#`
//! are comments. Keys may appear at most once. Numbers use Rust's float and
//! integer grammar, booleans are `true`/`false`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::net::{ModelConfig, Norm};
use crate::optim::{MSignConfig, MSignTargets};

use super::data::{DataSpec, Task};

/// When the adjacent-alignment metric is computed during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentMode {
    /// On when `T·d` fits the Jacobian budget.
    Auto,
    On,
    Off,
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(AlignmentMode::Auto),
            "on" | "true" => Ok(AlignmentMode::On),
            "off" | "false" => Ok(AlignmentMode::Off),
            other => Err(Error::Argument(format!("expected auto, on or off, got '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataSpec,
    pub init_seed: u64,
    pub base_lr: f64,
    pub warmup: u64,
    pub total_steps: u64,
    pub batch_sequences: usize,
    pub clip: f64,
    pub msign: MSignConfig,
    pub metrics_every: u64,
    /// Divergence when grad_norm exceeds this multiple of the first one.
    pub divergence_factor: f64,
    pub patience: usize,
    pub alignment: AlignmentMode,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataSpec { task: Task::Copy, seed: 0 },
            init_seed: 0,
            base_lr: 1e-3,
            warmup: 100,
            total_steps: 1000,
            batch_sequences: 8,
            clip: 1.0,
            msign: MSignConfig::default(),
            metrics_every: 10,
            divergence_factor: 1e3,
            patience: 3,
            alignment: AlignmentMode::Auto,
            out_dir: PathBuf::from("run"),
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config { line, msg: format!("invalid value '{value}' for {key}") })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::Config { line, msg: format!("expected 'section.key = value', got '{trimmed}'") })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config { line, msg: format!("duplicate key {key}") });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate().map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "model.n_layers" => m.n_layers = parse_value(line, key, v)?,
            "model.d_model" => m.d_model = parse_value(line, key, v)?,
            "model.n_heads" => m.n_heads = parse_value(line, key, v)?,
            "model.d_ff" => m.d_ff = parse_value(line, key, v)?,
            "model.seq_len" => m.seq_len = parse_value(line, key, v)?,
            "model.vocab" => m.vocab = parse_value(line, key, v)?,
            "model.activation" => m.activation = parse_value::<Activation>(line, key, v)?,
            "model.init_std" => m.init_std = parse_value(line, key, v)?,
            "model.wo_downscale" => m.wo_downscale = parse_value(line, key, v)?,
            "model.zero_query_init" => m.zero_query_init = parse_value(line, key, v)?,
            "model.norm" => m.norm = parse_value::<Norm>(line, key, v)?,
            "data.task" => self.data.task = parse_value(line, key, v)?,
            "data.seed" => self.data.seed = parse_value(line, key, v)?,
            "train.seed" => self.init_seed = parse_value(line, key, v)?,
            "train.base_lr" => self.base_lr = parse_value(line, key, v)?,
            "train.warmup" => self.warmup = parse_value(line, key, v)?,
            "train.total_steps" => self.total_steps = parse_value(line, key, v)?,
            "train.batch_sequences" => self.batch_sequences = parse_value(line, key, v)?,
            "train.clip" => self.clip = parse_value(line, key, v)?,
            "train.metrics_every" => self.metrics_every = parse_value(line, key, v)?,
            "train.divergence_factor" => self.divergence_factor = parse_value(line, key, v)?,
            "train.patience" => self.patience = parse_value(line, key, v)?,
            "train.alignment" => self.alignment = parse_value(line, key, v)?,
            "msign.period" => self.msign.period = parse_value(line, key, v)?,
            "msign.targets" => self.msign.targets = parse_value::<MSignTargets>(line, key, v)?,
            "msign.rank_tol" => self.msign.rank_tol = parse_value(line, key, v)?,
            "msign.include_embeddings" => self.msign.include_embeddings = parse_value(line, key, v)?,
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config { line, msg: format!("unknown key {key}") }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.msign.validate()?;
        if self.total_steps <= self.warmup {
            return Err(Error::Argument(format!(
                "train.total_steps ({}) must exceed train.warmup ({})",
                self.total_steps, self.warmup
            )));
        }
        if self.batch_sequences == 0 || self.metrics_every == 0 || self.patience == 0 {
            return Err(Error::Argument("batch_sequences, metrics_every and patience must be at least 1".into()));
        }
        if !(self.base_lr > 0.0 && self.clip > 0.0 && self.divergence_factor > 0.0) {
            return Err(Error::Argument("base_lr, clip and divergence_factor must be positive".into()));
        }
        if self.model.seq_len < 2 {
            return Err(Error::Argument("model.seq_len must be at least 2".into()));
        }
        Ok(())
    }

    /// Serializes back to the line format; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = match self.alignment {
            AlignmentMode::Auto => "auto",
            AlignmentMode::On => "on",
            AlignmentMode::Off => "off",
        };
        [
            format!("model.n_layers = {}", m.n_layers),
            format!("model.d_model = {}", m.d_model),
            format!("model.n_heads = {}", m.n_heads),
            format!("model.d_ff = {}", m.d_ff),
            format!("model.seq_len = {}", m.seq_len),
            format!("model.vocab = {}", m.vocab),
            format!("model.activation = {}", m.activation),
            format!("model.init_std = {:?}", m.init_std),
            format!("model.wo_downscale = {}", m.wo_downscale),
            format!("model.zero_query_init = {}", m.zero_query_init),
            format!("model.norm = {}", m.norm),
            format!("data.task = {}", self.data.task),
            format!("data.seed = {}", self.data.seed),
            format!("train.seed = {}", self.init_seed),
            format!("train.base_lr = {:?}", self.base_lr),
            format!("train.warmup = {}", self.warmup),
            format!("train.total_steps = {}", self.total_steps),
            format!("train.batch_sequences = {}", self.batch_sequences),
            format!("train.clip = {:?}", self.clip),
            format!("train.metrics_every = {}", self.metrics_every),
            format!("train.divergence_factor = {:?}", self.divergence_factor),
            format!("train.patience = {}", self.patience),
            format!("train.alignment = {a}"),
            format!("msign.period = {}", self.msign.period),
            format!("msign.targets = {}", self.msign.targets),
            format!("msign.rank_tol = {:?}", self.msign.rank_tol),
            format!("msign.include_embeddings = {}", self.msign.include_embeddings),
            format!("run.out_dir = {}", self.out_dir.display()),
        ]
        .join("\n")
            + "\n"
    }
}
