//! Desk-scale decoder-only transformer: Pre-Norm blocks with causal
//! multi-head attention and a two-layer MLP, tied token embedding, no
//! positional encoding.

mod checkpoint;
mod jacobian;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TensorEntry};
pub use jacobian::{adjacent_alignment_profile, check_lowrank_propagation, layer_jacobian, JACOBIAN_BUDGET};
pub use model::{backward, batch_gradients, block_forward, forward, ForwardTrace, NORM_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// Mean-centred, variance-normalized, gain only.
    LayerNorm,
    RmsNorm,
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "layernorm" => Ok(Norm::LayerNorm),
            "rmsnorm" => Ok(Norm::RmsNorm),
            other => Err(Error::Argument(format!("unknown norm '{other}'"))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::LayerNorm => "layernorm",
            Norm::RmsNorm => "rmsnorm",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seq_len: usize,
    pub vocab: usize,
    pub activation: Activation,
    pub init_std: f64,
    /// Divide the `W_O` and `W₂` init by `√(2L)`.
    pub wo_downscale: bool,
    pub zero_query_init: bool,
    pub norm: Norm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 64,
            seq_len: 16,
            vocab: 16,
            activation: Activation::Gelu,
            init_std: 0.02,
            wo_downscale: false,
            zero_query_init: false,
            norm: Norm::LayerNorm,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("seq_len", self.seq_len),
            ("vocab", self.vocab),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Argument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::Argument(format!("init_std must be finite and ≥ 0, got {}", self.init_std)));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Embedding,
    Query,
    Key,
    Value,
    Output,
    MlpIn,
    MlpOut,
    NormGain,
}

impl ParamKind {
    pub fn is_attention(self) -> bool {
        matches!(self, ParamKind::Query | ParamKind::Key | ParamKind::Value | ParamKind::Output)
    }

    pub fn is_mlp(self) -> bool {
        matches!(self, ParamKind::MlpIn | ParamKind::MlpOut)
    }

    /// Weight matrices inside transformer blocks.
    pub fn is_block_matrix(self) -> bool {
        self.is_attention() || self.is_mlp()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    /// 0-based block index; `None` for embedding and final norm.
    pub layer: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    /// Norm gains, stored as `1 × d` rows.
    pub ln1: Matrix,
    pub ln2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `vocab × d`; also the output head.
    pub embed: Matrix,
    pub blocks: Vec<BlockParams>,
    pub ln_f: Matrix,
}

fn info(name: String, kind: ParamKind, layer: Option<usize>) -> ParamInfo {
    ParamInfo { name, kind, layer }
}

fn block_infos(l: usize) -> [ParamInfo; 8] {
    [
        ("wq", ParamKind::Query),
        ("wk", ParamKind::Key),
        ("wv", ParamKind::Value),
        ("wo", ParamKind::Output),
        ("w1", ParamKind::MlpIn),
        ("w2", ParamKind::MlpOut),
        ("ln1", ParamKind::NormGain),
        ("ln2", ParamKind::NormGain),
    ]
    .map(|(name, kind)| info(format!("blocks.{l}.{name}"), kind, Some(l)))
}

impl ModelParams {
    /// Every tensor with its name, in a fixed order shared by parameters and
    /// gradients.
    pub fn tensors(&self) -> Vec<(ParamInfo, &Matrix)> {
        let mut out = vec![(info("embed".into(), ParamKind::Embedding, None), &self.embed)];
        for (l, b) in self.blocks.iter().enumerate() {
            out.extend(block_infos(l).into_iter().zip([&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2, &b.ln1, &b.ln2]));
        }
        out.push((info("ln_f".into(), ParamKind::NormGain, None), &self.ln_f));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamInfo, &mut Matrix)> {
        let mut out = vec![(info("embed".into(), ParamKind::Embedding, None), &mut self.embed)];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.extend(block_infos(l).into_iter().zip([
                &mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo, &mut b.w1, &mut b.w2, &mut b.ln1, &mut b.ln2,
            ]));
        }
        out.push((info("ln_f".into(), ParamKind::NormGain, None), &mut self.ln_f));
        out
    }

    pub fn zeros_like(&self) -> ModelParams {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        ModelParams {
            config: self.config.clone(),
            embed: z(&self.embed),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    wq: z(&b.wq),
                    wk: z(&b.wk),
                    wv: z(&b.wv),
                    wo: z(&b.wo),
                    w1: z(&b.w1),
                    w2: z(&b.w2),
                    ln1: z(&b.ln1),
                    ln2: z(&b.ln2),
                })
                .collect(),
            ln_f: z(&self.ln_f),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// `√Σ‖T‖_F²` over all tensors.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.as_slice())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Elementwise `self += c · other`.
    pub fn axpy(&mut self, c: f64, other: &ModelParams) -> Result<()> {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.axpy(c, src)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale_in_place(c);
        }
    }
}

/// Gaussian init in a fixed fill order: embedding, then per block
/// `W_Q, W_K, W_V, W_O, W₁, W₂`. Norm gains start at one.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);
    let (d, ff, std) = (cfg.d_model, cfg.d_ff, cfg.init_std);
    let out_std = if cfg.wo_downscale { std / (2.0 * cfg.n_layers as f64).sqrt() } else { std };
    let embed = Matrix::random_normal(cfg.vocab, d, std, &mut rng);
    let ones = || Matrix::new(1, d, vec![1.0; d]).expect("d ≥ 1");
    let blocks = (0..cfg.n_layers)
        .map(|_| {
            let mut wq = Matrix::random_normal(d, d, std, &mut rng);
            if cfg.zero_query_init {
                wq = Matrix::zeros(d, d);
            }
            BlockParams {
                wq,
                wk: Matrix::random_normal(d, d, std, &mut rng),
                wv: Matrix::random_normal(d, d, std, &mut rng),
                wo: Matrix::random_normal(d, d, out_std, &mut rng),
                w1: Matrix::random_normal(d, ff, std, &mut rng),
                w2: Matrix::random_normal(ff, d, out_std, &mut rng),
                ln1: ones(),
                ln2: ones(),
            }
        })
        .collect();
    Ok(ModelParams { config: cfg.clone(), embed, blocks, ln_f: ones() })
}
