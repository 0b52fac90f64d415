//! AdamW, global-norm clipping, the warmup/decay schedule and periodic MSign.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{batch_gradients, ModelParams, ParamInfo, ParamKind};
use crate::spectral::msign_restore;
use crate::svd::DEFAULT_RANK_TOL;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay to norm gains too.
    pub decay_norm_gains: bool,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params.tensors().iter().map(|(_, m)| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            decay_norm_gains: false,
        }
    }
}

/// Decoupled-weight-decay Adam step with bias correction.
pub fn adamw_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamWState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
    }
    let slots = params.tensors_mut();
    let gs = grads.tensors();
    if slots.len() != gs.len() || slots.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and moment lists differ in length".into()));
    }
    for (((_, p), (_, g)), m) in slots.iter().zip(&gs).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape(format!("shape mismatch {:?} vs {:?} vs {:?}", p.shape(), g.shape(), m.shape())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, ((info, p), (_, g))) in slots.into_iter().zip(gs).enumerate() {
        let wd = if info.kind == ParamKind::NormGain && !state.decay_norm_gains { 0.0 } else { state.weight_decay };
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (((w, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + state.eps);
            *w -= lr * (update + wd * *w);
        }
    }
    Ok(())
}

/// Scales `grads` to global norm `max_norm` if it is larger; returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Argument(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_in_place(max_norm / norm);
    }
    Ok(norm)
}

/// Linear warmup from 0, then linear decay to `base_lr / 10` at `total`.
pub fn lr_at(step: u64, base_lr: f64, warmup: u64, total: u64) -> f64 {
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if step >= total {
        return base_lr / 10.0;
    }
    let frac = (step - warmup) as f64 / (total - warmup) as f64;
    base_lr * (1.0 - 0.9 * frac)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MSignTargets {
    All2d,
    AttentionOnly,
    MlpOnly,
    None,
}

impl FromStr for MSignTargets {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all_2d" => Ok(MSignTargets::All2d),
            "attention_only" => Ok(MSignTargets::AttentionOnly),
            "mlp_only" => Ok(MSignTargets::MlpOnly),
            "none" => Ok(MSignTargets::None),
            other => Err(Error::Argument(format!("unknown msign targets '{other}'"))),
        }
    }
}

impl fmt::Display for MSignTargets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MSignTargets::All2d => "all_2d",
            MSignTargets::AttentionOnly => "attention_only",
            MSignTargets::MlpOnly => "mlp_only",
            MSignTargets::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MSignConfig {
    pub period: u64,
    pub targets: MSignTargets,
    pub rank_tol: f64,
    pub min_dims: usize,
    /// Also rewrite the (tied) embedding under `all_2d`.
    pub include_embeddings: bool,
}

impl Default for MSignConfig {
    fn default() -> Self {
        Self { period: 100, targets: MSignTargets::None, rank_tol: DEFAULT_RANK_TOL, min_dims: 2, include_embeddings: false }
    }
}

impl MSignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Argument("msign period must be at least 1".into()));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::Argument(format!("msign rank_tol must lie in (0, 1), got {}", self.rank_tol)));
        }
        Ok(())
    }

    pub fn targets(&self, info: &ParamInfo, shape: (usize, usize)) -> bool {
        // Norm gains are stored as 1 × d rows: one logical dimension.
        let dims = if shape.0 > 1 && shape.1 > 1 { 2 } else { 1 };
        if dims < self.min_dims {
            return false;
        }
        match self.targets {
            MSignTargets::None => false,
            MSignTargets::AttentionOnly => info.kind.is_attention(),
            MSignTargets::MlpOnly => info.kind.is_mlp(),
            MSignTargets::All2d => {
                info.kind.is_block_matrix() || (self.include_embeddings && info.kind == ParamKind::Embedding)
            }
        }
    }

    pub fn fires_at(&self, step: u64) -> bool {
        self.targets != MSignTargets::None && step >= 1 && step % self.period == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MSignReport {
    pub applied: Vec<String>,
    /// Targeted tensors skipped because they were exactly zero.
    pub skipped_zero: Vec<String>,
}

/// Replaces every targeted weight by its norm-restored matrix sign when
/// `step` is an application point. Optimizer moments are not touched.
pub fn msign_apply(params: &mut ModelParams, step: u64, cfg: &MSignConfig) -> Result<MSignReport> {
    cfg.validate()?;
    let mut report = MSignReport::default();
    if !cfg.fires_at(step) {
        return Ok(report);
    }
    for (info, w) in params.tensors_mut() {
        if !cfg.targets(&info, w.shape()) {
            continue;
        }
        if w.frobenius_norm() == 0.0 {
            report.skipped_zero.push(info.name);
            continue;
        }
        *w = msign_restore(w, cfg.rank_tol)?;
        report.applied.push(info.name);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup: u64,
    pub total: u64,
    pub clip: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    pub lr: f64,
    pub msign: MSignReport,
}

/// One iteration of the training loop: backward, clip, AdamW, then MSign.
/// `step` is the 1-based iteration index, which is also where the schedule
/// is read. A non-finite loss or gradient is reported as divergence.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[Vec<usize>],
    adamw: &mut AdamWState,
    msign: &MSignConfig,
    schedule: &Schedule,
    step: u64,
) -> Result<StepRecord> {
    let (loss, mut grads) = batch_gradients(params, batch)?;
    let grad_norm = clip_global_norm(&mut grads, schedule.clip)?;
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::RegimeExit { step: step as usize, reason: format!("non-finite loss {loss} or grad norm {grad_norm}") });
    }
    if step == 0 {
        return Err(Error::Argument("training steps are 1-based".into()));
    }
    let lr = lr_at(step, schedule.base_lr, schedule.warmup, schedule.total);
    adamw_step(params, &grads, adamw, lr)?;
    let report = msign_apply(params, step, msign)?;
    Ok(StepRecord { step, loss, grad_norm, lr, msign: report })
}
