//! Training runs: metrics stream, divergence detection, summary, checkpoint.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{adjacent_alignment_profile, batch_gradients, init_params, save_checkpoint, ModelParams, JACOBIAN_BUDGET};
use crate::optim::{lr_at, train_step, AdamWState, Schedule};
use crate::spectral::geo_mean_srank;

use super::config::{AlignmentMode, RunConfig};
use super::data::Generator;

pub const METRICS_HEADER: &str = "step,loss,grad_norm,lr,geo_srank,mean_align,msign_applied";

/// Block weight matrices of the first `⌈L/2⌉` layers.
pub fn early_layer_weights(params: &ModelParams) -> Vec<&Matrix> {
    let early = params.blocks.len().div_ceil(2);
    params.blocks[..early]
        .iter()
        .flat_map(|b| [&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2])
        .collect()
}

/// Geometric-mean stable rank over the given weights, ignoring exactly-zero
/// matrices; NaN when none are left.
pub fn geo_srank_of(ws: &[&Matrix]) -> f64 {
    let nonzero: Vec<Matrix> = ws.iter().filter(|w| w.frobenius_norm() > 0.0).map(|w| (*w).clone()).collect();
    geo_mean_srank(&nonzero).unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub geo_srank: f64,
    pub mean_align: f64,
    pub msign_applied: bool,
}

fn csv_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:e}")
    }
}

fn json_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        "null".into()
    }
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            csv_real(self.loss),
            csv_real(self.grad_norm),
            csv_real(self.lr),
            csv_real(self.geo_srank),
            csv_real(self.mean_align),
            u8::from(self.msign_applied)
        )
    }

    pub fn json_line(&self) -> String {
        format!(
            "{{\"step\":{},\"loss\":{},\"grad_norm\":{},\"lr\":{},\"geo_srank\":{},\"mean_align\":{},\"msign_applied\":{}}}",
            self.step,
            json_real(self.loss),
            json_real(self.grad_norm),
            json_real(self.lr),
            json_real(self.geo_srank),
            json_real(self.mean_align),
            u8::from(self.msign_applied)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    /// Iteration at which divergence was declared.
    pub diverged_step: Option<u64>,
    pub reason: Option<String>,
    pub steps_run: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub max_grad_norm: f64,
    pub divergence_threshold: f64,
    pub msign_applications: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub summary: RunSummary,
    pub rows: Vec<MetricsRow>,
    pub params: ModelParams,
}

impl TrainOutcome {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(out, "{}", r.csv_line()).expect("string write");
        }
        out
    }

    pub fn metrics_jsonl(&self) -> String {
        self.rows.iter().map(|r| r.json_line() + "\n").collect()
    }
}

fn alignment_enabled(cfg: &RunConfig) -> bool {
    match cfg.alignment {
        AlignmentMode::On => true,
        AlignmentMode::Off => false,
        AlignmentMode::Auto => cfg.model.seq_len * cfg.model.d_model <= JACOBIAN_BUDGET,
    }
}

fn mean_alignment(params: &ModelParams, tokens: &[usize]) -> f64 {
    match adjacent_alignment_profile(params, tokens, 1e-5) {
        Ok(prof) if !prof.is_empty() => prof.iter().map(|a| a.value).sum::<f64>() / prof.len() as f64,
        _ => f64::NAN,
    }
}

/// Runs the training loop in memory.
///
/// Iteration `t = 1 … total_steps` draws batch `t`, updates the parameters
/// and may apply MSign. The metrics row for step `s` describes the
/// parameters after `s` updates: loss and gradient norm on batch `s + 1`
/// (the batch of the next iteration), and whether MSign rewrote the weights
/// at iteration `s`. Rows are kept for `s % metrics_every == 0`, including
/// `s = total_steps` via an extra evaluation pass.
pub fn run_training(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let gen = Generator::new(cfg.data.clone(), cfg.model.vocab, cfg.model.seq_len)?;
    let mut params = init_params(&cfg.model, cfg.init_seed)?;
    let mut adamw = AdamWState::new(&params);
    let schedule = Schedule { base_lr: cfg.base_lr, warmup: cfg.warmup, total: cfg.total_steps, clip: cfg.clip };
    let with_alignment = alignment_enabled(cfg);
    let every = cfg.metrics_every;

    let mut rows = Vec::new();
    let mut threshold = f64::NAN;
    let mut streak = 0usize;
    let mut max_grad_norm = 0.0_f64;
    let mut applications = 0u64;
    let mut last_applied = false;
    let mut divergence: Option<(u64, String)> = None;

    let metrics_row = |params: &ModelParams, step: u64, loss: f64, grad_norm: f64, lr: f64, applied: bool, batch: &[Vec<usize>]| {
        MetricsRow {
            step,
            loss,
            grad_norm,
            lr,
            geo_srank: geo_srank_of(&early_layer_weights(params)),
            mean_align: if with_alignment { mean_alignment(params, &batch[0]) } else { f64::NAN },
            msign_applied: applied,
        }
    };

    for t in 1..=cfg.total_steps {
        let batch = gen.batch(t, cfg.batch_sequences);
        let snapshot = ((t - 1) % every == 0).then(|| params.clone());
        let rec = match train_step(&mut params, &batch, &mut adamw, &cfg.msign, &schedule, t) {
            Ok(rec) => rec,
            Err(Error::RegimeExit { reason, .. }) => {
                divergence = Some((t, reason));
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(before) = snapshot {
            rows.push(metrics_row(&before, t - 1, rec.loss, rec.grad_norm, rec.lr, last_applied, &batch));
        }
        last_applied = !rec.msign.applied.is_empty();
        applications += u64::from(last_applied);
        max_grad_norm = max_grad_norm.max(rec.grad_norm);
        if threshold.is_nan() {
            threshold = cfg.divergence_factor * rec.grad_norm;
        }
        streak = if rec.grad_norm > threshold { streak + 1 } else { 0 };
        if streak >= cfg.patience {
            divergence = Some((t, format!("grad_norm above {threshold:e} for {streak} consecutive steps")));
            break;
        }
    }

    let completed = divergence.is_none();
    if completed && cfg.total_steps % every == 0 {
        let batch = gen.batch(cfg.total_steps + 1, cfg.batch_sequences);
        let (loss, grads) = batch_gradients(&params, &batch)?;
        let lr = lr_at(cfg.total_steps, cfg.base_lr, cfg.warmup, cfg.total_steps);
        rows.push(metrics_row(&params, cfg.total_steps, loss, grads.global_norm(), lr, last_applied, &batch));
    }
    let summary = RunSummary {
        status: if completed { RunStatus::Completed } else { RunStatus::Diverged },
        diverged_step: divergence.as_ref().map(|d| d.0),
        reason: divergence.map(|d| d.1),
        steps_run: adamw.t,
        initial_loss: rows.first().map_or(f64::NAN, |r| r.loss),
        final_loss: rows.last().map_or(f64::NAN, |r| r.loss),
        max_grad_norm,
        divergence_threshold: threshold,
        msign_applications: applications,
    };
    Ok(TrainOutcome { summary, rows, params })
}

/// Writes `metrics.csv`, `metrics.jsonl`, `summary.json`, `config.cfg` and,
/// when the weights are finite, `checkpoint/`.
pub fn write_outputs(cfg: &RunConfig, outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), outcome.metrics_csv())?;
    fs::write(dir.join("metrics.jsonl"), outcome.metrics_jsonl())?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&outcome.summary)? + "\n")?;
    fs::write(dir.join("config.cfg"), cfg.to_text())?;
    if outcome.params.is_finite() {
        save_checkpoint(&outcome.params, &dir.join("checkpoint"), outcome.summary.steps_run as usize)?;
    }
    Ok(())
}

/// Loads a config, trains, and writes outputs to `out_dir` (or the config's
/// own `run.out_dir`).
pub fn cmd_train(config_path: &Path, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = RunConfig::load(config_path)?;
    let outcome = run_training(&cfg)?;
    write_outputs(&cfg, &outcome, out_dir.unwrap_or(&cfg.out_dir))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::optim::MSignTargets;

    fn quick() -> RunConfig {
        RunConfig {
            model: ModelConfig { n_layers: 2, d_model: 8, n_heads: 2, d_ff: 16, seq_len: 8, vocab: 6, ..Default::default() },
            base_lr: 1e-2,
            warmup: 5,
            total_steps: 30,
            batch_sequences: 2,
            metrics_every: 10,
            ..Default::default()
        }
    }

    #[test]
    fn row_count_and_header() {
        for (total, every) in [(30, 10), (31, 10), (29, 7)] {
            let cfg = RunConfig { total_steps: total, metrics_every: every, ..quick() };
            let out = run_training(&cfg).unwrap();
            assert_eq!(out.summary.status, RunStatus::Completed);
            assert_eq!(out.rows.len() as u64, total / every + 1, "{total} {every}");
            assert!(out.metrics_csv().starts_with(METRICS_HEADER));
        }
    }

    #[test]
    fn rows_are_deterministic() {
        let a = run_training(&quick()).unwrap().metrics_csv();
        let b = run_training(&quick()).unwrap().metrics_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn msign_flags_follow_the_period() {
        let mut cfg = RunConfig { metrics_every: 5, ..quick() };
        cfg.msign.targets = MSignTargets::All2d;
        cfg.msign.period = 10;
        let out = run_training(&cfg).unwrap();
        for r in &out.rows {
            assert_eq!(r.msign_applied, r.step > 0 && r.step % 10 == 0, "step {}", r.step);
        }
        assert_eq!(out.summary.msign_applications, 3);
    }

    #[test]
    fn alignment_is_reported_for_small_models() {
        let out = run_training(&quick()).unwrap();
        assert!(out.rows.iter().all(|r| (0.0..=1.0).contains(&r.mean_align)));
        let mut cfg = quick();
        cfg.alignment = AlignmentMode::Off;
        assert!(run_training(&cfg).unwrap().rows.iter().all(|r| r.mean_align.is_nan()));
    }

    #[test]
    fn tiny_threshold_declares_divergence() {
        let cfg = RunConfig { divergence_factor: 1e-6, patience: 2, ..quick() };
        let out = run_training(&cfg).unwrap();
        assert_eq!(out.summary.status, RunStatus::Diverged);
        assert_eq!(out.summary.diverged_step, Some(2));
    }

    #[test]
    fn csv_formats_missing_values_as_nan() {
        let row = MetricsRow { step: 0, loss: 1.5, grad_norm: 0.25, lr: 0.0, geo_srank: f64::NAN, mean_align: f64::NAN, msign_applied: false };
        assert_eq!(row.csv_line(), "0,1.5e0,2.5e-1,0e0,nan,nan,0");
        assert!(row.json_line().contains("\"geo_srank\":null"));
    }
}
