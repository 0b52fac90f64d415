//! Spectral timelines over a series of checkpoints.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::{adjacent_alignment_profile, load_checkpoint, ModelParams, JACOBIAN_BUDGET};
use crate::rng::SplitMix64;

use super::train::{early_layer_weights, geo_srank_of};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnoseRow {
    pub step: usize,
    pub dir: PathBuf,
    /// Over the block weights of the first half of the layers.
    pub geo_srank: f64,
    /// Per block, geometric mean over its six weight matrices.
    pub layer_srank: Vec<f64>,
    pub mean_align: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub rows: Vec<DiagnoseRow>,
    pub warnings: Vec<String>,
}

impl DiagnoseReport {
    pub fn to_csv(&self) -> String {
        let layers = self.rows.first().map_or(0, |r| r.layer_srank.len());
        let mut out = String::from("step,geo_srank");
        for l in 0..layers {
            write!(out, ",srank_layer_{l}").expect("string write");
        }
        out.push_str(",mean_align\n");
        let real = |x: f64| if x.is_nan() { "nan".to_string() } else { format!("{x:e}") };
        for r in &self.rows {
            write!(out, "{},{}", r.step, real(r.geo_srank)).expect("string write");
            for s in &r.layer_srank {
                write!(out, ",{}", real(*s)).expect("string write");
            }
            writeln!(out, ",{}", real(r.mean_align)).expect("string write");
        }
        out
    }
}

/// Fixed probe sequence used for alignment measurements.
pub fn probe_tokens(params: &ModelParams) -> Vec<usize> {
    let mut rng = SplitMix64::new(0);
    (0..params.config.seq_len).map(|_| rng.range(0, params.config.vocab - 1)).collect()
}

pub fn cmd_diagnose(dirs: &[PathBuf]) -> Result<DiagnoseReport> {
    if dirs.is_empty() {
        return Err(Error::Argument("no checkpoint directories given".into()));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    let mut warnings = Vec::new();
    let mut config = None;
    for dir in dirs {
        let (params, manifest) = load_checkpoint(dir)?;
        match &config {
            None => config = Some(manifest.config.clone()),
            Some(c) if *c != manifest.config => {
                return Err(Error::Manifest(format!("{} uses a different model config", dir.display())));
            }
            Some(_) => {}
        }
        let layer_srank = params
            .blocks
            .iter()
            .map(|b| geo_srank_of(&[&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2]))
            .collect();
        let cfg = &params.config;
        let mean_align = if cfg.n_layers < 2 {
            f64::NAN
        } else if cfg.seq_len * cfg.d_model > JACOBIAN_BUDGET {
            warnings.push(format!(
                "{}: T·d = {} exceeds the Jacobian budget; alignment skipped",
                dir.display(),
                cfg.seq_len * cfg.d_model
            ));
            f64::NAN
        } else {
            let prof = adjacent_alignment_profile(&params, &probe_tokens(&params), 1e-5)?;
            prof.iter().map(|a| a.value).sum::<f64>() / prof.len() as f64
        };
        rows.push(DiagnoseRow {
            step: manifest.step,
            dir: dir.clone(),
            geo_srank: geo_srank_of(&early_layer_weights(&params)),
            layer_srank,
            mean_align,
        });
    }
    rows.sort_by_key(|r| r.step);
    Ok(DiagnoseReport { rows, warnings })
}
