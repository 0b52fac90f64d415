//! FLOPs overhead of periodic MSign and the throughput model fit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::MSignTargets;

/// SVD cost of a `d × d` matrix.
pub fn svd_flops_square(d: f64) -> f64 {
    13.0 * d.powi(3)
}

/// SVD cost of a `d × 4d` (or `4d × d`) matrix.
pub fn svd_flops_wide(d: f64) -> f64 {
    19.0 * d.powi(3)
}

/// Per-layer SVD FLOPs of one MSign application.
pub fn msign_flops(d: f64, targets: MSignTargets) -> f64 {
    match targets {
        MSignTargets::AttentionOnly => 4.0 * svd_flops_square(d),
        MSignTargets::MlpOnly => 2.0 * svd_flops_wide(d),
        MSignTargets::All2d => 4.0 * svd_flops_square(d) + 2.0 * svd_flops_wide(d),
        MSignTargets::None => 0.0,
    }
}

/// Per-layer forward+backward FLOPs of a training step, leading terms only.
pub fn step_flops(b: f64, t: f64, d: f64) -> f64 {
    72.0 * b * t * d * d + 12.0 * b * t * t * d
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadReport {
    pub numerator_flops: f64,
    pub per_step_flops: f64,
    /// Amortized extra FLOPs per step over standard step FLOPs.
    pub ratio: f64,
}

pub fn cmd_overhead(b: u64, t: u64, d: u64, p: u64, targets: MSignTargets) -> Result<OverheadReport> {
    if b == 0 || t == 0 || d == 0 || p == 0 {
        return Err(Error::Argument("b, t, d and p must all be positive".into()));
    }
    let numerator = msign_flops(d as f64, targets);
    let per_step = step_flops(b as f64, t as f64, d as f64);
    Ok(OverheadReport { numerator_flops: numerator, per_step_flops: per_step, ratio: numerator / (per_step * p as f64) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThroughputSample {
    pub period: f64,
    pub tokens_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThroughputFit {
    pub t_inf: f64,
    pub r: f64,
    pub predictions: Vec<f64>,
}

/// Least squares of `1/T = (1/T∞)(1 + r/P)`, linear in `1/P`.
pub fn cmd_fit_throughput(samples: &[ThroughputSample]) -> Result<ThroughputFit> {
    if samples.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 samples, got {}", samples.len())));
    }
    if let Some(s) = samples.iter().find(|s| !(s.period > 0.0 && s.tokens_per_second > 0.0)) {
        return Err(Error::Fit(format!("samples must be positive, got {s:?}")));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| 1.0 / s.period).collect();
    let ys: Vec<f64> = samples.iter().map(|s| 1.0 / s.tokens_per_second).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * xs.iter().map(|x| x * x).sum::<f64>() {
        return Err(Error::Fit("all periods are equal; the fit is singular".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(intercept > 0.0) {
        return Err(Error::Fit(format!("fitted 1/T∞ = {intercept:e} is not positive")));
    }
    let t_inf = 1.0 / intercept;
    let r = slope / intercept;
    let predictions = samples.iter().map(|s| t_inf / (1.0 + r / s.period)).collect();
    Ok(ThroughputFit { t_inf, r, predictions })
}

/// Reads `P,tokens_per_second` rows; a non-numeric first line is a header.
pub fn parse_throughput_csv(text: &str) -> Result<Vec<ThroughputSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [p, t] => p.parse::<f64>().ok().zip(t.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((period, tokens_per_second)) => out.push(ThroughputSample { period, tokens_per_second }),
            None if i == 0 => continue,
            None => return Err(Error::Parse(format!("line {}: expected 'P,tokens_per_second', got '{line}'", i + 1))),
        }
    }
    Ok(out)
}
