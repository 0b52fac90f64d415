//! Diagonal singular-value dynamics of the stable-rank feedback mechanism.
//!
//! With singular directions frozen, a gradient step moves each singular
//! value by `−η·c_i`, where `c_i` is the covariance between the output
//! cohidden and the input hidden state projected on the `i`-th pair.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::spectral::stable_rank_of_spectrum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSpec {
    pub s0: Vec<f64>,
    pub cov: Vec<f64>,
    pub eta: f64,
    pub steps: usize,
}

impl FeedbackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.s0.is_empty() || self.s0.len() != self.cov.len() {
            return Err(Error::Argument(format!(
                "need matching non-empty spectra, got {} singular values and {} covariances",
                self.s0.len(),
                self.cov.len()
            )));
        }
        if self.s0.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Argument("singular values must be positive and finite".into()));
        }
        if self.s0.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Argument("singular values must be in descending order".into()));
        }
        if self.cov.iter().any(|&c| !(c < 0.0 && c.is_finite())) {
            return Err(Error::Argument("covariances must be negative and finite".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Argument(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// `c₁/c_i > s₁/s_i` for every `i > 1`.
pub fn ratio_condition(s: &[f64], c: &[f64]) -> bool {
    (1..s.len()).all(|i| c[0] / c[i] > s[0] / s[i])
}

pub fn check_ratio_condition(spec: &FeedbackSpec) -> Result<bool> {
    spec.validate()?;
    Ok(ratio_condition(&spec.s0, &spec.cov))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub s: Vec<f64>,
    pub srank: f64,
    /// The spectrum was replaced by its norm-restored sign at this step.
    pub restored: bool,
    /// Ratio condition evaluated on the spectrum and covariances that drive
    /// the next step.
    pub condition: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn srank(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.srank).collect()
    }

    pub fn min_srank(&self) -> f64 {
        self.points.iter().map(|p| p.srank).fold(f64::INFINITY, f64::min)
    }

    /// `step, s_1..s_n, srank, restored`.
    pub fn to_csv(&self) -> String {
        let n = self.points.first().map_or(0, |p| p.s.len());
        let mut out = String::from("step");
        for i in 1..=n {
            write!(out, ",s_{i}").expect("string write");
        }
        out.push_str(",srank,restored\n");
        for p in &self.points {
            write!(out, "{}", p.step).expect("string write");
            for s in &p.s {
                write!(out, ",{s:.17e}").expect("string write");
            }
            writeln!(out, ",{:.17e},{}", p.srank, u8::from(p.restored)).expect("string write");
        }
        out
    }
}

fn point(step: usize, s: &[f64], c: &[f64], restored: bool) -> TrajectoryPoint {
    TrajectoryPoint { step, s: s.to_vec(), srank: stable_rank_of_spectrum(s), restored, condition: ratio_condition(s, c) }
}

fn run(spec: &FeedbackSpec, refresh_cov: bool, period: Option<usize>) -> Result<Trajectory> {
    spec.validate()?;
    let mut s = spec.s0.clone();
    let mut c = spec.cov.clone();
    let mut traj = Trajectory { points: vec![point(0, &s, &c, false)] };
    for step in 1..=spec.steps {
        for (si, ci) in s.iter_mut().zip(&c) {
            *si -= spec.eta * ci;
        }
        if let Some(i) = (1..s.len()).find(|&i| s[i] > s[i - 1]) {
            return Err(Error::RegimeExit {
                step,
                reason: format!("s_{} = {:e} overtook s_{} = {:e}", i + 1, s[i], i, s[i - 1]),
            });
        }
        if refresh_cov {
            // Covariances track their singular value, which leaves c₁/c_i ÷ s₁/s_i invariant.
            for ((ci, c0), (si, s0)) in c.iter_mut().zip(&spec.cov).zip(s.iter().zip(&spec.s0)) {
                *ci = c0 * si / s0;
            }
            if ratio_condition(&spec.s0, &spec.cov) && !ratio_condition(&s, &c) {
                return Err(Error::RegimeExit { step, reason: "refreshed covariances lost the ratio condition".into() });
            }
        }
        let restored = period.is_some_and(|p| step % p == 0);
        if restored {
            let level = s.iter().map(|v| v * v).sum::<f64>().sqrt() / (s.len() as f64).sqrt();
            s.iter_mut().for_each(|v| *v = level);
        }
        traj.points.push(point(step, &s, &c, restored));
    }
    Ok(traj)
}

/// Iterates `s_i ← s_i − η·c_i`, halting with a regime exit if the ordering
/// of the singular values breaks.
pub fn simulate_feedback(spec: &FeedbackSpec, refresh_cov: bool) -> Result<Trajectory> {
    run(spec, refresh_cov, None)
}

/// As [`simulate_feedback`] with fixed covariances, replacing the spectrum
/// by `‖s‖₂/√n` in every entry each `period` steps.
pub fn simulate_feedback_with_msign(spec: &FeedbackSpec, period: usize) -> Result<Trajectory> {
    if period == 0 {
        return Err(Error::Argument("period must be at least 1".into()));
    }
    run(spec, false, Some(period))
}

/// Random spec with `n ∈ [2, 6]` singular values.
///
/// Satisfying specs use `c_i = −k·s_i·r_i` with `1 = r₁ > r₂ ≥ … `, so the
/// ratio condition holds and the ordering of `s` is preserved forever.
/// Violating specs use `r_i > r₁` for every `i > 1`, which breaks the
/// condition at every index; they run a single step, and the gap between
/// neighbouring singular values is wide enough that one step keeps the order.
pub fn random_spec(rng: &mut SplitMix64, satisfying: bool) -> FeedbackSpec {
    let n = rng.range(2, 6);
    let mut s0 = vec![rng.uniform(1.0, 3.0)];
    for _ in 1..n {
        let prev = *s0.last().expect("non-empty");
        s0.push(prev * rng.uniform(0.3, 0.95));
    }
    let mut r = vec![1.0];
    for _ in 1..n {
        let next = if satisfying {
            r.last().expect("non-empty") * rng.uniform(0.2, 0.95)
        } else {
            1.0 + rng.uniform(0.05, 0.5)
        };
        r.push(next);
    }
    let k = rng.uniform(0.5, 2.0);
    let cov = s0.iter().zip(&r).map(|(s, ri)| -k * s * ri).collect();
    FeedbackSpec { s0, cov, eta: 0.01 / k, steps: if satisfying { 50 } else { 1 } }
}
