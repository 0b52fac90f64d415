//! Stable rank, matrix alignment, logit margin and the matrix-sign transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::svd::{singular_values, svd, SvdFactors, DEFAULT_RANK_TOL};

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-6;

/// `‖W‖_F² / ‖W‖₂²`, with the zero matrix mapped to 0.
pub fn stable_rank(w: &Matrix) -> f64 {
    let frob2 = w.as_slice().iter().map(|x| x * x).sum::<f64>();
    if frob2 == 0.0 {
        return 0.0;
    }
    let spec = crate::svd::spectral_norm(w);
    frob2 / (spec * spec)
}

/// Stable rank from an already-known spectrum.
pub fn stable_rank_of_spectrum(s: &[f64]) -> f64 {
    let top = s.iter().cloned().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    s.iter().map(|x| x * x).sum::<f64>() / (top * top)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub srank: f64,
    pub frob: f64,
    pub spec: f64,
    pub rank: usize,
}

impl SpectralReport {
    pub fn of(w: &Matrix, rank_tol: f64) -> Result<Self> {
        let f = svd(w, rank_tol)?;
        let frob2 = w.as_slice().iter().map(|x| x * x).sum::<f64>();
        let spec = f.s.first().copied().unwrap_or(0.0);
        let srank = if spec == 0.0 { 0.0 } else { frob2 / (spec * spec) };
        let frob = frob2.sqrt();
        Ok(Self { srank, frob, spec, rank: f.rank() })
    }

    /// JSON object with every real printed to 17 significant digits.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"srank\":{:.16e},\"frob\":{:.16e},\"spec\":{:.16e},\"rank\":{}}}",
            self.srank, self.frob, self.spec, self.rank
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentResult {
    pub value: f64,
    pub a_top_gap: f64,
    pub b_top_gap: f64,
    pub degenerate: bool,
}

fn top_gap(s: &[f64]) -> f64 {
    match s {
        [] => 0.0,
        [_] => 1.0,
        [s1, s2, ..] if *s1 > 0.0 => (s1 - s2) / s1,
        _ => 0.0,
    }
}

/// `|v_{A,1}ᵀ u_{B,1}|`: how well the input direction A amplifies most
/// matches the output direction B amplifies most, for the product `A·B`.
pub fn alignment(a: &Matrix, b: &Matrix, degeneracy_tol: f64) -> Result<AlignmentResult> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "alignment needs a.cols == b.rows, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let fa = svd(a, DEFAULT_RANK_TOL)?;
    let fb = svd(b, DEFAULT_RANK_TOL)?;
    alignment_from_factors(&fa, &fb, &singular_values(a)?, &singular_values(b)?, degeneracy_tol)
}

pub(crate) fn alignment_from_factors(
    fa: &SvdFactors,
    fb: &SvdFactors,
    sa: &[f64],
    sb: &[f64],
    degeneracy_tol: f64,
) -> Result<AlignmentResult> {
    let (Some(va), Some(ub)) = (fa.v1(), fb.u1()) else {
        return Err(Error::UndefinedAlignment("zero matrix operand".into()));
    };
    let a_top_gap = top_gap(sa);
    let b_top_gap = top_gap(sb);
    let value = dot(&va, &ub).abs().min(1.0);
    Ok(AlignmentResult {
        value,
        a_top_gap,
        b_top_gap,
        degenerate: a_top_gap < degeneracy_tol || b_top_gap < degeneracy_tol,
    })
}

/// `U·Vᵀ` from the reduced SVD: every nonzero singular value set to one.
pub fn matrix_sign(w: &Matrix, rank_tol: f64) -> Result<Matrix> {
    let f = svd(w, rank_tol)?;
    if f.rank() == 0 {
        return Err(Error::Degenerate("matrix sign of the zero matrix".into()));
    }
    Ok(f.u.matmul_t(&f.v)?)
}

/// Matrix sign rescaled back to the input's Frobenius norm, so every
/// singular value becomes `‖W‖_F / √rank`.
pub fn msign_restore(w: &Matrix, rank_tol: f64) -> Result<Matrix> {
    let sign = matrix_sign(w, rank_tol)?;
    let scale = w.frobenius_norm() / sign.frobenius_norm();
    Ok(sign.scale(scale))
}

/// Smallest per-row gap between the largest and second-largest entry.
pub fn logit_margin(s: &Matrix) -> Result<f64> {
    if s.cols() < 2 {
        return Err(Error::Shape(format!("logit margin needs at least 2 columns, got {}", s.cols())));
    }
    let mut margin = f64::INFINITY;
    for i in 0..s.rows() {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &x in s.row(i) {
            if x > first {
                second = first;
                first = x;
            } else if x > second {
                second = x;
            }
        }
        margin = margin.min(first - second);
    }
    Ok(margin)
}

/// Geometric mean of stable ranks.
pub fn geo_mean_srank(ws: &[Matrix]) -> Result<f64> {
    if ws.is_empty() {
        return Err(Error::Argument("geometric mean of an empty list".into()));
    }
    let mut log_sum = 0.0;
    for (i, w) in ws.iter().enumerate() {
        let sr = stable_rank(w);
        if sr == 0.0 {
            return Err(Error::Argument(format!("matrix {i} is zero")));
        }
        log_sum += sr.ln();
    }
    Ok((log_sum / ws.len() as f64).exp())
}
