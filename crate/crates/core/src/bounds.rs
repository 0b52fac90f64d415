//! Executable checks for the gradient-explosion inequalities.
//!
//! Each `check_*` measures a left-hand side numerically and compares it with
//! the closed-form bound. The bounds are proven, so on valid inputs every
//! check must come back satisfied; a violation points at the validator or at
//! the linear algebra underneath it.

use serde::Serialize;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::fd;
use crate::matrix::{dot, norm2, Matrix};
use crate::rng::SplitMix64;
use crate::spectral::{alignment, logit_margin, stable_rank, DEFAULT_DEGENERACY_TOL};
use crate::svd::{spectral_norm, svd, DEFAULT_RANK_TOL};

/// Relative fd discrepancy above which an instance is considered unreliable.
pub const FD_AGREEMENT_TOL: f64 = 1e-3;
pub const IDENTITY_REL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Lower,
    Upper,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
    pub kind: BoundKind,
    pub context: String,
}

impl BoundCheck {
    fn abs_tol(lhs: f64, rhs: f64) -> f64 {
        1e-9 * lhs.abs().max(rhs.abs()).max(1.0)
    }

    fn finish(lhs: f64, rhs: f64, slack: f64, kind: BoundKind, context: impl Into<String>) -> Self {
        let satisfied = slack >= -Self::abs_tol(lhs, rhs);
        Self { lhs, rhs, satisfied, slack, kind, context: context.into() }
    }

    /// `lhs ≥ rhs`.
    pub fn lower(lhs: f64, rhs: f64, context: impl Into<String>) -> Self {
        Self::finish(lhs, rhs, lhs - rhs, BoundKind::Lower, context)
    }

    /// `lhs ≤ rhs`.
    pub fn upper(lhs: f64, rhs: f64, context: impl Into<String>) -> Self {
        Self::finish(lhs, rhs, rhs - lhs, BoundKind::Upper, context)
    }

    /// `lhs = rhs` to `rel_tol`.
    pub fn identity(lhs: f64, rhs: f64, rel_tol: f64, context: impl Into<String>) -> Self {
        let scale = lhs.abs().max(rhs.abs());
        Self::finish(lhs, rhs, rel_tol * scale - (lhs - rhs).abs(), BoundKind::Identity, context)
    }
}

/// A check either runs or is skipped because its inputs fall outside the
/// regime where the measurement is meaningful.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Checked(BoundCheck),
    Skipped(String),
}

impl Outcome {
    pub fn check(&self) -> Option<&BoundCheck> {
        match self {
            Outcome::Checked(c) => Some(c),
            Outcome::Skipped(_) => None,
        }
    }

    pub fn unwrap_checked(self) -> BoundCheck {
        match self {
            Outcome::Checked(c) => c,
            Outcome::Skipped(why) => panic!("check was skipped: {why}"),
        }
    }
}

/// `‖AB‖₂ ≥ ‖A‖₂‖B‖₂·Align(A, B)`.
pub fn check_alignment_product(a: &Matrix, b: &Matrix) -> Result<Outcome> {
    let al = alignment(a, b, DEFAULT_DEGENERACY_TOL)?;
    if al.degenerate {
        return Ok(Outcome::Skipped(format!(
            "degenerate top singular value (gaps {:.3e}, {:.3e})",
            al.a_top_gap, al.b_top_gap
        )));
    }
    let lhs = spectral_norm(&a.matmul(b)?);
    let rhs = spectral_norm(a) * spectral_norm(b) * al.value;
    Ok(Outcome::Checked(BoundCheck::lower(lhs, rhs, "alignment-product")))
}

/// Smallest adjacent alignment `Align(J⁽ℓ⁺¹⁾, J⁽ℓ⁾)` and smallest factor norm
/// of a chain given in application order.
pub fn chain_statistics(js: &[Matrix]) -> Result<(f64, f64)> {
    let mut a_min = 1.0_f64;
    for pair in js.windows(2) {
        a_min = a_min.min(alignment(&pair[1], &pair[0], DEFAULT_DEGENERACY_TOL)?.value);
    }
    let m_min = js.iter().map(spectral_norm).fold(f64::INFINITY, f64::min);
    Ok((a_min, m_min))
}

/// `‖J⁽ᴸ⁾···J⁽¹⁾‖₂ ≥ (aM)ᴸ / a` for a chain in application order
/// (`js[0]` acts first).
pub fn check_jacobian_product(js: &[Matrix], a: f64, m: f64) -> Result<BoundCheck> {
    if js.is_empty() {
        return Err(Error::Argument("empty Jacobian chain".into()));
    }
    if !(a > 0.0) {
        return Err(Error::Argument(format!("alignment floor must be positive, got {a}")));
    }
    for (l, j) in js.iter().enumerate() {
        let norm = spectral_norm(j);
        if norm < m {
            return Err(Error::Precondition(format!("factor {} has norm {norm:e} < M = {m:e}", l + 1)));
        }
    }
    for (l, pair) in js.windows(2).enumerate() {
        let al = alignment(&pair[1], &pair[0], DEFAULT_DEGENERACY_TOL)?;
        if al.value < a {
            return Err(Error::Precondition(format!(
                "Align({}, {}) = {:e} < a = {a:e}",
                l + 2,
                l + 1,
                al.value
            )));
        }
    }
    let mut product = js[0].clone();
    for j in &js[1..] {
        product = j.matmul(&product)?;
    }
    let depth = js.len() as i32;
    let lhs = spectral_norm(&product);
    let rhs = m.powi(depth) * a.powi(depth - 1);
    Ok(BoundCheck::lower(lhs, rhs, format!("jacobian-product depth {depth}")))
}

fn random_orthogonal(dim: usize, rng: &mut SplitMix64) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = rng.normal_vec(dim);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut q = Matrix::zeros(dim, dim);
    for (j, b) in basis.iter().enumerate() {
        q.set_col(j, b);
    }
    q
}

/// Builds a Jacobian chain (application order) whose adjacent alignments are
/// at least `a_target` and whose factor norms are at least `m_target`.
///
/// Every factor is `Q · (σ u vᵀ ⊕ R) · Qᵀ` for one shared random rotation
/// `Q`: the dominant rank-one part lives in a fixed plane, where each
/// factor's input direction is the previous output direction rotated by an
/// angle no larger than `acos(a_target)`; the remainder `R` acts on the
/// orthogonal complement with norm at most `σ/2`. The dominant pathway never
/// mixes with the remainder, so the product bound holds exactly for the
/// measured `a` and `M`.
pub fn alignment_chain_builder(
    depth: usize,
    dim: usize,
    a_target: f64,
    m_target: f64,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if depth == 0 || dim < 2 || !(a_target > 0.0 && a_target <= 1.0) || !(m_target > 0.0) {
        return Err(Error::Construction(format!(
            "need depth ≥ 1, dim ≥ 2, a ∈ (0,1], M > 0; got depth {depth}, dim {dim}, a {a_target}, M {m_target}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let q = random_orthogonal(dim, &mut rng);
    let max_angle = a_target.acos();
    let mut out_angle = rng.uniform(0.0, std::f64::consts::TAU);
    let mut chain = Vec::with_capacity(depth);
    for l in 0..depth {
        let in_angle = if l == 0 {
            rng.uniform(0.0, std::f64::consts::TAU)
        } else {
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            out_angle + sign * max_angle * rng.uniform(0.0, 0.99)
        };
        let next_out = rng.uniform(0.0, std::f64::consts::TAU);
        let sigma = m_target * rng.uniform(1.0, 1.5);
        let mut core = Matrix::zeros(dim, dim);
        let u = [next_out.cos(), next_out.sin()];
        let v = [in_angle.cos(), in_angle.sin()];
        for i in 0..2 {
            for j in 0..2 {
                core.set(i, j, sigma * u[i] * v[j]);
            }
        }
        if dim > 2 {
            let r = Matrix::random_normal(dim - 2, dim - 2, 1.0, &mut rng);
            let rn = spectral_norm(&r);
            if rn > 0.0 {
                let target = 0.5 * sigma * rng.uniform(0.2, 1.0);
                let r = r.scale(target / rn);
                for i in 0..dim - 2 {
                    for j in 0..dim - 2 {
                        core.set(i + 2, j + 2, r.get(i, j));
                    }
                }
            }
        }
        chain.push(q.matmul(&core)?.matmul_t(&q)?);
        out_angle = next_out;
    }
    Ok(chain)
}

/// `‖W‖₂ = ‖W‖_F / √srank(W)`.
pub fn check_linear_srank_identity(w: &Matrix) -> Result<BoundCheck> {
    let sr = stable_rank(w);
    if sr == 0.0 {
        return Err(Error::Degenerate("stable-rank identity of the zero matrix".into()));
    }
    let lhs = spectral_norm(w);
    let rhs = w.frobenius_norm() / sr.sqrt();
    Ok(BoundCheck::identity(lhs, rhs, IDENTITY_REL_TOL, "linear-srank-identity"))
}

fn softmax_rows(s: &Matrix) -> Matrix {
    let mut a = s.clone();
    for i in 0..a.rows() {
        softmax_in_place(a.row_mut(i));
    }
    a
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Single-head, unmasked attention `softmax(H W_Q W_Kᵀ Hᵀ / √d_k) · H W_V W_O`.
struct AttentionInstance<'a> {
    wq: &'a Matrix,
    wk: &'a Matrix,
    wv: &'a Matrix,
    wo: &'a Matrix,
    inv_sqrt_dk: f64,
}

impl AttentionInstance<'_> {
    fn scores(&self, h: &Matrix) -> Matrix {
        let q = h.matmul_unchecked(self.wq);
        let k = h.matmul_unchecked(self.wk);
        q.matmul_t(&k).expect("shapes checked").scale(self.inv_sqrt_dk)
    }

    fn output(&self, h: &Matrix) -> Matrix {
        let a = softmax_rows(&self.scores(h));
        a.matmul_unchecked(&h.matmul_unchecked(self.wv).matmul_unchecked(self.wo))
    }
}

/// Attention Jacobian bound, in the form that carries `‖H‖₂²` on the
/// attention-pathway term:
/// `‖A‖₂‖W_V‖₂‖W_O‖₂ + 4χ‖H‖₂²/√d_k · ‖W_Q‖₂‖W_K‖₂‖W_V‖₂‖W_O‖₂`,
/// with `χ = min((n−1)e^{−γ}, 1)` and `γ` the logit margin of the scaled
/// scores that enter the softmax.
#[allow(clippy::too_many_arguments)]
pub fn check_attention_jacobian(
    h: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    wo: &Matrix,
    dk: usize,
    fd_step: f64,
) -> Result<Outcome> {
    if !(1e-7..=1e-3).contains(&fd_step) {
        return Err(Error::Argument(format!("fd_step must lie in [1e-7, 1e-3], got {fd_step}")));
    }
    let (n, d) = h.shape();
    if wq.shape() != (d, dk) || wk.shape() != (d, dk) || wv.rows() != d || wo.rows() != wv.cols() {
        return Err(Error::Shape(format!(
            "attention shapes: H {n}x{d}, W_Q {:?}, W_K {:?}, W_V {:?}, W_O {:?}, d_k {dk}",
            wq.shape(),
            wk.shape(),
            wv.shape(),
            wo.shape()
        )));
    }
    let inst = AttentionInstance { wq, wk, wv, wo, inv_sqrt_dk: 1.0 / (dk as f64).sqrt() };
    let lhs_at = |step: f64| {
        let jac = fd::jacobian(
            |x| inst.output(&Matrix::from_vec_unchecked(n, d, x.to_vec())).into_vec(),
            h.as_slice(),
            step,
        );
        spectral_norm(&jac)
    };
    let lhs = lhs_at(fd_step);
    let lhs_half = lhs_at(fd_step / 2.0);
    if fd::relative_gap(lhs, lhs_half) > FD_AGREEMENT_TOL {
        return Ok(Outcome::Skipped(format!("fd estimates disagree: {lhs:e} vs {lhs_half:e}")));
    }

    let scores = inst.scores(h);
    let a = softmax_rows(&scores);
    let chi = if n < 2 {
        0.0
    } else {
        let gamma = logit_margin(&scores)?;
        ((n - 1) as f64 * (-gamma).exp()).min(1.0)
    };
    let (nq, nk, nv, no) = (spectral_norm(wq), spectral_norm(wk), spectral_norm(wv), spectral_norm(wo));
    let nh = spectral_norm(h);
    let value_path = spectral_norm(&a) * nv * no;
    let attention_path = if nq == 0.0 || nk == 0.0 {
        0.0
    } else {
        4.0 * chi * nh * nh * inst.inv_sqrt_dk * nq * nk * nv * no
    };
    Ok(Outcome::Checked(BoundCheck::upper(
        lhs,
        value_path + attention_path,
        format!("attention n={n} d={d} d_k={dk} chi={chi:.3e}"),
    )))
}

/// `‖diag(a) − aaᵀ‖₂ ≤ 2(1 − max a)` for `a = softmax(row)`.
pub fn check_softmax_row_bound(logits_row: &[f64]) -> Result<BoundCheck> {
    if logits_row.len() < 2 {
        return Err(Error::Shape("softmax bound needs at least 2 logits".into()));
    }
    let mut a = logits_row.to_vec();
    softmax_in_place(&mut a);
    let n = a.len();
    let mut jac = Matrix::outer(&a, &a).scale(-1.0);
    for i in 0..n {
        jac.set(i, i, jac.get(i, i) + a[i]);
    }
    let lhs = spectral_norm(&jac);
    let top = (0..n).fold(0, |best, i| if a[i] > a[best] { i } else { best });
    // 1 − max a, summed directly to avoid cancellation near one-hot rows.
    let rest: f64 = a.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, x)| x).sum();
    Ok(BoundCheck::upper(lhs, 2.0 * rest, format!("softmax n={n}")))
}

/// `y = φ(h W₁) W₂` for a row vector `h`.
fn mlp_forward(w1: &Matrix, w2: &Matrix, h: &[f64], act: Activation) -> Vec<f64> {
    let z = w1.t_matvec(h).expect("shapes checked");
    let a: Vec<f64> = z.into_iter().map(|x| act.apply(x)).collect();
    w2.t_matvec(&a).expect("shapes checked")
}

/// `‖∂y/∂h‖₂ ≤ L_φ ‖W₁‖_F ‖W₂‖_F / √(srank(W₁)·srank(W₂))`.
pub fn check_mlp_jacobian(
    w1: &Matrix,
    w2: &Matrix,
    h: &[f64],
    activation: Activation,
    fd_step: f64,
) -> Result<Outcome> {
    if w1.rows() != h.len() || w2.rows() != w1.cols() {
        return Err(Error::Shape(format!(
            "MLP shapes: h {}, W₁ {:?}, W₂ {:?}",
            h.len(),
            w1.shape(),
            w2.shape()
        )));
    }
    if !(fd_step > 0.0) {
        return Err(Error::Argument(format!("fd_step must be positive, got {fd_step}")));
    }
    let lhs_at = |step: f64| spectral_norm(&fd::jacobian(|x| mlp_forward(w1, w2, x, activation), h, step));
    let lhs = lhs_at(fd_step);
    let lhs_half = lhs_at(fd_step / 2.0);
    if fd::relative_gap(lhs, lhs_half) > FD_AGREEMENT_TOL && lhs.max(lhs_half) > 1e-12 {
        return Ok(Outcome::Skipped(format!("fd estimates disagree: {lhs:e} vs {lhs_half:e}")));
    }
    let (s1, s2) = (stable_rank(w1), stable_rank(w2));
    let rhs = if s1 == 0.0 || s2 == 0.0 {
        0.0
    } else {
        activation.lipschitz() * w1.frobenius_norm() * w2.frobenius_norm() / (s1 * s2).sqrt()
    };
    Ok(Outcome::Checked(BoundCheck::upper(lhs, rhs, format!("mlp {activation}"))))
}

/// `C·((aM)^{2L} − 1)/((aM)² − 1)` with `C = a²γ²·n_w·‖∂L/∂h⁽ᴸ⁾‖²`; the
/// series limit `C·L` when `aM = 1`.
pub fn total_gradient_floor(a: f64, gamma: f64, m: f64, depth: usize, n_w: usize, g_last_norm: f64) -> f64 {
    let c = a * a * gamma * gamma * n_w as f64 * g_last_norm * g_last_norm;
    let ratio = (a * m).powi(2);
    if (ratio - 1.0).abs() < 1e-9 {
        // Closed form loses precision near the unit ratio; sum directly.
        return c * (0..depth).map(|k| ratio.powi(k as i32)).sum::<f64>();
    }
    c * (ratio.powi(depth as i32) - 1.0) / (ratio - 1.0)
}

/// `a·γ·(aM)^{L−i}·‖∂L/∂h⁽ᴸ⁾‖` for 1-based `layer`.
pub fn weight_gradient_floor(a: f64, gamma: f64, m: f64, depth: usize, layer: usize, g_last_norm: f64) -> Result<f64> {
    if layer == 0 || layer > depth {
        return Err(Error::Argument(format!("layer {layer} outside 1..={depth}")));
    }
    Ok(a * gamma * (a * m).powi((depth - layer) as i32) * g_last_norm)
}

/// Deep linear chain satisfying the gradient-alignment assumptions by
/// construction, with measured weight gradients alongside their floors.
#[derive(Clone, Debug)]
pub struct GradientWitness {
    pub a: f64,
    pub m: f64,
    pub gamma: f64,
    pub n_w: usize,
    pub g_last_norm: f64,
    /// Per layer (1-based order), smallest column-gradient norm vs. floor.
    pub per_layer: Vec<BoundCheck>,
    /// Sum of squared weight-gradient Frobenius norms vs. total floor.
    pub total: BoundCheck,
}

/// Layer `i` computes `h⁽ⁱ⁾ = J⁽ⁱ⁾h⁽ⁱ⁻¹⁾ + W⁽ⁱ⁾x⁽ⁱ⁾`. The chain is fully
/// aligned, the loss gradient lies along the last factor's top output
/// direction, and every `|x⁽ⁱ⁾_j| ≥ 1`, so each column gradient
/// `x_j·(J⁽ⁱ⁺¹:ᴸ⁾)ᵀ g` has local sensitivity at least `γ = 1` along the
/// dominant backpropagated direction.
pub fn weight_gradient_witness(depth: usize, dim: usize, n_w: usize, m_target: f64, seed: u64) -> Result<GradientWitness> {
    let chain = alignment_chain_builder(depth, dim, 1.0, m_target, seed)?;
    let (a, m) = chain_statistics(&chain)?;
    let mut rng = SplitMix64::derive(seed, 1);
    let last = svd(chain.last().expect("depth ≥ 1"), DEFAULT_RANK_TOL)?;
    let g_last_norm = rng.uniform(0.5, 2.0);
    let mut delta: Vec<f64> = last.u1().expect("nonzero factor").iter().map(|x| x * g_last_norm).collect();
    let gamma = 1.0;
    let mut per_layer = vec![None; depth];
    let mut total_sq = 0.0;
    for layer in (1..=depth).rev() {
        let x: Vec<f64> = (0..n_w)
            .map(|_| {
                let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
                sign * rng.uniform(1.0, 1.5)
            })
            .collect();
        // ∂L/∂W⁽ⁱ⁾ = δ xᵀ; column j has norm |x_j|·‖δ‖.
        let grad = Matrix::outer(&delta, &x);
        total_sq += grad.as_slice().iter().map(|v| v * v).sum::<f64>();
        let min_col = (0..n_w).map(|j| norm2(&grad.col(j))).fold(f64::INFINITY, f64::min);
        let floor = weight_gradient_floor(a, gamma, m, depth, layer, g_last_norm)?;
        per_layer[layer - 1] = Some(BoundCheck::lower(min_col, floor, format!("weight-gradient layer {layer}")));
        delta = chain[layer - 1].t_matvec(&delta)?;
    }
    let total = BoundCheck::lower(
        total_sq,
        total_gradient_floor(a, gamma, m, depth, n_w, g_last_norm),
        format!("total-gradient depth {depth}"),
    );
    Ok(GradientWitness {
        a,
        m,
        gamma,
        n_w,
        g_last_norm,
        per_layer: per_layer.into_iter().map(|c| c.expect("every layer visited")).collect(),
        total,
    })
}

/// Aggregate of a randomized sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub theorem: String,
    pub trials: usize,
    pub failures: usize,
    pub skipped: usize,
    pub min_slack: f64,
}

impl SweepSummary {
    pub fn new(theorem: impl Into<String>) -> Self {
        Self { theorem: theorem.into(), trials: 0, failures: 0, skipped: 0, min_slack: f64::INFINITY }
    }

    pub fn record(&mut self, outcome: &Outcome) {
        self.trials += 1;
        match outcome {
            Outcome::Checked(c) => {
                if !c.satisfied {
                    self.failures += 1;
                }
                self.min_slack = self.min_slack.min(c.slack);
            }
            Outcome::Skipped(_) => self.skipped += 1,
        }
    }

    pub fn record_check(&mut self, check: &BoundCheck) {
        self.record(&Outcome::Checked(check.clone()));
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    /// One JSON line with reals printed to 17 significant digits.
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"theorem\":{},\"trials\":{},\"failures\":{},\"skipped\":{},\"min_slack\":{}}}",
            serde_json::to_string(&self.theorem).expect("string serializes"),
            self.trials,
            self.failures,
            self.skipped,
            if self.min_slack.is_finite() { format!("{:.16e}", self.min_slack) } else { "null".into() }
        )
    }
}

pub fn sweep_srank_identity(seed: u64, trials: usize, max_dim: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("stable-rank-identity");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let (r, c) = (rng.range(1, max_dim), rng.range(1, max_dim));
        let w = Matrix::random_normal(r, c, rng.uniform(0.1, 10.0), &mut rng);
        summary.record_check(&check_linear_srank_identity(&w)?);
    }
    Ok(summary)
}

pub fn sweep_alignment_product(seed: u64, trials: usize, dim: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("alignment-product");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let a = Matrix::random_normal(dim, dim, 1.0, &mut rng);
        let b = Matrix::random_normal(dim, dim, 1.0, &mut rng);
        summary.record(&check_alignment_product(&a, &b)?);
    }
    Ok(summary)
}

pub fn sweep_jacobian_product(seed: u64, trials: usize, max_depth: usize, max_dim: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("jacobian-product");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let depth = rng.range(1, max_depth);
        let dim = rng.range(2, max_dim);
        let a_target = if rng.next_f64() < 0.1 { 1.0 } else { rng.uniform(0.05, 1.0) };
        let m_target = rng.uniform(0.5, 2.0);
        let chain = alignment_chain_builder(depth, dim, a_target, m_target, rng.next_u64())?;
        let (a, m) = chain_statistics(&chain)?;
        summary.record_check(&check_jacobian_product(&chain, a, m)?);
    }
    Ok(summary)
}

pub fn sweep_attention(seed: u64, trials: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("attention-jacobian");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let n = rng.range(4, 8);
        let d = rng.range(4, 16);
        let dk = rng.range(1, d);
        let h = Matrix::random_normal(n, d, rng.uniform(0.3, 2.0), &mut rng);
        let w_std = rng.uniform(0.2, 3.0) / (d as f64).sqrt();
        let mut wq = Matrix::random_normal(d, dk, w_std, &mut rng);
        if rng.next_f64() < 0.1 {
            wq = Matrix::zeros(d, dk);
        }
        let wk = Matrix::random_normal(d, dk, w_std, &mut rng);
        let wv = Matrix::random_normal(d, dk, w_std, &mut rng);
        let wo = Matrix::random_normal(dk, d, w_std, &mut rng);
        let step = fd::default_step(h.as_slice());
        summary.record(&check_attention_jacobian(&h, &wq, &wk, &wv, &wo, dk, step)?);
    }
    Ok(summary)
}

pub fn sweep_softmax(seed: u64, trials: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("softmax-row");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let n = rng.range(2, 16);
        let scale = rng.uniform(0.0, 20.0);
        let row: Vec<f64> = (0..n).map(|_| scale * rng.normal()).collect();
        summary.record_check(&check_softmax_row_bound(&row)?);
    }
    Ok(summary)
}

pub fn sweep_mlp(seed: u64, trials: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("mlp-jacobian");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let d = rng.range(1, 16);
        let dff = rng.range(1, 32);
        let act = if t % 2 == 0 { Activation::Gelu } else { Activation::Silu };
        let std = rng.uniform(0.2, 3.0) / (d as f64).sqrt();
        let w1 = Matrix::random_normal(d, dff, std, &mut rng);
        let w2 = Matrix::random_normal(dff, d, std, &mut rng);
        let h = rng.normal_vec(d);
        let step = fd::default_step(&h);
        summary.record(&check_mlp_jacobian(&w1, &w2, &h, act, step)?);
    }
    Ok(summary)
}

pub fn sweep_weight_gradient(seed: u64, trials: usize) -> Result<(SweepSummary, SweepSummary)> {
    let mut per_layer = SweepSummary::new("weight-gradient-floor");
    let mut total = SweepSummary::new("total-gradient-floor");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let depth = rng.range(1, 8);
        let dim = rng.range(2, 12);
        let n_w = rng.range(1, 6);
        let m = rng.uniform(0.5, 2.0);
        let w = weight_gradient_witness(depth, dim, n_w, m, rng.next_u64())?;
        for c in &w.per_layer {
            per_layer.record_check(c);
        }
        total.record_check(&w.total);
    }
    Ok((per_layer, total))
}

/// Largest `|φ′|` on a uniform grid over `[lo, hi]`.
pub fn sampled_derivative_sup(act: Activation, lo: f64, hi: f64, points: usize) -> f64 {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .map(|z| act.derivative(z).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_product_diagonal_example() {
        let c = check_alignment_product(&Matrix::from_diag(&[2.0, 1.0]), &Matrix::from_diag(&[3.0, 1.0]))
            .unwrap()
            .unwrap_checked();
        assert!((c.lhs - 6.0).abs() < 1e-13 && (c.rhs - 6.0).abs() < 1e-13);
        assert!(c.satisfied);
    }

    #[test]
    fn alignment_product_orthogonal_is_vacuous() {
        let swap = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let b = swap.matmul(&Matrix::from_diag(&[2.0, 1.0])).unwrap();
        let c = check_alignment_product(&Matrix::from_diag(&[3.0, 1.0]), &b).unwrap().unwrap_checked();
        assert!(c.rhs.abs() < 1e-13 && c.satisfied);
    }

    #[test]
    fn alignment_product_degenerate_is_skipped() {
        let out = check_alignment_product(&Matrix::identity(3), &Matrix::from_diag(&[2.0, 1.0, 1.0])).unwrap();
        assert!(matches!(out, Outcome::Skipped(_)));
    }

    #[test]
    fn single_factor_chain() {
        let j = Matrix::from_diag(&[3.0, 0.5]);
        let c = check_jacobian_product(&[j], 0.7, 2.0).unwrap();
        assert!((c.lhs - 3.0).abs() < 1e-14 && (c.rhs - 2.0).abs() < 1e-14 && c.satisfied);
    }

    #[test]
    fn identical_diagonal_chain_is_tight() {
        let m0 = 1.7;
        let chain = vec![Matrix::from_diag(&[m0, 0.1]); 5];
        let c = check_jacobian_product(&chain, 1.0, m0).unwrap();
        assert!((c.lhs - m0.powi(5)).abs() < 1e-12);
        assert!((c.rhs - m0.powi(5)).abs() < 1e-12);
        assert!(c.satisfied);
    }

    #[test]
    fn chain_precondition_errors_name_the_pair() {
        let swap = Matrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]).unwrap();
        let chain = vec![Matrix::from_diag(&[2.0, 1.0]), swap];
        match check_jacobian_product(&chain, 0.5, 1.0) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("Align(2, 1)")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            check_jacobian_product(&[Matrix::from_diag(&[0.5, 0.1])], 1.0, 1.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn builder_meets_targets() {
        for seed in 0..20 {
            let a_target = 0.1 + 0.04 * seed as f64;
            let chain = alignment_chain_builder(6, 5, a_target, 1.3, seed).unwrap();
            for pair in chain.windows(2) {
                assert!(alignment(&pair[1], &pair[0], 1e-6).unwrap().value >= a_target);
            }
            assert!(chain.iter().all(|j| spectral_norm(j) >= 1.3));
        }
    }

    #[test]
    fn builder_with_full_alignment_shares_directions() {
        let chain = alignment_chain_builder(4, 6, 1.0, 2.0, 3).unwrap();
        for pair in chain.windows(2) {
            let v_next = svd(&pair[1], 1e-12).unwrap().v1().unwrap();
            let u_prev = svd(&pair[0], 1e-12).unwrap().u1().unwrap();
            assert!((dot(&v_next, &u_prev).abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn builder_rejects_infeasible_targets() {
        assert!(matches!(alignment_chain_builder(0, 3, 0.5, 1.0, 0), Err(Error::Construction(_))));
        assert!(matches!(alignment_chain_builder(2, 1, 0.5, 1.0, 0), Err(Error::Construction(_))));
        assert!(matches!(alignment_chain_builder(2, 3, 0.0, 1.0, 0), Err(Error::Construction(_))));
        assert!(matches!(alignment_chain_builder(2, 3, 0.5, -1.0, 0), Err(Error::Construction(_))));
    }

    #[test]
    fn srank_identity_cases() {
        let c = check_linear_srank_identity(&Matrix::identity(4)).unwrap();
        assert!((c.lhs - 1.0).abs() < 1e-14 && (c.rhs - 1.0).abs() < 1e-14 && c.satisfied);
        let w = Matrix::outer(&[1.0, 2.0, 2.0], &[0.5, -1.0]);
        let c = check_linear_srank_identity(&w).unwrap();
        assert!((c.lhs - w.frobenius_norm()).abs() < 1e-12 && c.satisfied);
    }

    #[test]
    fn attention_with_zero_query_reduces_to_value_path() {
        let mut rng = SplitMix64::new(17);
        let (n, d, dk) = (5, 6, 3);
        let h = Matrix::random_normal(n, d, 1.0, &mut rng);
        let wq = Matrix::zeros(d, dk);
        let wk = Matrix::random_normal(d, dk, 0.5, &mut rng);
        let wv = Matrix::random_normal(d, dk, 0.5, &mut rng);
        let wo = Matrix::random_normal(dk, d, 0.5, &mut rng);
        let c = check_attention_jacobian(&h, &wq, &wk, &wv, &wo, dk, 1e-5).unwrap().unwrap_checked();
        // Uniform attention: J = A ⊗ (W_V W_O)ᵀ exactly.
        let a = Matrix::zeros(n, n).add(&Matrix::outer(&vec![1.0; n], &vec![1.0 / n as f64; n])).unwrap();
        let value_path = spectral_norm(&a) * spectral_norm(&wv) * spectral_norm(&wo);
        let exact = spectral_norm(&a) * spectral_norm(&wv.matmul(&wo).unwrap());
        assert!((c.rhs - value_path).abs() < 1e-12);
        assert!((c.lhs - exact).abs() < 1e-8 * exact, "{} vs {exact}", c.lhs);
        assert!(c.satisfied);
    }

    #[test]
    fn attention_with_zero_value_is_zero() {
        let mut rng = SplitMix64::new(2);
        let h = Matrix::random_normal(4, 4, 1.0, &mut rng);
        let w = Matrix::random_normal(4, 4, 1.0, &mut rng);
        let c = check_attention_jacobian(&h, &w, &w, &Matrix::zeros(4, 4), &w, 4, 1e-5).unwrap().unwrap_checked();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(c.rhs, 0.0);
        assert!(c.satisfied);
    }

    #[test]
    fn attention_rejects_bad_step() {
        let h = Matrix::identity(3);
        let w = Matrix::identity(3);
        for step in [1e-8, 1e-2] {
            assert!(matches!(check_attention_jacobian(&h, &w, &w, &w, &w, 3, step), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn softmax_uniform_and_peaked_rows() {
        for n in [2usize, 3] {
            let c = check_softmax_row_bound(&vec![0.0; n]).unwrap();
            // diag(1/n) − 11ᵀ/n² has eigenvalue 1/n on the complement of 1.
            assert!((c.lhs - 1.0 / n as f64).abs() < 1e-14);
            assert!((c.rhs - 2.0 * (1.0 - 1.0 / n as f64)).abs() < 1e-14);
            assert!(c.satisfied);
        }
        let c = check_softmax_row_bound(&[30.0, 0.0, -1.0]).unwrap();
        assert!(c.rhs < 1e-3 && c.lhs < 1e-3 && c.satisfied);
    }

    #[test]
    fn mlp_zero_first_layer() {
        let w2 = Matrix::identity(3);
        let c = check_mlp_jacobian(&Matrix::zeros(3, 3), &w2, &[0.1, 0.2, 0.3], Activation::Gelu, 1e-5)
            .unwrap()
            .unwrap_checked();
        assert_eq!(c.rhs, 0.0);
        assert!(c.lhs.abs() < 1e-12 && c.satisfied);
    }

    #[test]
    fn mlp_identity_weights_track_the_derivative() {
        for act in [Activation::Gelu, Activation::Silu] {
            let h = [0.3, -0.2, 0.1];
            let c = check_mlp_jacobian(&Matrix::identity(3), &Matrix::identity(3), &h, act, 1e-5)
                .unwrap()
                .unwrap_checked();
            let expected = h.iter().map(|&z| act.derivative(z).abs()).fold(0.0, f64::max);
            assert!((c.lhs - expected).abs() < 1e-8);
            assert!((c.rhs - act.lipschitz()).abs() < 1e-12);
            assert!(c.satisfied);
        }
    }

    #[test]
    fn total_gradient_floor_cases() {
        assert!((total_gradient_floor(0.5, 2.0, 3.0, 1, 4, 1.5) - 0.25 * 4.0 * 4.0 * 2.25).abs() < 1e-12);
        assert!((total_gradient_floor(1.0, 1.0, 1.0, 7, 1, 1.0) - 7.0).abs() < 1e-12);
        // C = 1 with a = 0.9 requires γ²·n_w·g² = 1/0.81.
        let g = 1.0 / 0.9;
        let direct: f64 = (0..4).map(|k| 1.8f64.powi(2 * k)).sum();
        assert!((total_gradient_floor(0.9, 1.0, 2.0, 4, 1, g) - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn total_gradient_floor_is_increasing_in_depth() {
        let mut prev = 0.0;
        for depth in 1..20 {
            let f = total_gradient_floor(0.8, 0.5, 1.6, depth, 3, 0.7);
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn weight_gradient_floor_cases() {
        assert!((weight_gradient_floor(0.5, 2.0, 3.0, 4, 4, 1.5).unwrap() - 1.5).abs() < 1e-14);
        for layer in 1..=5 {
            assert!((weight_gradient_floor(1.0, 0.3, 1.0, 5, layer, 2.0).unwrap() - 0.6).abs() < 1e-14);
        }
        assert!(weight_gradient_floor(1.0, 1.0, 1.0, 3, 0, 1.0).is_err());
        assert!(weight_gradient_floor(1.0, 1.0, 1.0, 3, 4, 1.0).is_err());
    }

    #[test]
    fn witness_meets_floors() {
        let w = weight_gradient_witness(6, 5, 3, 1.4, 99).unwrap();
        assert!(w.per_layer.iter().all(|c| c.satisfied));
        assert!(w.total.satisfied);
        assert!((w.a - 1.0).abs() < 1e-9);
    }

    #[test]
    fn summary_json_line() {
        let mut s = SweepSummary::new("x");
        s.record_check(&BoundCheck::lower(2.0, 1.0, ""));
        assert_eq!(
            s.to_json_line(),
            "{\"theorem\":\"x\",\"trials\":1,\"failures\":0,\"skipped\":0,\"min_slack\":1.0000000000000000e0}"
        );
    }
}
