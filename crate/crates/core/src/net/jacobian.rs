//! Layer Jacobians, adjacent alignment and low-rank gradient propagation.

use crate::bounds::BoundCheck;
use crate::error::{Error, Result};
use crate::fd;
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::spectral::{alignment, AlignmentResult, DEFAULT_DEGENERACY_TOL};
use crate::svd::numeric_rank;

use super::model::{attention_backward, attention_forward, block_forward, forward, AttnWeights, ForwardTrace};
use super::ModelParams;

/// Largest `T·d` for which a dense layer Jacobian is formed.
pub const JACOBIAN_BUDGET: usize = 512;

/// `∂vec(H⁽ˡ⁾)/∂vec(H⁽ˡ⁻¹⁾)` for 1-based `layer`, by central differences
/// through that block alone, evaluated at the hidden state in `trace`.
pub fn layer_jacobian(params: &ModelParams, layer: usize, trace: &ForwardTrace, fd_step: f64) -> Result<Matrix> {
    let depth = params.config.n_layers;
    if layer == 0 || layer > depth {
        return Err(Error::Argument(format!("layer {layer} outside 1..={depth}")));
    }
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::Argument(format!("fd_step must be positive, got {fd_step}")));
    }
    let input = &trace.hidden[layer - 1];
    let (t, d) = input.shape();
    if t * d > JACOBIAN_BUDGET {
        return Err(Error::Size(format!("T·d = {} exceeds the Jacobian budget {JACOBIAN_BUDGET}", t * d)));
    }
    let f = |x: &[f64]| {
        block_forward(params, layer - 1, &Matrix::from_vec_unchecked(t, d, x.to_vec()))
            .expect("shape fixed by trace")
            .into_vec()
    };
    Ok(fd::jacobian(f, input.as_slice(), fd_step))
}

/// `Align(J⁽ˡ⁺¹⁾, J⁽ˡ⁾)` for `ℓ = 1 … L−1` on one sequence.
pub fn adjacent_alignment_profile(params: &ModelParams, tokens: &[usize], fd_step: f64) -> Result<Vec<AlignmentResult>> {
    let trace = forward(params, tokens)?;
    let jacobians = (1..=params.config.n_layers)
        .map(|l| layer_jacobian(params, l, &trace, fd_step))
        .collect::<Result<Vec<_>>>()?;
    jacobians
        .windows(2)
        .map(|pair| alignment(&pair[1], &pair[0], DEFAULT_DEGENERACY_TOL))
        .collect()
}

fn random_rank_r(rows: usize, cols: usize, r: usize, rng: &mut SplitMix64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for _ in 0..r {
        let outer = Matrix::outer(&rng.normal_vec(rows), &rng.normal_vec(cols));
        m.add_assign(&outer).expect("same shape");
    }
    m
}

pub const LOWRANK_TOL: f64 = 1e-9;

/// Feeds a rank-`r` hidden state through the first block's attention
/// sublayer, backpropagates a rank-`r` cohidden state, and compares the
/// largest numeric rank among the four projection gradients with `r`.
pub fn check_lowrank_propagation(params: &ModelParams, rank_r: usize, seed: u64) -> Result<BoundCheck> {
    if rank_r == 0 {
        return Err(Error::Argument("rank_r must be at least 1".into()));
    }
    let cfg = &params.config;
    let (t, d) = (cfg.seq_len, cfg.d_model);
    let mut rng = SplitMix64::new(seed);
    let h = random_rank_r(t, d, rank_r, &mut rng);
    let g = random_rank_r(t, d, rank_r, &mut rng);
    let b = &params.blocks[0];
    let w = AttnWeights { wq: &b.wq, wk: &b.wk, wv: &b.wv, wo: &b.wo };
    let (_, cache) = attention_forward(&h, w, cfg.n_heads);
    let (_, grads) = attention_backward(&h, w, &cache, &g, cfg.n_heads);
    let mut max_rank = 0;
    for gw in [&grads.wq, &grads.wk, &grads.wv, &grads.wo] {
        max_rank = max_rank.max(numeric_rank(gw, LOWRANK_TOL)?);
    }
    Ok(BoundCheck::upper(
        max_rank as f64,
        rank_r as f64,
        format!("lowrank-propagation r={rank_r} T={t} d={d}"),
    ))
}
