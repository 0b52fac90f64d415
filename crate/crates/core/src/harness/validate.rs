//! Seeded sweeps over every validator, reported one JSON line per check.

use crate::bounds::{self, BoundCheck, SweepSummary};
use crate::error::Result;
use crate::feedback::{random_spec, simulate_feedback, simulate_feedback_with_msign};
use crate::matrix::Matrix;
use crate::net::{check_lowrank_propagation, init_params, ModelConfig};
use crate::rng::SplitMix64;
use crate::spectral::{msign_restore, stable_rank};
use crate::svd::{numeric_rank, svd, DEFAULT_RANK_TOL};

/// Measured deviations of one MSign rewrite from its contract.
#[derive(Clone, Debug, PartialEq)]
pub struct MSignContract {
    /// `|‖after‖_F − ‖before‖_F| / ‖before‖_F`.
    pub frobenius_rel: f64,
    /// `|srank(after) − rank(after)|`.
    pub srank_gap: f64,
    /// `‖msign(after) − after‖_F / ‖after‖_F`.
    pub idempotence_rel: f64,
    /// `‖(I − P_range(before)) after‖_F / ‖after‖_F`.
    pub range_residual: f64,
}

pub fn msign_contract(w: &Matrix) -> Result<MSignContract> {
    let after = msign_restore(w, DEFAULT_RANK_TOL)?;
    let nb = w.frobenius_norm();
    let na = after.frobenius_norm();
    let rank = numeric_rank(&after, DEFAULT_RANK_TOL)? as f64;
    let twice = msign_restore(&after, DEFAULT_RANK_TOL)?;
    let u = svd(w, DEFAULT_RANK_TOL)?.u;
    let projected = u.matmul(&u.t_matmul(&after)?)?;
    Ok(MSignContract {
        frobenius_rel: (na - nb).abs() / nb,
        srank_gap: (stable_rank(&after) - rank).abs(),
        idempotence_rel: twice.sub(&after)?.frobenius_norm() / na,
        range_residual: after.sub(&projected)?.frobenius_norm() / na,
    })
}

/// Random weight for the MSign sweep: full or deliberately low rank.
pub fn random_weight(rng: &mut SplitMix64) -> Matrix {
    let (r, c) = (rng.range(2, 24), rng.range(2, 24));
    if rng.next_f64() < 0.3 {
        let k = rng.range(1, r.min(c));
        let mut w = Matrix::zeros(r, c);
        for _ in 0..k {
            w.add_assign(&Matrix::outer(&rng.normal_vec(r), &rng.normal_vec(c))).expect("same shape");
        }
        w
    } else {
        Matrix::random_normal(r, c, rng.uniform(0.01, 10.0), rng)
    }
}

pub fn sweep_msign(seed: u64, trials: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("msign-contract");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let c = msign_contract(&random_weight(&mut rng))?;
        let worst = (c.frobenius_rel / 1e-10)
            .max(c.srank_gap / 1e-6)
            .max(c.idempotence_rel / 1e-10)
            .max(c.range_residual / 1e-8);
        // Normalized so that 1 is the tolerance boundary.
        summary.record_check(&BoundCheck::upper(worst, 1.0, "msign-contract"));
    }
    Ok(summary)
}

pub fn sweep_lowrank(seed: u64, trials: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("lowrank-propagation");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let n_heads = rng.range(1, 2);
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 4 * n_heads * rng.range(1, 2),
            n_heads,
            d_ff: 8,
            seq_len: rng.range(4, 10),
            vocab: 4,
            init_std: rng.uniform(0.1, 1.0),
            zero_query_init: rng.next_f64() < 0.2,
            ..Default::default()
        };
        let params = init_params(&cfg, rng.next_u64())?;
        let r = rng.range(1, 3);
        summary.record_check(&check_lowrank_propagation(&params, r, rng.next_u64())?);
    }
    Ok(summary)
}

/// Largest one-step change of stable rank along a trajectory.
pub fn max_srank_increase(srank: &[f64]) -> f64 {
    srank.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn sweep_feedback(seed: u64, trials: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("feedback-srank-decrease");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let spec = random_spec(&mut rng, true);
        let traj = simulate_feedback(&spec, rng.next_f64() < 0.5)?;
        summary.record_check(&BoundCheck::upper(max_srank_increase(&traj.srank()), 0.0, "feedback"));
    }
    Ok(summary)
}

pub fn sweep_feedback_restoration(seed: u64, trials: usize) -> Result<SweepSummary> {
    let mut summary = SweepSummary::new("feedback-msign-restoration");
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        let spec = random_spec(&mut rng, true);
        let period = rng.range(1, 20);
        let traj = simulate_feedback_with_msign(&spec, period)?;
        for p in traj.points.iter().filter(|p| p.restored) {
            summary.record_check(&BoundCheck::identity(p.srank, p.s.len() as f64, 1e-12, "restored srank"));
        }
    }
    Ok(summary)
}

/// Every sweep, in report order.
pub fn cmd_validate_theorems(seed: u64, trials: usize) -> Result<Vec<SweepSummary>> {
    let trials = trials.max(1);
    let (weight, total) = bounds::sweep_weight_gradient(seed, trials)?;
    Ok(vec![
        bounds::sweep_srank_identity(seed, trials, 64)?,
        bounds::sweep_alignment_product(seed, trials, 8)?,
        bounds::sweep_jacobian_product(seed, trials, 8, 16)?,
        bounds::sweep_attention(seed, trials)?,
        bounds::sweep_softmax(seed, trials)?,
        bounds::sweep_mlp(seed, trials)?,
        weight,
        total,
        sweep_lowrank(seed, trials)?,
        sweep_feedback(seed, trials)?,
        sweep_feedback_restoration(seed, trials)?,
        sweep_msign(seed, trials)?,
    ])
}

pub fn report_text(summaries: &[SweepSummary]) -> String {
    summaries.iter().map(|s| s.to_json_line() + "\n").collect()
}
