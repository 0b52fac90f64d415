//! Acceptance suite: one pass/fail line per criterion, all run from a single
//! test so the report prints in order.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use srank_core::activation::Activation;
use srank_core::bounds;
use srank_core::feedback::{check_ratio_condition, random_spec, simulate_feedback, simulate_feedback_with_msign};
use srank_core::harness::{self, RunConfig, RunStatus, ThroughputSample};
use srank_core::net::{backward, check_lowrank_propagation, forward, init_params, ModelConfig, Norm};
use srank_core::optim::MSignTargets;
use srank_core::svd::singular_values;
use srank_core::{msign_restore, stable_rank, Matrix, SplitMix64};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn frob2(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|x| x * x).sum()
}

/// Largest singular value by power iteration on `AᵀA`, independent of the
/// Jacobi SVD.
fn power_norm(a: &Matrix) -> f64 {
    let mut rng = SplitMix64::new(0xACCE);
    let mut x = rng.unit_vector(a.cols());
    let mut est = 0.0;
    for _ in 0..2000 {
        let y = a.t_matvec(&a.matvec(&x).unwrap()).unwrap();
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        x = y.iter().map(|v| v / n).collect();
        let prev = est;
        est = n.sqrt();
        if (est - prev).abs() <= 1e-15 * est {
            break;
        }
    }
    est
}

fn c1_srank_identity() -> Verdict {
    let mut worst = 0.0_f64;
    for t in 0..1000u64 {
        let mut rng = SplitMix64::derive(101, t);
        let (r, c) = (rng.range(1, 64), rng.range(1, 64));
        let w = Matrix::random_normal(r, c, rng.uniform(0.1, 10.0), &mut rng);
        let spec = singular_values(&w).unwrap()[0];
        let f2 = frob2(&w);
        let err = (stable_rank(&w) * spec * spec - f2).abs() / f2;
        worst = worst.max(err);
    }
    ensure(worst <= 1e-8, format!("worst relative error {worst:e}"))?;
    Ok(format!("1000 matrices, worst |srank·spec² − frob²|/frob² = {worst:.2e}"))
}

fn c2_products() -> Verdict {
    let pairs = bounds::sweep_alignment_product(202, 1000, 8).map_err(|e| e.to_string())?;
    ensure(pairs.failures == 0, format!("{} pair violations", pairs.failures))?;
    let mut min_ratio = f64::INFINITY;
    for t in 0..500u64 {
        let mut rng = SplitMix64::derive(203, t);
        let depth = rng.range(1, 8);
        let dim = rng.range(2, 16);
        let a_target = rng.uniform(0.05, 1.0);
        let chain = bounds::alignment_chain_builder(depth, dim, a_target, rng.uniform(0.5, 2.0), rng.next_u64())
            .map_err(|e| e.to_string())?;
        let (a, m) = bounds::chain_statistics(&chain).map_err(|e| e.to_string())?;
        let check = bounds::check_jacobian_product(&chain, a, m).map_err(|e| e.to_string())?;
        // Independent product norm.
        let mut prod = chain[0].clone();
        for j in &chain[1..] {
            prod = j.matmul(&prod).unwrap();
        }
        let lhs = power_norm(&prod);
        let rhs = m.powi(depth as i32) * a.powi(depth as i32 - 1);
        ensure(check.satisfied, format!("chain {t} violated: {check:?}"))?;
        ensure(lhs >= rhs * (1.0 - 1e-9), format!("chain {t}: oracle lhs {lhs:e} < rhs {rhs:e}"))?;
        min_ratio = min_ratio.min(lhs / rhs);
    }
    Ok(format!("1000 pairs (skipped {}), 500 chains, min lhs/rhs = {min_ratio:.4}", pairs.skipped))
}

fn c3_attention_softmax() -> Verdict {
    let att = bounds::sweep_attention(303, 200).map_err(|e| e.to_string())?;
    ensure(att.failures == 0, format!("{} attention violations", att.failures))?;
    ensure(att.skipped * 10 <= att.trials, format!("{} of 200 instances had unreliable fd", att.skipped))?;
    let mut worst = f64::INFINITY;
    for t in 0..1000u64 {
        let mut rng = SplitMix64::derive(304, t);
        let n = rng.range(2, 16);
        let scale = rng.uniform(0.0, 20.0);
        let row: Vec<f64> = (0..n).map(|_| scale * rng.normal()).collect();
        let c = bounds::check_softmax_row_bound(&row).map_err(|e| e.to_string())?;
        // Oracle: softmax recomputed here, Jacobian norm by power iteration.
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let a: Vec<f64> = e.iter().map(|v| v / z).collect();
        let mut j = Matrix::outer(&a, &a).scale(-1.0);
        for i in 0..n {
            j.set(i, i, j.get(i, i) + a[i]);
        }
        let lhs = power_norm(&j);
        ensure((lhs - c.lhs).abs() <= 1e-9 * lhs.max(1e-300) + 1e-15, format!("row {t}: lhs {lhs:e} vs {:e}", c.lhs))?;
        ensure(c.satisfied, format!("row {t} violated: {c:?}"))?;
        worst = worst.min(c.slack);
    }
    Ok(format!(
        "200 attention instances (skipped {}, min slack {:.3e}), 1000 softmax rows (min slack {worst:.3e})",
        att.skipped, att.min_slack
    ))
}

fn c4_mlp() -> Verdict {
    let mlp = bounds::sweep_mlp(404, 500).map_err(|e| e.to_string())?;
    ensure(mlp.failures == 0, format!("{} violations", mlp.failures))?;
    ensure(mlp.skipped * 10 <= mlp.trials, format!("{} unreliable fd instances", mlp.skipped))?;
    let mut sups = Vec::new();
    for act in [Activation::Gelu, Activation::Silu] {
        let sup = bounds::sampled_derivative_sup(act, -10.0, 10.0, 2_000_001);
        ensure(sup <= act.lipschitz(), format!("{act}: sampled sup {sup} exceeds {}", act.lipschitz()))?;
        sups.push(format!("{act} sup {sup:.5} ≤ {}", act.lipschitz()));
    }
    Ok(format!("500 instances (skipped {}), {}", mlp.skipped, sups.join(", ")))
}

fn c5_lowrank() -> Verdict {
    let configs = [
        ModelConfig { n_layers: 1, d_model: 8, n_heads: 1, d_ff: 16, seq_len: 8, vocab: 4, init_std: 0.5, ..Default::default() },
        ModelConfig { n_layers: 1, d_model: 8, n_heads: 2, d_ff: 16, seq_len: 8, vocab: 4, init_std: 0.5, ..Default::default() },
        ModelConfig { n_layers: 1, d_model: 12, n_heads: 3, d_ff: 16, seq_len: 10, vocab: 4, init_std: 1.0, ..Default::default() },
    ];
    let mut checked = 0;
    for (k, cfg) in configs.iter().enumerate() {
        for seed in 0..5u64 {
            let params = init_params(cfg, seed).unwrap();
            for r in 1..=3 {
                let c = check_lowrank_propagation(&params, r, 1000 * k as u64 + 10 * seed + r as u64)
                    .map_err(|e| e.to_string())?;
                ensure(c.lhs <= r as f64, format!("rank {} > r = {r} for config {k} seed {seed}", c.lhs))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} instances, all four gradient ranks ≤ r for r ∈ {{1, 2, 3}}"))
}

fn c6_feedback() -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    for t in 0..100u64 {
        let spec = random_spec(&mut SplitMix64::derive(606, t), true);
        ensure(check_ratio_condition(&spec).unwrap(), format!("spec {t} does not satisfy the condition"))?;
        let sr = simulate_feedback(&spec, false).map_err(|e| e.to_string())?.srank();
        for w in sr.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    ensure(worst <= 1e-12, format!("Δsrank reached {worst:e}"))?;
    let mut increases = 0;
    for t in 0..100u64 {
        let spec = random_spec(&mut SplitMix64::derive(607, t), false);
        ensure(!check_ratio_condition(&spec).unwrap(), format!("violating spec {t} satisfies the condition"))?;
        let sr = simulate_feedback(&spec, false).map_err(|e| e.to_string())?.srank();
        increases += usize::from(sr.windows(2).any(|w| w[1] > w[0]));
    }
    ensure(increases >= 1, "no violating spec increased srank")?;
    let mut restorations = 0;
    for t in 0..100u64 {
        let spec = random_spec(&mut SplitMix64::derive(608, t), true);
        let traj = simulate_feedback_with_msign(&spec, 1 + (t as usize % 10)).map_err(|e| e.to_string())?;
        for p in traj.points.iter().filter(|p| p.restored) {
            let n = p.s.len() as f64;
            ensure((p.srank - n).abs() <= 1e-12 * n, format!("restored srank {} ≠ {n}", p.srank))?;
            restorations += 1;
        }
    }
    Ok(format!(
        "max Δsrank {worst:.2e} under the condition; {increases}/100 violating specs increased srank; {restorations} restorations at srank = n"
    ))
}

fn c7_msign() -> Verdict {
    let (mut fro, mut gap, mut idem, mut range) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for t in 0..500u64 {
        let w = harness::random_weight(&mut SplitMix64::derive(707, t));
        let c = harness::msign_contract(&w).map_err(|e| e.to_string())?;
        // Frobenius preservation recomputed directly.
        let after = msign_restore(&w, 1e-12).unwrap();
        let direct = (frob2(&after).sqrt() - frob2(&w).sqrt()).abs() / frob2(&w).sqrt();
        fro = fro.max(c.frobenius_rel).max(direct);
        gap = gap.max(c.srank_gap);
        idem = idem.max(c.idempotence_rel);
        range = range.max(c.range_residual);
    }
    ensure(fro <= 1e-10, format!("Frobenius drift {fro:e}"))?;
    ensure(gap <= 1e-6, format!("srank − rank gap {gap:e}"))?;
    ensure(idem <= 1e-10, format!("idempotence error {idem:e}"))?;
    ensure(range <= 1e-8, format!("range residual {range:e}"))?;
    Ok(format!("500 weights: frob {fro:.1e}, srank gap {gap:.1e}, idempotence {idem:.1e}, range {range:.1e}"))
}

fn c8_overhead() -> Verdict {
    let r = harness::cmd_overhead(16, 1024, 2048, 100, MSignTargets::AttentionOnly).map_err(|e| e.to_string())?;
    let within = |x: f64, target: f64, rel: f64| (x / target - 1.0).abs() <= rel;
    ensure(within(r.numerator_flops, 4.47e11, 0.01), format!("numerator {:e}", r.numerator_flops))?;
    ensure(within(r.per_step_flops, 5.36e12, 0.01), format!("per-step {:e}", r.per_step_flops))?;
    ensure((100.0 * r.ratio - 0.08).abs() <= 0.01, format!("R = {}%", 100.0 * r.ratio))?;
    Ok(format!(
        "numerator {:.3e}, per-step {:.3e}, R = {:.4}%",
        r.numerator_flops,
        r.per_step_flops,
        100.0 * r.ratio
    ))
}

fn c9_throughput() -> Verdict {
    let samples: Vec<ThroughputSample> = [(10.0, 18236.0), (100.0, 24559.0), (1000.0, 25082.0), (10000.0, 25270.0)]
        .iter()
        .map(|&(period, tokens_per_second)| ThroughputSample { period, tokens_per_second })
        .collect();
    let fit = harness::cmd_fit_throughput(&samples).map_err(|e| e.to_string())?;
    ensure((fit.t_inf / 25350.0 - 1.0).abs() <= 0.01, format!("T_inf {}", fit.t_inf))?;
    ensure((fit.r - 3.9).abs() <= 0.1, format!("r {}", fit.r))?;
    for (p, want) in fit.predictions.iter().zip([18273.0, 24399.0, 25251.0, 25340.0]) {
        ensure((p / want - 1.0).abs() <= 0.01, format!("prediction {p} vs {want}"))?;
    }
    Ok(format!("T_inf = {:.1}, r = {:.4}, predictions {:?}", fit.t_inf, fit.r, fit.predictions.iter().map(|p| p.round()).collect::<Vec<_>>()))
}

fn c10_gradients() -> Verdict {
    let mut entries = 0;
    let mut worst = 0.0_f64;
    let mut worst_abs = 0.0_f64;
    for (seed, norm, act) in [(1u64, Norm::LayerNorm, Activation::Gelu), (2, Norm::RmsNorm, Activation::Silu), (3, Norm::LayerNorm, Activation::Gelu)] {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 32,
            seq_len: 8,
            vocab: 11,
            init_std: 0.3,
            norm,
            activation: act,
            ..Default::default()
        };
        let params = init_params(&cfg, seed).unwrap();
        let mut rng = SplitMix64::new(seed + 50);
        let tokens: Vec<usize> = (0..8).map(|_| rng.range(0, 10)).collect();
        let (_, grads) = backward(&params, &tokens).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let count = params.tensors().len();
        for k in 0..count {
            let len = params.tensors()[k].1.len();
            for e in 0..len {
                let mut plus = params.clone();
                plus.tensors_mut()[k].1.as_mut_slice()[e] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[k].1.as_mut_slice()[e] -= h;
                let fd = (forward(&plus, &tokens).unwrap().loss - forward(&minus, &tokens).unwrap().loss) / (2.0 * h);
                let an = grads.tensors()[k].1.as_slice()[e];
                let err = (an - fd).abs();
                let scale = an.abs().max(fd.abs());
                worst_abs = worst_abs.max(err);
                if err > 1e-8 {
                    ensure(err <= 1e-4 * scale, format!("seed {seed} {}[{e}]: {an:e} vs fd {fd:e}", params.tensors()[k].0.name))?;
                    worst = worst.max(err / scale);
                }
                entries += 1;
            }
        }
    }
    Ok(format!("{entries} gradient entries over 3 seeds, worst abs error {worst_abs:.2e}, worst relative error above the floor {worst:.2e}"))
}

fn failure_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/failure.cfg")
}

fn seeded(cfg: &RunConfig, offset: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.init_seed += offset;
    c.data.seed += offset;
    c
}

fn c11_stabilization() -> Verdict {
    let base = RunConfig::load(&failure_config_path()).map_err(|e| e.to_string())?;
    let mut diverged = Vec::new();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for offset in 0..5 {
        let mut cfg = seeded(&base, offset);
        cfg.msign.targets = MSignTargets::None;
        let s = harness::run_training(&cfg).map_err(|e| e.to_string())?.summary;
        lines.push(format!(
            "baseline seed+{offset}: {:?} at {:?}, max grad_norm {:.1} vs threshold {:.1}",
            s.status, s.diverged_step, s.max_grad_norm, s.divergence_threshold
        ));
        if s.status == RunStatus::Diverged {
            diverged.push(offset);
        }
    }
    if diverged.len() < 3 {
        failures.push(format!("baseline diverged for {} of 5 seeds", diverged.len()));
    }
    for &offset in &diverged {
        let mut cfg = seeded(&base, offset);
        cfg.msign.targets = MSignTargets::All2d;
        cfg.msign.period = 100;
        let s = harness::run_training(&cfg).map_err(|e| e.to_string())?.summary;
        lines.push(format!(
            "msign seed+{offset}: {:?}, loss {:.3} -> {:.3}, max grad_norm {:.1} vs threshold {:.1}",
            s.status, s.initial_loss, s.final_loss, s.max_grad_norm, s.divergence_threshold
        ));
        if s.status != RunStatus::Completed || s.max_grad_norm >= s.divergence_threshold || s.final_loss >= s.initial_loss {
            failures.push(format!("msign run seed+{offset} did not stabilize"));
        }
    }
    let report = lines.join("; ");
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(format!("{}; {report}", failures.join("; ")))
    }
}

fn c12_determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    harness::cmd_train(&failure_config_path(), Some(&a)).map_err(|e| e.to_string())?;
    harness::cmd_train(&failure_config_path(), Some(&b)).map_err(|e| e.to_string())?;
    let read = |p: &PathBuf| std::fs::read(p.join("metrics.csv")).unwrap();
    ensure(read(&a) == read(&b), "metrics CSVs differ")?;
    let jsonl = |p: &PathBuf| std::fs::read(p.join("metrics.jsonl")).unwrap();
    ensure(jsonl(&a) == jsonl(&b), "metrics JSONL differ")?;
    Ok(format!("two runs of failure.cfg: {} identical CSV bytes", read(&a).len()))
}

#[test]
fn acceptance_suite() {
    let criteria: [(&str, fn() -> Verdict, Duration); 12] = [
        ("1 stable-rank identity", c1_srank_identity, Duration::from_secs(10)),
        ("2 alignment product and Jacobian chains", c2_products, Duration::from_secs(60)),
        ("3 attention and softmax bounds", c3_attention_softmax, Duration::from_secs(300)),
        ("4 MLP bound and activation constants", c4_mlp, Duration::from_secs(120)),
        ("5 low-rank gradient propagation", c5_lowrank, Duration::from_secs(30)),
        ("6 feedback mechanism", c6_feedback, Duration::from_secs(10)),
        ("7 MSign operator contract", c7_msign, Duration::from_secs(30)),
        ("8 overhead ratio", c8_overhead, Duration::from_secs(1)),
        ("9 throughput fit", c9_throughput, Duration::from_secs(1)),
        ("10 gradient correctness", c10_gradients, Duration::from_secs(120)),
        ("11 stabilization property", c11_stabilization, Duration::from_secs(1800)),
        ("12 determinism", c12_determinism, Duration::from_secs(600)),
    ];
    let mut failed = Vec::new();
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let verdict = match verdict {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}")),
            other => other,
        };
        match verdict {
            Ok(detail) => println!("PASS criterion {name} ({elapsed:.1?}): {detail}"),
            Err(why) => {
                println!("FAIL criterion {name} ({elapsed:.1?}): {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
