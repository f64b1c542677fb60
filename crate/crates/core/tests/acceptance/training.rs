use amr_core::eval::{references, sweep_row, GreedyPolicy, SweepRow, ThresholdPolicy};
use amr_core::learner::held_out;

use crate::{desk, ensure, fail, Outcome};

const EVAL_ICS: usize = 30;
/// Held-out ICs come from a seed no training run uses.
const EVAL_SEED: u64 = 9001;
const SEEDS_REQUIRED: usize = 2;
const NEAR_ETA: f64 = 0.95;
const FEWER_DOF: f64 = 0.85;

fn decile_means(rows: &[f64]) -> (f64, f64) {
    let k = (rows.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&rows[..k]), mean(&rows[rows.len() - k..]))
}

/// Best threshold row by mean efficiency.
pub fn best_threshold(rows: &[SweepRow]) -> &SweepRow {
    rows.iter().max_by(|a, b| a.mean_eta.total_cmp(&b.mean_eta)).expect("non-empty sweep")
}

pub fn run() -> Outcome {
    let base = desk::config(desk::DESK, 0);
    let ics = held_out(&base.ics, EVAL_ICS, EVAL_SEED);
    let refs = references(&base.env, &ics).map_err(fail("references"))?;
    let mut sweep = Vec::new();
    for &t in &base.eval.thresholds {
        let mut p = ThresholdPolicy::new(t, base.eval.derefine).map_err(fail("threshold"))?;
        sweep.push(sweep_row(&base.env, &ics, &refs, &format!("{t:e}"), &mut p).map_err(fail("sweep"))?);
    }
    let best = best_threshold(&sweep).clone();
    let mut lines = vec![format!("best threshold {} eta {:.3} d {:.0}", best.policy, best.mean_eta, best.mean_d)];
    let (mut improved, mut efficient) = (0, 0);
    for seed in desk::SEEDS {
        let t = desk::trained(seed)?;
        ensure!(t.metrics.len() >= 2, "seed {seed}: fewer than two evaluations");
        let returns: Vec<f64> = t.metrics.iter().map(|m| m.mean_return).collect();
        let (first, last) = decile_means(&returns);
        let a = last > first;
        let mut greedy = GreedyPolicy { config: &t.cfg.model, params: &t.params, preference: None };
        let v = sweep_row(&t.cfg.env, &ics, &refs, "vdgn", &mut greedy).map_err(fail("vdgn eval"))?;
        let b = v.mean_eta >= best.mean_eta || (v.mean_eta >= NEAR_ETA * best.mean_eta && v.mean_d <= FEWER_DOF * best.mean_d);
        improved += a as usize;
        efficient += b as usize;
        lines.push(format!(
            "seed {seed}: return {first:.3} -> {last:.3} [{}], eta {:.3} d {:.0} [{}]{}",
            if a { "ok" } else { "no" },
            v.mean_eta,
            v.mean_d,
            if b { "ok" } else { "no" },
            if t.from_cache { " (cached)" } else { "" }
        ));
    }
    let detail = lines.join("; ");
    ensure!(improved >= SEEDS_REQUIRED && efficient >= SEEDS_REQUIRED, "{detail}");
    Ok(detail)
}
