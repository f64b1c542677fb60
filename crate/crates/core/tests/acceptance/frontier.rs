use amr_core::baselines::{brute_force_pareto, StripSetup};
use amr_core::eval::{run_episode, unbudgeted, GreedyPolicy, Policy, Start, ThresholdPolicy};

use crate::{desk, ensure, fail, Outcome};

/// The strip of the region search, with vector rewards and ridges at random positions.
pub const STRIP: &str = "
output = 'runs/strip'
[env]
nx = 64
ny = 1
sx = 2.0
sy = 0.03125
depth_max = 1
tau_step = 0.25
tau_final = 0.5
dof_threshold = 3072.0
multi_objective = true
[ics]
family = 'ridge'
speed = [1.0, 1.0]
angle = [0.0, 0.0]
center = [0.0, 2.0]
width = 100.0
[model]
hidden = 16
heads = 2
layers = 2
passes = 1
[train]
episodes = 600
batch_size = 16
train_every = 1
learning_rate = 1e-3
epsilon_start = 0.2
epsilon_end = 0.01
epsilon_episodes = 600
envelope_cap = 4
eval_every = 0
";
const SEED: u64 = 21;
/// Relative slack when comparing errors against the oracle.
const ORACLE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
struct Point {
    d: f64,
    c: f64,
}

fn point(setup: &StripSetup, policy: &mut dyn Policy) -> Result<Point, String> {
    let run = run_episode(&unbudgeted(&setup.env), &setup.ic, Start::Adaptive, policy).map_err(fail("rollout"))?;
    Ok(Point { d: run.cumulative_dof as f64, c: run.final_error })
}

/// Non-dominated points, sorted by DoF.
fn pareto(points: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = points
        .iter()
        .copied()
        .filter(|p| !points.iter().any(|q| q.d <= p.d && q.c <= p.c && (q.d < p.d || q.c < p.c)))
        .collect();
    out.sort_by(|a, b| a.d.total_cmp(&b.d).then(a.c.total_cmp(&b.c)));
    out.dedup_by(|a, b| a.d == b.d && a.c == b.c);
    out
}

pub fn run() -> Outcome {
    let cfg = desk::config(STRIP, SEED);
    let t = desk::train_cached("strip_envelope", &cfg)?;
    let setup = StripSetup { env: cfg.env.clone(), ..StripSetup::default() };
    let n = cfg.eval.preferences;
    let mut raw = Vec::new();
    for k in 0..n {
        let a = k as f64 / (n - 1) as f64;
        let mut greedy = GreedyPolicy { config: &t.cfg.model, params: &t.params, preference: Some([a, 1.0 - a]) };
        raw.push(point(&setup, &mut greedy)?);
    }
    let front = pareto(&raw);
    let monotone = front.windows(2).all(|w| w[0].d < w[1].d && w[0].c > w[1].c);
    ensure!(monotone, "filtered frontier is not monotone: {front:?}");

    let mut dominated = 0;
    let mut thresholds = Vec::new();
    for &theta in &cfg.eval.thresholds {
        let mut p = ThresholdPolicy::new(theta, cfg.eval.derefine).map_err(fail("threshold"))?;
        let tp = point(&setup, &mut p)?;
        if front.iter().any(|v| v.d <= tp.d && v.c <= tp.c) {
            dominated += 1;
        }
        thresholds.push(tp);
    }

    let widths: Vec<usize> = (0..=cfg.env.nx as usize).collect();
    let oracle = brute_force_pareto(&setup, &widths).map_err(fail("oracle"))?;
    let beaten: Vec<String> = oracle
        .iter()
        .filter(|o| raw.iter().any(|v| v.d <= o.cumulative_dof as f64 && v.c < o.final_error * (1.0 - ORACLE_SLACK)))
        .map(|o| format!("width {} (d {}, c {:.3e})", o.width, o.cumulative_dof, o.final_error))
        .collect();

    let detail = format!(
        "{} of {} preferences on the frontier, dominates {dominated}/{} threshold points, oracle {} widths{}",
        front.len(),
        n,
        thresholds.len(),
        oracle.len(),
        if t.from_cache { " (cached)" } else { "" }
    );
    ensure!(beaten.is_empty(), "{detail}; VDGN beats the oracle at {}", beaten.join(", "));
    ensure!(2 * dominated >= thresholds.len(), "{detail}; frontier {front:?}; thresholds {thresholds:?}");
    Ok(detail)
}
