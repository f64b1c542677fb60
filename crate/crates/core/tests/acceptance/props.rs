use std::collections::BTreeSet;
use std::sync::Arc;

use amr_autodiff::{ParamSet, Tape, Tensor, Var};
use amr_core::env::{apply_derefine_rules, AmrEnv, EnvConfig, DEREFINE, NO_OP, REFINE};
use amr_core::ic::{IcDistribution, InitialCondition};
use amr_core::mesh::{CellKey, ElementId, QuadMesh};
use amr_core::model::{forward, forward_parts, greedy_from_q, GraphBatch, VdgnConfig};
use amr_core::replay::{ReplayBuffer, ReplayConfig, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{ensure, Outcome};

const FD_STEP: f64 = 1e-6;
const PRIMITIVE_TOL: f64 = 1e-5;
const MODEL_TOL: f64 = 1e-3;
const TELESCOPE_TOL: f64 = 1e-9;
const CHI2_P_MIN: f64 = 0.01;
const REPLAY_DRAWS: usize = 100_000;

pub fn run() -> Outcome {
    let fd = primitives()?;
    let model = full_model()?;
    softmax_normalises()?;
    mesh_inverse_and_area()?;
    vote_truth_table()?;
    let tele = telescoping()?;
    igm()?;
    dueling()?;
    stop_gradient()?;
    let p = replay_chi2()?;
    Ok(format!(
        "primitive fd {fd:.1e}, model fd {model:.1e}, telescoping {tele:.1e}, replay chi2 p {p:.3}"
    ))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random linear functional so vector outputs reduce to a scalar.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(seed), &shape));
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Worst per-entry relative error of tape gradients against central differences.
fn fd_error(inputs: &[Tensor], build: &Build) -> f64 {
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
    }
    worst
}

fn primitives() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let gather: Arc<[usize]> = Arc::from(vec![2usize, 0, 0, 1, 2]);
    let scatter: Arc<[usize]> = Arc::from(vec![1usize, 1, 3, 0, 2]);
    let seg: Arc<[usize]> = Arc::from(vec![0usize, 1, 0, 2, 1, 0]);
    let cols: Arc<[usize]> = Arc::from(vec![2usize, 0, 1]);
    let off_kink = Tensor::matrix(2, 3, vec![0.5, -0.7, 0.9, -0.3, 0.2, 1.1]).unwrap();
    let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
        ("matmul", vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])], Box::new(|t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            project(t, m, 1)
        })),
        ("add", vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])], Box::new(|t, v| {
            let m = t.add(v[0], v[1]).unwrap();
            project(t, m, 2)
        })),
        ("sub", vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])], Box::new(|t, v| {
            let m = t.sub(v[0], v[1]).unwrap();
            project(t, m, 3)
        })),
        ("mul", vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])], Box::new(|t, v| {
            let m = t.mul(v[0], v[1]).unwrap();
            project(t, m, 4)
        })),
        ("scale", vec![random(&mut rng, &[2, 3])], Box::new(|t, v| {
            let m = t.scale(v[0], -1.7);
            project(t, m, 5)
        })),
        ("bias", vec![random(&mut rng, &[2, 3]), random(&mut rng, &[3])], Box::new(|t, v| {
            let m = t.add_bias(v[0], v[1]).unwrap();
            project(t, m, 6)
        })),
        ("relu", vec![off_kink], Box::new(|t, v| {
            let m = t.relu(v[0]);
            project(t, m, 7)
        })),
        ("concat", vec![random(&mut rng, &[3, 2]), random(&mut rng, &[3, 3])], Box::new(|t, v| {
            let m = t.concat_cols(&[v[0], v[1], v[0]]).unwrap();
            project(t, m, 8)
        })),
        ("slice", vec![random(&mut rng, &[3, 5])], Box::new(|t, v| {
            let m = t.slice_cols(v[0], 1, 4).unwrap();
            project(t, m, 9)
        })),
        ("gather", vec![random(&mut rng, &[3, 2])], Box::new(move |t, v| {
            let m = t.gather_rows(v[0], &gather).unwrap();
            project(t, m, 10)
        })),
        ("scatter", vec![random(&mut rng, &[5, 2])], Box::new(move |t, v| {
            let m = t.scatter_add_rows(v[0], &scatter, 4).unwrap();
            project(t, m, 11)
        })),
        ("segment softmax", vec![random(&mut rng, &[6])], Box::new(move |t, v| {
            let m = t.segment_softmax(v[0], &seg).unwrap();
            project(t, m, 12)
        })),
        ("row dot", vec![random(&mut rng, &[4, 3]), random(&mut rng, &[4, 3])], Box::new(|t, v| {
            let m = t.row_dot(v[0], v[1]).unwrap();
            project(t, m, 13)
        })),
        ("scale rows", vec![random(&mut rng, &[4, 3]), random(&mut rng, &[4])], Box::new(|t, v| {
            let m = t.scale_rows(v[0], v[1]).unwrap();
            project(t, m, 14)
        })),
        ("sum cols", vec![random(&mut rng, &[4, 3])], Box::new(|t, v| {
            let m = t.sum_cols(v[0]).unwrap();
            project(t, m, 15)
        })),
        ("layer norm", vec![random(&mut rng, &[3, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])], Box::new(|t, v| {
            let m = t.layer_norm(v[0], v[1], v[2]).unwrap();
            project(t, m, 16)
        })),
        ("pick", vec![random(&mut rng, &[3, 3])], Box::new(move |t, v| {
            let m = t.pick_per_row(v[0], &cols).unwrap();
            project(t, m, 17)
        })),
        ("mean", vec![random(&mut rng, &[3, 3])], Box::new(|t, v| {
            let sq = t.mul(v[0], v[0]).unwrap();
            t.mean(sq)
        })),
    ];
    let mut worst: f64 = 0.0;
    for (name, inputs, build) in &cases {
        let e = fd_error(inputs, build);
        ensure!(e < PRIMITIVE_TOL, "{name}: relative gradient error {e:.2e}");
        worst = worst.max(e);
    }
    Ok(worst)
}

fn small_graph_batch(cfg: &VdgnConfig, pref: Option<[f64; 2]>) -> GraphBatch {
    let ec = EnvConfig { nx: 2, ny: 2, ..EnvConfig::default() };
    let ic = InitialCondition::Gaussian { center: [0.7, 1.1], width: 3.0, velocity: [0.4, -0.9] };
    let (_, g) = AmrEnv::reset_with_mesh(&ec, &ic, ec.uniform_mesh()).unwrap();
    GraphBatch::single(cfg, &g, pref).unwrap()
}

fn weighted_q(cfg: &VdgnConfig, p: &ParamSet, b: &GraphBatch, w: &Tensor) -> f64 {
    let q = amr_core::model::q_values(cfg, p, b).unwrap();
    q.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Norm-wise relative error of the whole parameter gradient.
fn full_model() -> Result<f64, String> {
    let cfg = VdgnConfig { hidden: 4, heads: 2, layers: 2, passes: 2, ..VdgnConfig::default() };
    let p = cfg.init_params(&mut ChaCha8Rng::seed_from_u64(11));
    let b = small_graph_batch(&cfg, None);
    let w = random(&mut ChaCha8Rng::seed_from_u64(12), &[b.num_nodes(), cfg.q_width()]);
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let q = forward(&mut tape, &cfg, &bound, &b).unwrap();
    let wv = tape.constant(w.clone());
    let prod = tape.mul(q, wv).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();
    let (mut num2, mut diff2) = (0.0, 0.0);
    for (name, var) in bound.iter() {
        let shape = p.get(name).unwrap().shape().to_vec();
        let analytic = grads.get_or_zeros(var, &shape);
        for i in 0..analytic.len() {
            let mut plus = p.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += FD_STEP;
            let mut minus = p.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= FD_STEP;
            let fd = (weighted_q(&cfg, &plus, &b, &w) - weighted_q(&cfg, &minus, &b, &w)) / (2.0 * FD_STEP);
            num2 += fd * fd;
            diff2 += (fd - analytic.data()[i]).powi(2);
        }
    }
    let rel = (diff2 / num2).sqrt();
    ensure!(rel < MODEL_TOL, "full model relative gradient error {rel:.2e}");
    Ok(rel)
}

fn softmax_normalises() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..200 {
        let n = rng.gen_range(1..40);
        let nseg = rng.gen_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-60.0..60.0)).collect();
        let seg: Arc<[usize]> = (0..n).map(|_| rng.gen_range(0..nseg)).collect::<Vec<_>>().into();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::vector(scores));
        let y = tape.segment_softmax(s, &seg).unwrap();
        let mut total = vec![0.0; nseg];
        for (v, &g) in tape.value(y).data().iter().zip(seg.iter()) {
            ensure!(v.is_finite() && *v >= 0.0, "trial {trial}: weight {v}");
            total[g] += v;
        }
        for g in 0..nseg {
            ensure!(!seg.contains(&g) || (total[g] - 1.0).abs() < 1e-12, "trial {trial}: segment {g} sums to {}", total[g]);
        }
    }
    Ok(String::new())
}

fn keys(mesh: &QuadMesh) -> BTreeSet<CellKey> {
    mesh.iter().map(|(_, k)| k).collect()
}

fn area(mesh: &QuadMesh) -> f64 {
    mesh.iter()
        .map(|(_, k)| {
            let h = mesh.cell_size(k.depth);
            h[0] * h[1]
        })
        .sum()
}

fn mesh_inverse_and_area() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mesh = QuadMesh::new_uniform(4, 3, 2.0, 1.5, 3);
    let total = 2.0 * 1.5;
    for step in 0..300 {
        let ids: Vec<ElementId> = mesh.ids().collect();
        let id = ids[rng.gen_range(0..ids.len())];
        let before = keys(&mesh);
        if mesh.depth(id).unwrap() < mesh.depth_max() && rng.gen_bool(0.6) {
            let kids = mesh.refine(id).unwrap();
            ensure!((area(&mesh) - total).abs() < 1e-12, "step {step}: area {}", area(&mesh));
            let key = mesh.key(kids[0]).unwrap().parent().unwrap();
            mesh.derefine_group(kids).unwrap();
            ensure!(keys(&mesh) == before, "step {step}: de-refine did not undo refine");
            mesh.refine(mesh.id_at(key).unwrap()).unwrap();
        } else if let Some(group) = mesh.sibling_group(id) {
            let parent = mesh.key(id).unwrap().parent().unwrap();
            mesh.derefine_group(group).unwrap();
            let pid = mesh.id_at(parent).unwrap();
            mesh.refine(pid).unwrap();
            ensure!(keys(&mesh) == before, "step {step}: refine did not undo de-refine");
            mesh.derefine_group(mesh.sibling_group(mesh.id_at(parent.child(0)).unwrap()).unwrap()).unwrap();
        }
        ensure!((area(&mesh) - total).abs() < 1e-12, "step {step}: area {}", area(&mesh));
    }
    Ok(String::new())
}

/// Effective action of each sibling under the group rule, written out case by case.
fn rule_oracle(votes: [u8; 4]) -> [u8; 4] {
    let derefines = votes.iter().filter(|&&v| v == DEREFINE).count();
    let any_refine = votes.contains(&REFINE);
    let group_goes = derefines >= 2 && !any_refine;
    votes.map(|v| {
        if v == REFINE {
            REFINE
        } else if group_goes {
            DEREFINE
        } else {
            NO_OP
        }
    })
}

fn vote_truth_table() -> Outcome {
    let mut mesh = QuadMesh::new_uniform(2, 1, 2.0, 1.0, 1);
    let kids = mesh.refine(ElementId(0)).unwrap();
    let ids: Vec<ElementId> = mesh.ids().collect();
    let pos: Vec<usize> = kids.iter().map(|k| ids.iter().position(|x| x == k).unwrap()).collect();
    for code in 0..81u32 {
        let votes = [0, 1, 2, 3].map(|q| ((code / 3u32.pow(q)) % 3) as u8);
        let mut a = vec![NO_OP; mesh.len()];
        for q in 0..4 {
            a[pos[q]] = votes[q];
        }
        let eff = apply_derefine_rules(&mesh, &a);
        let got = [0, 1, 2, 3].map(|q| eff[pos[q]]);
        ensure!(got == rule_oracle(votes), "votes {votes:?}: got {got:?}, want {:?}", rule_oracle(votes));
    }
    Ok(String::new())
}

fn telescoping() -> Result<f64, String> {
    let cfg = EnvConfig {
        nx: 8,
        ny: 8,
        tau_final: 1.0,
        dof_threshold: f64::INFINITY,
        ..EnvConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let ic = IcDistribution::default().sample(&mut rng);
        let (mut env, mut g) = AmrEnv::reset(&cfg, &ic).unwrap();
        let mut total = 0.0;
        let last = loop {
            let acts: Vec<u8> = (0..g.num_nodes).map(|_| rng.gen_range(0..3u8)).collect();
            let r = env.step(&acts).unwrap();
            total += r.reward;
            g = r.graph;
            if r.done {
                break r.diagnostics.error;
            }
        };
        worst = worst.max((total + last.ln()).abs());
    }
    ensure!(worst < TELESCOPE_TOL, "return differs from -ln c_T by {worst:e}");
    Ok(worst)
}

fn igm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for agents in 1..=5usize {
        for trial in 0..50 {
            let q = random(&mut rng, &[agents, 3]);
            let greedy = greedy_from_q(&q, 1, None);
            let value = |a: &[u8]| a.iter().enumerate().map(|(i, &x)| q.at(i, x as usize)).sum::<f64>();
            let mut best = f64::NEG_INFINITY;
            for code in 0..3u32.pow(agents as u32) {
                let joint: Vec<u8> = (0..agents as u32).map(|i| ((code / 3u32.pow(i)) % 3) as u8).collect();
                best = best.max(value(&joint));
            }
            ensure!(value(&greedy) == best, "{agents} agents trial {trial}: per-agent {} vs joint {best}", value(&greedy));
        }
    }
    Ok(String::new())
}

fn dueling() -> Outcome {
    for (mo, pref) in [(false, None), (true, Some([0.3, 0.7]))] {
        let cfg = VdgnConfig { hidden: 8, multi_objective: mo, ..VdgnConfig::default() };
        let k = cfg.objectives();
        let p = cfg.init_params(&mut ChaCha8Rng::seed_from_u64(61));
        let b = small_graph_batch(&cfg, pref);
        let mut tape = Tape::new();
        let bound = p.bind_frozen(&mut tape);
        let parts = forward_parts(&mut tape, &cfg, &bound, &b).unwrap();
        let (q, v) = (tape.value(parts.q), tape.value(parts.value));
        for r in 0..q.rows() {
            for o in 0..k {
                let adv_mean = (0..3).map(|a| q.at(r, a * k + o) - v.at(r, o)).sum::<f64>() / 3.0;
                ensure!(adv_mean.abs() < 1e-12, "row {r} objective {o}: mean advantage {adv_mean:e}");
            }
        }
    }
    Ok(String::new())
}

fn stop_gradient() -> Outcome {
    let cfg = VdgnConfig { hidden: 8, ..VdgnConfig::default() };
    let p = cfg.init_params(&mut ChaCha8Rng::seed_from_u64(71));
    let b = small_graph_batch(&cfg, None);
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let q = forward(&mut tape, &cfg, &bound, &b).unwrap();
    let frozen = tape.stop_gradient(q);
    let only_frozen = tape.sum(frozen);
    let grads = tape.backward(only_frozen).unwrap();
    for (name, var) in bound.iter() {
        let g = grads.get_or_zeros(var, p.get(name).unwrap().shape());
        ensure!(g.data().iter().all(|&x| x == 0.0), "{name} received gradient through a stopped path");
    }
    // q·stop(q) must differentiate like q·C for the constant C = q
    let mixed = tape.mul(q, frozen).unwrap();
    let mixed = tape.sum(mixed);
    let c = tape.constant(tape.value(q).clone());
    let reference = tape.mul(q, c).unwrap();
    let reference = tape.sum(reference);
    let (gm, gr) = (tape.backward(mixed).unwrap(), tape.backward(reference).unwrap());
    for (name, var) in bound.iter() {
        let shape = p.get(name).unwrap().shape();
        ensure!(gm.get_or_zeros(var, shape) == gr.get_or_zeros(var, shape), "{name}: stopped factor leaked gradient");
    }
    Ok(String::new())
}

fn replay_chi2() -> Result<f64, String> {
    let config = ReplayConfig { capacity: 64, alpha: 0.7, beta: 0.4, uniform: 0.05 };
    let ec = EnvConfig { nx: 2, ny: 2, ..EnvConfig::default() };
    let ic = InitialCondition::Gaussian { center: [1.0, 1.0], width: 5.0, velocity: [0.3, 0.2] };
    let g = Arc::new(AmrEnv::reset_with_mesh(&ec, &ic, ec.uniform_mesh()).unwrap().1);
    let mut buf = ReplayBuffer::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let n = 30;
    for i in 0..n {
        buf.push(Transition {
            graph: g.clone(),
            actions: vec![0; g.num_nodes],
            reward: [0.0; 2],
            next: g.clone(),
            done: false,
            preference: None,
        });
        buf.set_priority(i, rng.gen_range(0.01..3.0));
    }
    // rank 1 is the largest priority
    let pr = buf.priorities().to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pr[b].total_cmp(&pr[a]));
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let norm: f64 = (1..=n).map(|r| (r as f64).powf(-config.alpha)).sum();
    let expected: Vec<f64> = rank
        .iter()
        .map(|&r| (1.0 - config.uniform) * (r as f64).powf(-config.alpha) / norm + config.uniform / n as f64)
        .collect();
    let mut counts = vec![0usize; n];
    for _ in 0..REPLAY_DRAWS / 1000 {
        for i in buf.sample(1000, &mut rng).indices {
            counts[i] += 1;
        }
    }
    let stat: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&o, &p)| {
            let e = p * REPLAY_DRAWS as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    ensure!(p > CHI2_P_MIN, "chi2 {stat:.1} on {} dof, p = {p:.4}", n - 1);
    Ok(p)
}
