//! Policies, episode runner, efficiency metric and evaluation suites.

use std::collections::HashMap;
use std::fmt::Write as _;

use amr_autodiff::ParamSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AmrEnv, EnvConfig, EnvError, MeshGraph, TraceRow, NO_OP};
use crate::ic::InitialCondition;
use crate::mesh::{CellKey, ElementId, QuadMesh};
use crate::model::{greedy_joint_action, ModelError, VdgnConfig};

pub use crate::baselines::ThresholdPolicy;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("efficiency undefined: coarse and fine references have {what} {value} on both")]
    Degenerate { what: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Anything that maps the current state to a joint action.
pub trait Policy {
    fn act(&mut self, env: &AmrEnv, graph: &MeshGraph) -> Result<Vec<u8>, ModelError>;
}

/// Never changes the mesh.
pub struct StaticPolicy;

impl Policy for StaticPolicy {
    fn act(&mut self, env: &AmrEnv, _: &MeshGraph) -> Result<Vec<u8>, ModelError> {
        Ok(vec![NO_OP; env.mesh().len()])
    }
}

/// Greedy joint action of a Q-network.
pub struct GreedyPolicy<'a> {
    pub config: &'a VdgnConfig,
    pub params: &'a ParamSet,
    pub preference: Option<[f64; 2]>,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, _: &AmrEnv, graph: &MeshGraph) -> Result<Vec<u8>, ModelError> {
        greedy_joint_action(self.config, self.params, graph, self.preference)
    }
}

/// Where an episode starts.
#[derive(Clone, Debug)]
pub enum Start {
    /// Uniform mesh with threshold-based initial refinement.
    Adaptive,
    /// The given mesh as is.
    Mesh(QuadMesh),
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub final_error: f64,
    pub cumulative_dof: usize,
    pub episode_return: f64,
    pub return_vector: [f64; 2],
    pub steps: usize,
    pub trace: Vec<TraceRow>,
}

pub fn run_episode(cfg: &EnvConfig, ic: &InitialCondition, start: Start, policy: &mut dyn Policy) -> Result<EpisodeOutcome, EvalError> {
    run_episode_observed(cfg, ic, start, policy, |_, _, _| {})
}

/// Runs one episode, calling `observe(env, graph, step)` before every action.
pub fn run_episode_observed(
    cfg: &EnvConfig,
    ic: &InitialCondition,
    start: Start,
    policy: &mut dyn Policy,
    mut observe: impl FnMut(&AmrEnv, &MeshGraph, usize),
) -> Result<EpisodeOutcome, EvalError> {
    let (mut env, mut graph) = match start {
        Start::Adaptive => AmrEnv::reset(cfg, ic)?,
        Start::Mesh(m) => AmrEnv::reset_with_mesh(cfg, ic, m)?,
    };
    let mut ret = 0.0;
    let mut ret_vec = [0.0; 2];
    let mut last_error;
    loop {
        observe(&env, &graph, env.steps_taken());
        let actions = policy.act(&env, &graph)?;
        let r = env.step(&actions)?;
        ret += r.reward;
        ret_vec[0] += r.reward_vector[0];
        ret_vec[1] += r.reward_vector[1];
        last_error = r.diagnostics.error;
        graph = r.graph;
        if r.done {
            break;
        }
    }
    Ok(EpisodeOutcome {
        final_error: last_error,
        cumulative_dof: env.cumulative_dof(),
        episode_return: ret,
        return_vector: ret_vec,
        steps: env.steps_taken(),
        trace: env.trace().to_vec(),
    })
}

/// Same config with the DoF budget removed so episodes always reach the end.
pub fn unbudgeted(cfg: &EnvConfig) -> EnvConfig {
    EnvConfig {
        dof_threshold: f64::INFINITY,
        ..cfg.clone()
    }
}

pub fn uniform_fine_mesh(cfg: &EnvConfig) -> QuadMesh {
    let mut mesh = cfg.uniform_mesh();
    for _ in 0..cfg.depth_max {
        let ids: Vec<ElementId> = mesh.ids().collect();
        for id in ids {
            mesh.refine(id).expect("below depth_max");
        }
    }
    mesh
}

/// Static coarse and fine reference runs for one IC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub c_coarse: f64,
    pub d_coarse: f64,
    pub c_fine: f64,
    pub d_fine: f64,
}

impl References {
    pub fn compute(cfg: &EnvConfig, ic: &InitialCondition) -> Result<Self, EvalError> {
        let cfg = unbudgeted(cfg);
        let coarse = run_episode(&cfg, ic, Start::Mesh(cfg.uniform_mesh()), &mut StaticPolicy)?;
        let fine = run_episode(&cfg, ic, Start::Mesh(uniform_fine_mesh(&cfg)), &mut StaticPolicy)?;
        Ok(Self {
            c_coarse: coarse.final_error,
            d_coarse: coarse.cumulative_dof as f64,
            c_fine: fine.final_error,
            d_fine: fine.cumulative_dof as f64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRecord {
    pub c: f64,
    pub d: f64,
    pub refs: References,
    pub c_norm: f64,
    pub d_norm: f64,
    /// Computed from the normalised pair clamped to `[0, 1]`.
    pub eta: f64,
    /// Set when either normalised value fell outside `[0, 1]`.
    pub clamped: bool,
}

pub fn efficiency(c: f64, d: f64, refs: References) -> Result<EfficiencyRecord, EvalError> {
    if refs.c_coarse == refs.c_fine {
        return Err(EvalError::Degenerate {
            what: "error",
            value: refs.c_fine,
        });
    }
    if refs.d_coarse == refs.d_fine {
        return Err(EvalError::Degenerate {
            what: "DoF",
            value: refs.d_fine,
        });
    }
    let c_norm = (c - refs.c_fine) / (refs.c_coarse - refs.c_fine);
    let d_norm = (d - refs.d_coarse) / (refs.d_fine - refs.d_coarse);
    let inside = |v: f64| (0.0..=1.0).contains(&v);
    let clamped = !(inside(c_norm) && inside(d_norm));
    let (cc, dc) = (c_norm.clamp(0.0, 1.0), d_norm.clamp(0.0, 1.0));
    Ok(EfficiencyRecord {
        c,
        d,
        refs,
        c_norm,
        d_norm,
        eta: 1.0 - (cc * cc + dc * dc).sqrt(),
        clamped,
    })
}

/// Runs `policy` on `ic` to the final time and scores it against fresh references.
pub fn evaluate_efficiency(cfg: &EnvConfig, ic: &InitialCondition, policy: &mut dyn Policy) -> Result<EfficiencyRecord, EvalError> {
    let refs = References::compute(cfg, ic)?;
    let run = run_episode(&unbudgeted(cfg), ic, Start::Adaptive, policy)?;
    efficiency(run.final_error, run.cumulative_dof as f64, refs)
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One row of a policy comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub mean_c: f64,
    pub mean_d: f64,
    pub mean_eta: f64,
    pub stderr_eta: f64,
    pub clamped: usize,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("policy,mean_c,mean_d,mean_eta,stderr_eta,clamped\n");
    for r in rows {
        let _ = writeln!(out, "{},{:e},{},{},{},{}", r.policy, r.mean_c, r.mean_d, r.mean_eta, r.stderr_eta, r.clamped);
    }
    out
}

/// Evaluates every policy on the same IC list. References are computed once per IC.
pub fn pareto_sweep(cfg: &EnvConfig, ics: &[InitialCondition], policies: &mut [(String, Box<dyn Policy + '_>)]) -> Result<Vec<SweepRow>, EvalError> {
    if policies.len() < 2 {
        return Err(EvalError::Invalid("a sweep needs at least two policies".into()));
    }
    let refs = references(cfg, ics)?;
    policies.iter_mut().map(|(name, policy)| sweep_row(cfg, ics, &refs, name, policy.as_mut())).collect()
}

/// Mean efficiency of one policy over `ics`, run to the final time.
pub fn sweep_row(cfg: &EnvConfig, ics: &[InitialCondition], refs: &[References], name: &str, policy: &mut dyn Policy) -> Result<SweepRow, EvalError> {
    let recs = efficiency_records(cfg, ics, refs, policy)?;
    let etas: Vec<f64> = recs.iter().map(|r| r.eta).collect();
    let (mean_eta, stderr_eta) = mean_and_stderr(&etas);
    Ok(SweepRow {
        policy: name.to_string(),
        mean_c: recs.iter().map(|r| r.c).sum::<f64>() / recs.len() as f64,
        mean_d: recs.iter().map(|r| r.d).sum::<f64>() / recs.len() as f64,
        mean_eta,
        stderr_eta,
        clamped: recs.iter().filter(|r| r.clamped).count(),
    })
}

/// Per-IC efficiency of one policy, run to the final time.
pub fn efficiency_records(cfg: &EnvConfig, ics: &[InitialCondition], refs: &[References], policy: &mut dyn Policy) -> Result<Vec<EfficiencyRecord>, EvalError> {
    let open = unbudgeted(cfg);
    ics.iter()
        .zip(refs)
        .map(|(ic, r)| {
            let run = run_episode(&open, ic, Start::Adaptive, policy)?;
            efficiency(run.final_error, run.cumulative_dof as f64, *r)
        })
        .collect()
}

pub fn efficiency_csv(records: &[EfficiencyRecord]) -> String {
    let mut csv = String::from("ic,c,d,c_norm,d_norm,eta,clamped\n");
    for (i, e) in records.iter().enumerate() {
        let _ = writeln!(csv, "{i},{:e},{},{},{},{},{}", e.c, e.d, e.c_norm, e.d_norm, e.eta, e.clamped);
    }
    csv
}

/// References for each IC, computed in parallel.
pub fn references(cfg: &EnvConfig, ics: &[InitialCondition]) -> Result<Vec<References>, EvalError> {
    crate::par::map_slice(ics, |ic| References::compute(cfg, ic)).into_iter().collect()
}

/// Global error after every solver step, for each decision interval.
pub fn error_vs_time(cfg: &EnvConfig, ic: &InitialCondition, start: Start, policy: &mut dyn Policy, tau_steps: &[f64]) -> Result<Vec<(f64, Vec<(f64, f64)>)>, EvalError> {
    let mut curves = Vec::new();
    for &tau_step in tau_steps {
        let c = EnvConfig {
            tau_step,
            ..unbudgeted(cfg)
        };
        c.validate()?;
        let (mut env, mut graph) = match &start {
            Start::Adaptive => AmrEnv::reset(&c, ic)?,
            Start::Mesh(m) => AmrEnv::reset_with_mesh(&c, ic, m.clone())?,
        };
        let mut curve = vec![(0.0, env.errors().global)];
        loop {
            let actions = policy.act(&env, &graph)?;
            let r = env.step_observed(&actions, |_, tau, mesh, field| {
                curve.push((tau, crate::dg::element_errors(mesh, field, ic, tau).global));
            })?;
            graph = r.graph;
            if r.done {
                break;
            }
        }
        curves.push((tau_step, curve));
    }
    Ok(curves)
}

/// A symmetry applied to IC and mesh keys.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Rotate(u32),
    /// Shift by whole coarse elements.
    Translate([i64; 2]),
}

impl Transform {
    pub fn apply_ic(&self, ic: &InitialCondition, cfg: &EnvConfig) -> Option<InitialCondition> {
        match *self {
            Transform::Rotate(k) => ic.rotated(k, cfg.sx),
            Transform::Translate(s) => {
                let h = [cfg.sx / cfg.nx as f64, cfg.sy / cfg.ny as f64];
                Some(ic.translated([s[0] as f64 * h[0], s[1] as f64 * h[1]]))
            }
        }
    }

    pub fn apply_key(&self, key: CellKey, cfg: &EnvConfig) -> CellKey {
        match *self {
            Transform::Rotate(k) => key.rotated(cfg.nx, k),
            Transform::Translate(s) => key.translated(cfg.nx, cfg.ny, s),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Transform::Rotate(k) => format!("rotate {}deg", 90 * k),
            Transform::Translate(s) => format!("translate ({},{})", s[0], s[1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryCheck {
    pub label: String,
    pub elements: usize,
    pub mismatches: usize,
}

impl SymmetryCheck {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Greedy actions of `params` on `ic` versus on each transformed IC, compared
/// under the induced element map at every step of a greedy rollout.
pub fn equivariance_suite(
    cfg: &EnvConfig,
    model: &VdgnConfig,
    params: &ParamSet,
    ic: &InitialCondition,
    transforms: &[Transform],
) -> Result<Vec<SymmetryCheck>, EvalError> {
    if cfg.nx != cfg.ny || cfg.sx != cfg.sy {
        return Err(EvalError::Invalid("rotations need a square domain and mesh".into()));
    }
    let open = unbudgeted(cfg);
    let pref = model.multi_objective.then_some([0.5, 0.5]);
    let rollout = |ic: &InitialCondition| -> Result<Vec<HashMap<CellKey, u8>>, EvalError> {
        let mut steps = Vec::new();
        let mut policy = GreedyPolicy {
            config: model,
            params,
            preference: pref,
        };
        let mut record = |_: &AmrEnv, g: &MeshGraph, _: usize| {
            let a = greedy_joint_action(model, params, g, pref).expect("forward on env graph");
            steps.push(g.keys.iter().copied().zip(a).collect());
        };
        run_episode_observed(&open, ic, Start::Adaptive, &mut policy, &mut record)?;
        Ok(steps)
    };
    let base = rollout(ic)?;
    let mut out = vec![];
    // time invariance: a frozen field gives the same graph at every τ
    {
        let (mut env, g0) = AmrEnv::reset(&open, &ic.frozen())?;
        let a0 = greedy_joint_action(model, params, &g0, pref)?;
        let (mut elements, mut mismatches) = (0, 0);
        loop {
            let r = env.step(&vec![NO_OP; g0.num_nodes])?;
            if r.graph != g0 {
                mismatches += 1;
            } else {
                let a = greedy_joint_action(model, params, &r.graph, pref)?;
                elements += a.len();
                mismatches += a0.iter().zip(&a).filter(|(x, y)| x != y).count();
            }
            if r.done {
                break;
            }
        }
        out.push(SymmetryCheck {
            label: "time shift".into(),
            elements,
            mismatches,
        });
    }
    for t in transforms {
        let Some(tic) = t.apply_ic(ic, cfg) else {
            continue;
        };
        let other = rollout(&tic)?;
        let mut mismatches = 0;
        let mut elements = 0;
        if other.len() != base.len() {
            mismatches += 1;
        }
        for (a, b) in base.iter().zip(&other) {
            for (k, act) in a {
                elements += 1;
                if b.get(&t.apply_key(*k, cfg)) != Some(act) {
                    mismatches += 1;
                }
            }
            if a.len() != b.len() {
                mismatches += 1;
            }
        }
        out.push(SymmetryCheck {
            label: t.label(),
            elements,
            mismatches,
        });
    }
    Ok(out)
}

pub fn symmetry_csv(rows: &[SymmetryCheck]) -> String {
    let mut out = String::from("transform,elements,mismatches,result\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.label, r.elements, r.mismatches, if r.passed() { "pass" } else { "FAIL" });
    }
    out
}
