//! The refinement game: observation graphs, transition rules and rewards.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dg::{self, AdvectionOperator, DgField, ErrorVector, SolverError};
use crate::ic::InitialCondition;
use crate::mesh::{CellKey, ElementId, QuadMesh};

pub const NO_OP: u8 = 0;
pub const REFINE: u8 = 1;
pub const DEREFINE: u8 = 2;
pub const NUM_ACTIONS: usize = 3;

/// Errors below this are clamped before taking logarithms. Element errors of
/// O(1) fields bottom out near 1e-16 from round-off, so anything smaller than
/// this is noise and would break the symmetry of observations.
pub const ERROR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub tau_step: f64,
    pub tau_final: f64,
    pub dt: f64,
    /// Cumulative DoF budget; `inf` disables budget termination.
    pub dof_threshold: f64,
    /// Initial refinement threshold on per-element error.
    pub error_threshold: f64,
    pub penalty: f64,
    pub depth_max: u32,
    pub nx: u32,
    pub ny: u32,
    pub sx: f64,
    pub sy: f64,
    pub basis_size: usize,
    pub gamma: f64,
    pub multi_objective: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tau_step: 0.25,
            tau_final: 0.75,
            dt: 0.002,
            dof_threshold: 5620.0,
            error_threshold: 5e-4,
            penalty: 10.0,
            depth_max: 1,
            nx: 16,
            ny: 16,
            sx: 2.0,
            sy: 2.0,
            basis_size: 4,
            gamma: 1.0,
            multi_objective: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("episode is already done")]
    Done,
    #[error("joint action has {got} entries for {expected} elements")]
    ActionLength { expected: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.tau_step > 0.0 && self.tau_final > 0.0) {
            return bad("dt, tau_step and tau_final must be positive");
        }
        let ratio = self.tau_step / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("tau_step must be a whole multiple of dt");
        }
        if !(self.dof_threshold > 0.0) {
            return bad("dof_threshold must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.nx == 0 || self.ny == 0 || !(self.sx > 0.0 && self.sy > 0.0) {
            return bad("mesh partition and extents must be positive");
        }
        if self.basis_size == 0 {
            return bad("basis_size must be at least 1");
        }
        Ok(())
    }

    pub fn micro_steps_per_step(&self) -> usize {
        (self.tau_step / self.dt).round() as usize
    }

    pub fn final_micro_step(&self) -> usize {
        (self.tau_final / self.dt).round() as usize
    }

    pub fn node_feature_width(&self) -> usize {
        1 + self.depth_max as usize + 1
    }

    pub fn edge_feature_width(&self) -> usize {
        2 * self.depth_max as usize + 2
    }

    pub fn uniform_mesh(&self) -> QuadMesh {
        QuadMesh::new_uniform(self.nx, self.ny, self.sx, self.sy, self.depth_max)
    }
}

/// Node and edge arrays of one observation. Edges are directed sender → receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshGraph {
    pub num_nodes: usize,
    pub node_width: usize,
    pub edge_width: usize,
    /// Row-major `[num_nodes × node_width]`.
    pub nodes: Vec<f64>,
    /// Row-major `[num_edges × edge_width]`.
    pub edges: Vec<f64>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub ids: Vec<ElementId>,
    pub keys: Vec<CellKey>,
}

impl MeshGraph {
    pub fn num_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn depths(&self) -> Vec<u32> {
        self.keys.iter().map(|k| k.depth).collect()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.node_width..(i + 1) * self.node_width]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.edges[e * self.edge_width..(e + 1) * self.edge_width]
    }
}

/// Builds the observation graph for the current mesh and per-element errors.
pub fn build_graph(mesh: &QuadMesh, errors: &[f64], ic: &InitialCondition, tau_step: f64) -> MeshGraph {
    let dmax = mesh.depth_max() as usize;
    let node_width = dmax + 2;
    let edge_width = 2 * dmax + 2;
    let ids: Vec<ElementId> = mesh.ids().collect();
    let keys: Vec<CellKey> = mesh.iter().map(|(_, k)| k).collect();
    let domain = mesh.extent();
    let mut nodes = vec![0.0; ids.len() * node_width];
    for (i, key) in keys.iter().enumerate() {
        let row = &mut nodes[i * node_width..(i + 1) * node_width];
        row[0] = errors[i].max(ERROR_FLOOR).ln();
        row[1 + key.depth as usize] = 1.0;
    }
    let velocity: Vec<[f64; 2]> = keys
        .iter()
        .map(|k| {
            let c = mesh.center(*k);
            ic.velocity_at(c[0], c[1], domain)
        })
        .collect();
    let adj = mesh.adjacency();
    let mut edges = Vec::with_capacity(adj.edge_count() * edge_width);
    let mut senders = Vec::with_capacity(adj.edge_count());
    let mut receivers = Vec::with_capacity(adj.edge_count());
    for (i, list) in adj.neighbors.iter().enumerate() {
        for nb in list {
            let j = nb.index;
            let mut row = vec![0.0; edge_width];
            let diff = keys[i].depth as i64 - keys[j].depth as i64 + dmax as i64;
            row[diff as usize] = 1.0;
            let norm2 = nb.dx[0] * nb.dx[0] + nb.dx[1] * nb.dx[1];
            row[edge_width - 1] = (velocity[j][0] * nb.dx[0] + velocity[j][1] * nb.dx[1]) / norm2 * tau_step;
            edges.extend_from_slice(&row);
            senders.push(j);
            receivers.push(i);
        }
    }
    MeshGraph {
        num_nodes: ids.len(),
        node_width,
        edge_width,
        nodes,
        edges,
        senders,
        receivers,
        ids,
        keys,
    }
}

/// Resolves de-refine votes per sibling group.
///
/// In a complete group with at least two de-refine votes and no refine vote,
/// every member de-refines. Any other de-refine vote becomes a no-op.
/// Refine votes pass through unchanged.
pub fn apply_derefine_rules(mesh: &QuadMesh, actions: &[u8]) -> Vec<u8> {
    let index: std::collections::HashMap<ElementId, usize> = mesh.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let mut out = actions.to_vec();
    for (i, id) in mesh.ids().enumerate() {
        if actions[i] != DEREFINE {
            continue;
        }
        out[i] = NO_OP;
        if let Some(group) = mesh.sibling_group(id) {
            let votes: Vec<u8> = group.iter().map(|g| actions[index[g]]).collect();
            let d = votes.iter().filter(|&&v| v == DEREFINE).count();
            let r = votes.iter().any(|&v| v == REFINE);
            if d >= 2 && !r {
                out[i] = DEREFINE;
            }
        }
    }
    // whole group follows once the group qualifies
    for (i, id) in mesh.ids().enumerate() {
        if out[i] == DEREFINE {
            for g in mesh.sibling_group(id).expect("qualified group") {
                out[index[&g]] = DEREFINE;
            }
        }
    }
    out
}

/// Piecewise reward; `tau` is the solver time after the step.
pub fn scalar_reward(cfg: &EnvConfig, tau: f64, dof: f64, c_prev: f64, c_now: f64) -> f64 {
    let (lp, ln) = (c_prev.max(ERROR_FLOOR).ln(), c_now.max(ERROR_FLOOR).ln());
    if dof > cfg.dof_threshold && tau + cfg.dt < cfg.tau_final {
        cfg.penalty * (tau - cfg.tau_final) + lp
    } else if tau + cfg.dt >= cfg.tau_final {
        lp - ln - cfg.penalty * (dof / cfg.dof_threshold - 1.0).max(0.0)
    } else {
        lp - ln
    }
}

/// `(cost, error)` reward components.
pub fn vector_reward(cfg: &EnvConfig, dof_prev: f64, dof: f64, c_prev: f64, c_now: f64) -> [f64; 2] {
    [
        (dof_prev - dof) / cfg.dof_threshold,
        c_prev.max(ERROR_FLOOR).ln() - c_now.max(ERROR_FLOOR).ln(),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub tau: f64,
    pub elements: usize,
    pub cumulative_dof: usize,
    pub error: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub graph: MeshGraph,
    pub reward: f64,
    pub reward_vector: [f64; 2],
    pub done: bool,
    pub diagnostics: Diagnostics,
}

/// One row of an episode trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub tau: f64,
    pub elements: usize,
    pub cumulative_dof: usize,
    pub error: f64,
    pub reward: f64,
    pub reward_cost: f64,
    pub reward_error: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t,tau,n_t,d_t,c_t,reward,reward_cost,reward_error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:e},{},{},{}",
            r.step, r.tau, r.elements, r.cumulative_dof, r.error, r.reward, r.reward_cost, r.reward_error
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct AmrEnv {
    cfg: EnvConfig,
    ic: InitialCondition,
    mesh: QuadMesh,
    field: DgField,
    errors: ErrorVector,
    micro: usize,
    step: usize,
    dof: usize,
    c_prev: f64,
    done: bool,
    trace: Vec<TraceRow>,
}

impl AmrEnv {
    /// Uniform mesh, one round of refinement where the initial error exceeds
    /// the threshold, then a fresh projection of the IC.
    pub fn reset(cfg: &EnvConfig, ic: &InitialCondition) -> Result<(Self, MeshGraph), EnvError> {
        let mut mesh = cfg.uniform_mesh();
        if cfg.depth_max > 0 {
            let field = dg::project_ic(&mesh, ic);
            let err = dg::element_errors(&mesh, &field, ic, 0.0);
            let marked: Vec<ElementId> = mesh
                .ids()
                .zip(&err.per_element)
                .filter(|(_, c)| **c > cfg.error_threshold)
                .map(|(id, _)| id)
                .collect();
            for id in marked {
                mesh.refine(id).expect("depth 0 below depth_max");
            }
        }
        Self::reset_with_mesh(cfg, ic, mesh)
    }

    /// Starts an episode on a given mesh with no initial refinement.
    pub fn reset_with_mesh(cfg: &EnvConfig, ic: &InitialCondition, mesh: QuadMesh) -> Result<(Self, MeshGraph), EnvError> {
        cfg.validate()?;
        let field = dg::project_ic(&mesh, ic);
        let errors = dg::element_errors(&mesh, &field, ic, 0.0);
        let dof = mesh.dof_count(cfg.basis_size);
        let env = Self {
            cfg: cfg.clone(),
            ic: ic.clone(),
            mesh,
            field,
            errors,
            micro: 0,
            step: 0,
            dof,
            c_prev: 1.0,
            done: false,
            trace: Vec::new(),
        };
        let g = env.observe();
        Ok((env, g))
    }

    pub fn observe(&self) -> MeshGraph {
        build_graph(&self.mesh, &self.errors.per_element, &self.ic, self.cfg.tau_step)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }
    pub fn ic(&self) -> &InitialCondition {
        &self.ic
    }
    pub fn mesh(&self) -> &QuadMesh {
        &self.mesh
    }
    pub fn field(&self) -> &DgField {
        &self.field
    }
    pub fn errors(&self) -> &ErrorVector {
        &self.errors
    }
    pub fn tau(&self) -> f64 {
        self.micro as f64 * self.cfg.dt
    }
    pub fn cumulative_dof(&self) -> usize {
        self.dof
    }
    pub fn is_done(&self) -> bool {
        self.done
    }
    pub fn steps_taken(&self) -> usize {
        self.step
    }
    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn step(&mut self, actions: &[u8]) -> Result<StepResult, EnvError> {
        self.step_observed(actions, |_, _, _, _| {})
    }

    /// Like [`AmrEnv::step`], calling `observe(micro, tau, mesh, field)` after every solver step.
    pub fn step_observed(&mut self, actions: &[u8], mut observe: impl FnMut(usize, f64, &QuadMesh, &DgField)) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        if actions.len() != self.mesh.len() {
            return Err(EnvError::ActionLength {
                expected: self.mesh.len(),
                got: actions.len(),
            });
        }
        let effective = apply_derefine_rules(&self.mesh, actions);
        let ids: Vec<ElementId> = self.mesh.ids().collect();

        let mut seen = std::collections::HashSet::new();
        for (i, id) in ids.iter().enumerate() {
            if effective[i] == DEREFINE && seen.insert(*id) {
                let group = self.mesh.sibling_group(*id).expect("rules keep complete groups");
                seen.extend(group);
                dg::derefine_with_transfer(&mut self.mesh, &mut self.field, group).expect("complete group");
            }
        }
        for (i, id) in ids.iter().enumerate() {
            if effective[i] == REFINE && self.mesh.depth(*id).is_some_and(|d| d < self.cfg.depth_max) {
                dg::refine_with_transfer(&mut self.mesh, &mut self.field, *id).expect("below depth_max");
            }
        }

        let op = AdvectionOperator::assemble(&self.mesh, &self.ic);
        let mut u = self.field.to_vec();
        let start = self.micro;
        let dt = self.cfg.dt;
        {
            let mesh = &self.mesh;
            let field = &mut self.field;
            op.advance(&mut u, dt, self.cfg.micro_steps_per_step(), |k, state| {
                field.set_from_slice(state);
                observe(start + k, (start + k) as f64 * dt, mesh, field);
            })?;
        }
        self.field.set_from_slice(&u);
        self.micro += self.cfg.micro_steps_per_step();
        self.step += 1;

        let dof_prev = self.dof;
        self.dof += self.mesh.dof_count(self.cfg.basis_size);
        let tau = self.tau();
        self.errors = dg::element_errors(&self.mesh, &self.field, &self.ic, tau);
        let c = self.errors.global;
        let reward = scalar_reward(&self.cfg, tau, self.dof as f64, self.c_prev, c);
        let reward_vector = vector_reward(&self.cfg, dof_prev as f64, self.dof as f64, self.c_prev, c);
        self.c_prev = c;
        self.done = self.micro + 1 > self.cfg.final_micro_step() || self.dof as f64 > self.cfg.dof_threshold;
        let diagnostics = Diagnostics {
            step: self.step,
            tau,
            elements: self.mesh.len(),
            cumulative_dof: self.dof,
            error: c,
        };
        self.trace.push(TraceRow {
            step: self.step,
            tau,
            elements: self.mesh.len(),
            cumulative_dof: self.dof,
            error: c,
            reward,
            reward_cost: reward_vector[0],
            reward_error: reward_vector[1],
        });
        Ok(StepResult {
            graph: self.observe(),
            reward,
            reward_vector,
            done: self.done,
            diagnostics,
        })
    }

    /// SVG of the current mesh shaded by the numerical solution.
    pub fn snapshot_svg(&self, pixels: f64) -> String {
        let vals: std::collections::HashMap<CellKey, f64> = self
            .mesh
            .iter()
            .map(|(id, k)| (k, self.field.coeffs[&id].iter().sum::<f64>() / 4.0))
            .collect();
        let lo = vals.values().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        crate::svg::mesh_svg(&self.mesh, pixels, |k| crate::svg::heat_color((vals[&k] - lo) / span))
    }
}

/// Sum of rewards of a penalty-free trajectory, checked against `−ln c_T`.
pub fn episode_return_check(rewards: &[f64], final_error: f64) -> Result<f64, String> {
    let total: f64 = rewards.iter().sum();
    let expected = -final_error.max(ERROR_FLOOR).ln();
    if (total - expected).abs() > 1e-9 {
        return Err(format!("telescoping violated: return {total} vs −ln c_T {expected}"));
    }
    Ok(total)
}
