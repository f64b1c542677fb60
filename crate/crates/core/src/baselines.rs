//! Error-threshold policies and the exhaustive region search on a 1D strip.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{AmrEnv, EnvConfig, EnvError, MeshGraph, DEREFINE, NO_OP, REFINE};
use crate::eval::{EvalError, Policy};
use crate::ic::InitialCondition;
use crate::model::ModelError;
use crate::par;

/// Refine above `refine`, de-refine below `derefine`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub refine: f64,
    pub derefine: f64,
}

impl ThresholdPolicy {
    pub fn new(refine: f64, derefine: f64) -> Result<Self, EvalError> {
        if !(derefine < refine) {
            return Err(EvalError::Invalid(format!(
                "de-refine threshold {derefine:e} must be below refine threshold {refine:e}"
            )));
        }
        Ok(Self { refine, derefine })
    }

    pub fn actions(&self, errors: &[f64], depths: &[u32], depth_max: u32) -> Vec<u8> {
        errors
            .iter()
            .zip(depths)
            .map(|(&c, &d)| {
                if c > self.refine {
                    if d < depth_max {
                        crate::env::REFINE
                    } else {
                        NO_OP
                    }
                } else if c < self.derefine {
                    crate::env::DEREFINE
                } else {
                    NO_OP
                }
            })
            .collect()
    }
}

impl Policy for ThresholdPolicy {
    fn act(&mut self, env: &AmrEnv, graph: &MeshGraph) -> Result<Vec<u8>, ModelError> {
        Ok(self.actions(&env.errors().per_element, &graph.depths(), env.config().depth_max))
    }
}

/// A `n×1` row of square elements with a plane wave moving along it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripSetup {
    pub env: EnvConfig,
    pub ic: InitialCondition,
}

impl Default for StripSetup {
    fn default() -> Self {
        let nx = 64;
        Self {
            env: EnvConfig {
                nx,
                ny: 1,
                sx: 2.0,
                sy: 2.0 / nx as f64,
                depth_max: 1,
                tau_step: 0.25,
                tau_final: 0.5,
                // at most the fully refined strip at reset plus two fine steps
                dof_threshold: (3 * 4 * 4 * nx) as f64,
                ..EnvConfig::default()
            },
            ic: InitialCondition::Ridge {
                x0: 0.5,
                width: 100.0,
                velocity: [1.0, 0.0],
            },
        }
    }
}

/// Refines `width` consecutive columns starting at `start[step]` and
/// de-refines everything else.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPlan {
    pub width: usize,
    pub starts: Vec<usize>,
}

impl RegionPlan {
    pub fn actions(&self, env: &AmrEnv, step: usize) -> Vec<u8> {
        let columns = env.config().nx as usize;
        let start = self.starts[step.min(self.starts.len() - 1)];
        env.mesh()
            .iter()
            .map(|(_, k)| {
                let col = (k.ix >> k.depth) as usize;
                let inside = (col + columns - start % columns) % columns < self.width;
                match (inside, k.depth) {
                    (true, 0) => REFINE,
                    (false, d) if d > 0 => DEREFINE,
                    _ => NO_OP,
                }
            })
            .collect()
    }
}

impl Policy for RegionPlan {
    fn act(&mut self, env: &AmrEnv, _: &MeshGraph) -> Result<Vec<u8>, ModelError> {
        Ok(self.actions(env, env.steps_taken()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrutePoint {
    pub width: usize,
    pub starts: Vec<usize>,
    pub final_error: f64,
    pub cumulative_dof: usize,
}

fn play(mut env: AmrEnv, plan: &RegionPlan) -> Result<AmrEnv, EnvError> {
    while !env.is_done() {
        let a = plan.actions(&env, env.steps_taken());
        env.step(&a)?;
    }
    Ok(env)
}

/// Lowest final error over all start positions of a two-step plan, per width.
pub fn brute_force_pareto(setup: &StripSetup, widths: &[usize]) -> Result<Vec<BrutePoint>, EvalError> {
    let cfg = crate::eval::unbudgeted(&setup.env);
    let columns = cfg.nx as usize;
    if cfg.ny != 1 {
        return Err(EvalError::Invalid("region search needs a single-row strip".into()));
    }
    if cfg.final_micro_step() != 2 * cfg.micro_steps_per_step() {
        return Err(EvalError::Invalid("region search enumerates exactly two decision steps".into()));
    }
    let (base, _) = AmrEnv::reset(&cfg, &setup.ic)?;
    let mut out = Vec::new();
    for &width in widths {
        if width > columns {
            return Err(EvalError::Invalid(format!("width {width} exceeds {columns} columns")));
        }
        // start positions are irrelevant for an empty or full region
        let starts = if width == 0 || width == columns { 1 } else { columns };
        let per_first = par::map_range(starts, |s1| -> Result<BrutePoint, EnvError> {
            let mut after_first = base.clone();
            let plan1 = RegionPlan { width, starts: vec![s1] };
            after_first.step(&plan1.actions(&after_first, 0))?;
            let mut best: Option<BrutePoint> = None;
            for s2 in 0..starts {
                let plan = RegionPlan { width, starts: vec![s1, s2] };
                let env = play(after_first.clone(), &plan)?;
                let c = env.errors().global;
                if best.as_ref().is_none_or(|b| c < b.final_error) {
                    best = Some(BrutePoint {
                        width,
                        starts: plan.starts,
                        final_error: c,
                        cumulative_dof: env.cumulative_dof(),
                    });
                }
            }
            Ok(best.expect("at least one start"))
        });
        let mut best: Option<BrutePoint> = None;
        for p in per_first {
            let p = p?;
            if best.as_ref().is_none_or(|b| p.final_error < b.final_error) {
                best = Some(p);
            }
        }
        out.push(best.expect("at least one start"));
    }
    Ok(out)
}

pub fn brute_csv(points: &[BrutePoint]) -> String {
    let mut out = String::from("width,start1,start2,final_error,cumulative_dof\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{:e},{}", p.width, p.starts[0], p.starts.get(1).copied().unwrap_or(p.starts[0]), p.final_error, p.cumulative_dof);
    }
    out
}
