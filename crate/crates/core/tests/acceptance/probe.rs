use std::collections::BTreeSet;

use amr_core::env::{AmrEnv, EnvConfig, MeshGraph};
use amr_core::eval::{unbudgeted, GreedyPolicy, Policy, ThresholdPolicy};
use amr_core::ic::{velocity_from_polar, wrap, InitialCondition};
use amr_core::mesh::QuadMesh;

use crate::{desk, ensure, fail, Outcome};

const SPEED: f64 = 1.5;
const WIDTH: f64 = 100.0;
const MIN_COVERAGE: f64 = 0.8;
const PATH_SAMPLES: usize = 200;

type Cell = (u32, u32);

/// Coarse cells touched by the half-maximum disk of the exact bump during `[0, tau]`.
fn traversed(cfg: &EnvConfig, center: [f64; 2], velocity: [f64; 2], tau: f64) -> BTreeSet<Cell> {
    let radius = (2f64.ln() / WIDTH).sqrt();
    let h = [cfg.sx / cfg.nx as f64, cfg.sy / cfg.ny as f64];
    let mut cells = BTreeSet::new();
    for s in 0..=PATH_SAMPLES {
        let t = tau * s as f64 / PATH_SAMPLES as f64;
        let c = [center[0] + velocity[0] * t, center[1] + velocity[1] * t];
        for ix in 0..cfg.nx {
            for iy in 0..cfg.ny {
                // nearest point of the cell to the centre, under periodic wrap
                let gap = |lo: f64, w: f64, p: f64, s: f64| {
                    let d = wrap(p - (lo + 0.5 * w), s).abs();
                    (d - 0.5 * w).max(0.0)
                };
                let gx = gap(ix as f64 * h[0], h[0], c[0], cfg.sx);
                let gy = gap(iy as f64 * h[1], h[1], c[1], cfg.sy);
                if gx * gx + gy * gy < radius * radius {
                    cells.insert((ix, iy));
                }
            }
        }
    }
    cells
}

fn refined_cells(mesh: &QuadMesh) -> BTreeSet<Cell> {
    mesh.iter().filter(|(_, k)| k.depth > 0).map(|(_, k)| (k.ix >> k.depth, k.iy >> k.depth)).collect()
}

/// Mesh in force during the first decision interval.
fn first_mesh(cfg: &EnvConfig, ic: &InitialCondition, policy: &mut dyn Policy) -> Result<QuadMesh, String> {
    let (mut env, g): (AmrEnv, MeshGraph) = AmrEnv::reset(cfg, ic).map_err(fail("reset"))?;
    let a = policy.act(&env, &g).map_err(fail("act"))?;
    env.step(&a).map_err(fail("step"))?;
    Ok(env.mesh().clone())
}

fn coverage(refined: &BTreeSet<Cell>, target: &BTreeSet<Cell>) -> f64 {
    target.intersection(refined).count() as f64 / target.len() as f64
}

/// The threshold whose first mesh has the element count closest to `elements`,
/// preferring the larger mesh on ties.
fn matched_threshold(cfg: &EnvConfig, ic: &InitialCondition, derefine: f64, elements: usize) -> Result<(f64, QuadMesh), String> {
    let (env, _) = AmrEnv::reset(cfg, ic).map_err(fail("reset"))?;
    let mut levels: Vec<f64> = env.errors().per_element.iter().copied().filter(|c| *c > derefine).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(usize, usize, f64, QuadMesh)> = None;
    for c in levels {
        // just below an element's error, so that element is refined
        let theta = c * (1.0 - 1e-9);
        if theta <= derefine {
            continue;
        }
        let mut p = ThresholdPolicy::new(theta, derefine).map_err(fail("threshold"))?;
        let mesh = first_mesh(cfg, ic, &mut p)?;
        let gap = mesh.len().abs_diff(elements);
        if best.as_ref().is_none_or(|b| gap < b.0 || (gap == b.0 && mesh.len() > b.1)) {
            best = Some((gap, mesh.len(), theta, mesh));
        }
    }
    let (_, _, theta, mesh) = best.ok_or("no threshold candidates")?;
    Ok((theta, mesh))
}

pub fn run() -> Outcome {
    let t = desk::trained(desk::SEEDS[0])?;
    let cfg = unbudgeted(&t.cfg.env);
    let velocity = velocity_from_polar(SPEED, 0.125);
    let starts = [[0.6, 0.6], [1.05, 0.7], [0.7, 1.2], [1.3, 1.35]];
    let (mut vdgn, mut thr) = (0.0, 0.0);
    let mut lines = Vec::new();
    for center in starts {
        let ic = InitialCondition::Gaussian { center, width: WIDTH, velocity };
        let target = traversed(&cfg, center, velocity, cfg.tau_step);
        let mut greedy = GreedyPolicy { config: &t.cfg.model, params: &t.params, preference: None };
        let mesh = first_mesh(&cfg, &ic, &mut greedy)?;
        let (theta, tmesh) = matched_threshold(&cfg, &ic, t.cfg.eval.derefine, mesh.len())?;
        let (cv, ct) = (coverage(&refined_cells(&mesh), &target), coverage(&refined_cells(&tmesh), &target));
        vdgn += cv / starts.len() as f64;
        thr += ct / starts.len() as f64;
        lines.push(format!(
            "({:.2},{:.2}) path {} cells: vdgn {:.2} with {} elements, threshold {theta:.1e} {:.2} with {}",
            center[0],
            center[1],
            target.len(),
            cv,
            mesh.len(),
            ct,
            tmesh.len()
        ));
    }
    let detail = format!("coverage vdgn {vdgn:.3} threshold {thr:.3}; {}", lines.join("; "));
    ensure!(vdgn >= MIN_COVERAGE && thr < vdgn, "{detail}");
    Ok(detail)
}
