use amr_core::dg::{self, AdvectionOperator, DgField};
use amr_core::ic::InitialCondition;
use amr_core::mesh::{ElementId, QuadMesh};

use crate::{ensure, Outcome};

const FREE_STREAM_TOL: f64 = 1e-12;
const MASS_DRIFT_TOL: f64 = 1e-10;
const ORDER_RANGE: (f64, f64) = (1.7, 2.3);

/// Scattered refinement to depth 2 so conforming, hanging and wrapped faces all occur.
fn mixed_mesh() -> QuadMesh {
    let mut m = QuadMesh::new_uniform(8, 8, 2.0, 2.0, 2);
    for id in [0u64, 7, 9, 27, 36, 56, 63] {
        m.refine(ElementId(id)).unwrap();
    }
    let deeper: Vec<ElementId> = m.ids().filter(|id| id.0 >= 64).step_by(3).collect();
    for id in deeper {
        m.refine(id).unwrap();
    }
    m
}

fn advance(mesh: &QuadMesh, ic: &InitialCondition, dt: f64, steps: usize) -> DgField {
    let mut field = dg::project_ic(mesh, ic);
    let op = AdvectionOperator::assemble(mesh, ic);
    let mut u = field.to_vec();
    op.advance(&mut u, dt, steps, |_, _| {}).unwrap();
    field.set_from_slice(&u);
    field
}

pub fn run() -> Outcome {
    let mesh = mixed_mesh();
    let mut free: f64 = 0.0;
    for v in [[1.5, 0.0], [-0.7, 1.1], [1.0, 1.0]] {
        let ic = InitialCondition::Constant { value: 1.0, velocity: v };
        for c in advance(&mesh, &ic, 0.002, 100).coeffs.values() {
            for x in c {
                free = free.max((x - 1.0).abs());
            }
        }
    }
    ensure!(free < FREE_STREAM_TOL, "constant state drifted by {free:e}");

    let ic = InitialCondition::Gaussian { center: [0.8, 1.1], width: 100.0, velocity: [1.2, -0.8] };
    let m0 = dg::project_ic(&mesh, &ic).integral(&mesh);
    let drift = (advance(&mesh, &ic, 0.002, 500).integral(&mesh) - m0).abs();
    ensure!(drift < MASS_DRIFT_TOL, "mass drift {drift:e} over 500 steps");

    // same final time on meshes h and h/2 with a fixed small dt
    let smooth = InitialCondition::Gaussian { center: [0.8, 1.1], width: 10.0, velocity: [1.5, 1.5] };
    let error = |n: u32| {
        let m = QuadMesh::new_uniform(n, n, 2.0, 2.0, 0);
        let f = advance(&m, &smooth, 0.002, 125);
        dg::element_errors(&m, &f, &smooth, 0.25).global
    };
    let order = (error(16) / error(32)).log2();
    ensure!((ORDER_RANGE.0..=ORDER_RANGE.1).contains(&order), "convergence order {order:.3}");
    Ok(format!("free-stream {free:.1e}, mass drift {drift:.1e}, order {order:.3}"))
}
