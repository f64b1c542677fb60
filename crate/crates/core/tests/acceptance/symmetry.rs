use amr_autodiff::ParamSet;
use amr_core::env::EnvConfig;
use amr_core::eval::{equivariance_suite, Transform};
use amr_core::ic::InitialCondition;
use amr_core::model::VdgnConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{desk, ensure, fail, Outcome};

fn transforms(n: i64) -> Vec<Transform> {
    let mut t: Vec<Transform> = (1..4).map(Transform::Rotate).collect();
    for s in [[1, 0], [0, 1], [3, -2], [n / 2, n - 1]] {
        t.push(Transform::Translate(s));
    }
    t
}

fn ics() -> [InitialCondition; 3] {
    [
        InitialCondition::Gaussian { center: [0.8, 1.3], width: 100.0, velocity: [0.9, 0.4] },
        InitialCondition::Gaussian { center: [1.4, 0.6], width: 100.0, velocity: [-1.06, 1.06] },
        InitialCondition::Anisotropic { center: [1.1, 1.0], wx: 80.0, wy: 30.0, wxy: 20.0, velocity: [0.2, -1.3] },
    ]
}

fn check(label: &str, model: &VdgnConfig, params: &ParamSet) -> Result<usize, String> {
    let mut compared = 0;
    for n in [8u32, 16] {
        let cfg = EnvConfig { nx: n, ny: n, dof_threshold: f64::INFINITY, ..EnvConfig::default() };
        for ic in ics() {
            let rows = equivariance_suite(&cfg, model, params, &ic, &transforms(n as i64)).map_err(fail("equivariance"))?;
            ensure!(rows.len() == 8, "{label} {n}x{n}: expected 8 checks, got {}", rows.len());
            for r in rows {
                ensure!(r.passed() && r.elements > 0, "{label} {n}x{n} {}: {} of {} actions differ", r.label, r.mismatches, r.elements);
                compared += r.elements;
            }
        }
    }
    Ok(compared)
}

pub fn run() -> Outcome {
    let model = desk::model();
    let random = model.init_params(&mut ChaCha8Rng::seed_from_u64(3));
    let a = check("random", &model, &random)?;
    let trained = desk::trained(desk::SEEDS[0])?;
    let b = check("trained", &trained.cfg.model, &trained.params)?;
    Ok(format!("{a} random and {b} trained element actions matched"))
}
