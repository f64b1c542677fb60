use amr_core::env::EnvConfig;
use amr_core::eval::{efficiency, run_episode, uniform_fine_mesh, unbudgeted, References, Start, StaticPolicy};
use amr_core::ic::IcDistribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{ensure, fail, Outcome};

const ETA_TOL: f64 = 1e-12;

pub fn run() -> Outcome {
    let cfg = EnvConfig { nx: 8, ny: 8, dof_threshold: 1405.0, ..EnvConfig::default() };
    let open = unbudgeted(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let ic = IcDistribution::default().sample(&mut rng);
        let refs = References::compute(&cfg, &ic).map_err(fail("references"))?;
        for mesh in [open.uniform_mesh(), uniform_fine_mesh(&open)] {
            let run = run_episode(&open, &ic, Start::Mesh(mesh), &mut StaticPolicy).map_err(fail("static run"))?;
            let rec = efficiency(run.final_error, run.cumulative_dof as f64, refs).map_err(fail("efficiency"))?;
            worst = worst.max(rec.eta.abs());
        }
    }
    ensure!(worst <= ETA_TOL, "static endpoint eta {worst:e}");
    Ok(format!("max |eta| {worst:.1e} over 10 ICs"))
}
