//! Desk-scale training runs shared by several criteria.
//!
//! Trained checkpoints are cached under the cargo target directory, keyed by
//! the full resolved config, so re-running the acceptance target only
//! re-evaluates. Set `AMR_ACCEPTANCE_RETRAIN=1` to ignore the cache.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use amr_autodiff::ParamSet;
use amr_core::checkpoint::Checkpoint;
use amr_core::config::RunConfig;
use amr_core::learner::{load_policy, metrics_csv, Learner, MetricsRow};
use amr_core::model::VdgnConfig;

use crate::fail;

pub const SEEDS: [u64; 3] = [11, 12, 13];

/// 8×8 mesh, depth 1, three decisions per episode.
pub const DESK: &str = "
output = 'runs/desk'
[env]
nx = 8
ny = 8
depth_max = 1
tau_step = 0.25
tau_final = 0.75
dof_threshold = 1405.0
[model]
hidden = 16
heads = 2
layers = 2
passes = 1
[train]
episodes = 1500
batch_size = 16
train_every = 1
learning_rate = 1e-3
epsilon_start = 0.2
epsilon_end = 0.01
epsilon_episodes = 1500
eval_every = 75
eval_ics = 30
keep_best = true
";

#[derive(Clone)]
pub struct Trained {
    pub cfg: RunConfig,
    pub params: ParamSet,
    pub metrics: Vec<MetricsRow>,
    pub from_cache: bool,
}

pub fn config(text: &str, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::from_toml(text, "acceptance").expect("pinned config is valid");
    cfg.seed = seed;
    cfg
}

pub fn model() -> VdgnConfig {
    config(DESK, 0).model
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn parse_metrics(csv: &str) -> Option<Vec<MetricsRow>> {
    csv.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<f64> = line.split(',').map(|x| x.parse().ok()).collect::<Option<_>>()?;
            (f.len() == 7).then(|| MetricsRow {
                episode: f[0] as usize,
                mean_return: f[1],
                mean_eta: f[2],
                mean_error: f[3],
                mean_dof: f[4],
                epsilon: f[5],
                loss: f[6],
            })
        })
        .collect()
}

fn load_cached(name: &str, cfg: &RunConfig) -> Option<Trained> {
    if std::env::var_os("AMR_ACCEPTANCE_RETRAIN").is_some() {
        return None;
    }
    let dir = cache_dir();
    let ckpt = Checkpoint::load(&dir.join(format!("{name}.bin"))).ok()?;
    let (model, params, text) = load_policy(&ckpt).ok()?;
    if text.as_deref() != Some(cfg.to_toml().as_str()) || model != cfg.model {
        return None;
    }
    let metrics = parse_metrics(&std::fs::read_to_string(dir.join(format!("{name}.csv"))).ok()?)?;
    Some(Trained {
        cfg: cfg.clone(),
        params,
        metrics,
        from_cache: true,
    })
}

/// Trains `cfg` from scratch, or loads the cached result of an identical run.
pub fn train_cached(name: &str, cfg: &RunConfig) -> Result<Trained, String> {
    static DONE: Mutex<Option<HashMap<String, Trained>>> = Mutex::new(None);
    if let Some(t) = DONE.lock().unwrap().get_or_insert_with(HashMap::new).get(name) {
        return Ok(t.clone());
    }
    let trained = match load_cached(name, cfg) {
        Some(t) => t,
        None => {
            let start = std::time::Instant::now();
            let mut learner = Learner::new(cfg.env.clone(), cfg.model.clone(), cfg.train.clone(), cfg.ics.clone(), cfg.seed).map_err(fail(name))?;
            learner.train(|_, _| Ok(())).map_err(fail(name))?;
            eprintln!("  trained {name} in {:.0}s", start.elapsed().as_secs_f64());
            let dir = cache_dir();
            std::fs::create_dir_all(&dir).map_err(fail("cache dir"))?;
            learner.to_checkpoint(Some(cfg.to_toml())).save(&dir.join(format!("{name}.bin"))).map_err(fail("cache"))?;
            std::fs::write(dir.join(format!("{name}.csv")), metrics_csv(&learner.metrics)).map_err(fail("cache"))?;
            Trained {
                cfg: cfg.clone(),
                params: learner.policy_params().clone(),
                metrics: learner.metrics.clone(),
                from_cache: false,
            }
        }
    };
    DONE.lock().unwrap().get_or_insert_with(HashMap::new).insert(name.to_string(), trained.clone());
    Ok(trained)
}

pub fn trained(seed: u64) -> Result<Trained, String> {
    train_cached(&format!("desk_seed{seed}"), &config(DESK, seed))
}
