use amr_core::checkpoint::Checkpoint;
use amr_core::config::RunConfig;
use amr_core::eval::{efficiency_csv, efficiency_records, references, GreedyPolicy};
use amr_core::learner::{held_out, load_policy, Learner};

use crate::{ensure, fail, Outcome};

const RUN: &str = "
seed = 4
[env]
nx = 4
ny = 4
tau_final = 0.5
dof_threshold = 400.0
[model]
hidden = 8
layers = 1
passes = 1
[train]
episodes = 3
batch_size = 4
train_every = 1
eval_every = 0
epsilon_episodes = 3
[eval]
ics = 6
";

/// Efficiency CSV of the checkpoint's greedy policy under `cfg`.
fn eval_csv(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<String, String> {
    let (model, params, _) = load_policy(ckpt).map_err(fail("load policy"))?;
    ensure!(model == cfg.model, "checkpoint model differs from config");
    let ics = held_out(&cfg.ics, cfg.eval.ics, cfg.seed);
    let refs = references(&cfg.env, &ics).map_err(fail("references"))?;
    let mut policy = GreedyPolicy { config: &model, params: &params, preference: None };
    let recs = efficiency_records(&cfg.env, &ics, &refs, &mut policy).map_err(fail("eval"))?;
    Ok(efficiency_csv(&recs))
}

fn bits(c: &Checkpoint) -> Vec<(String, Vec<u64>)> {
    c.groups
        .iter()
        .flat_map(|(g, set)| set.iter().map(move |(n, t)| (format!("{g}/{n}"), t.data().iter().map(|x| x.to_bits()).collect())))
        .collect()
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let cfg = RunConfig::from_toml(RUN, "acceptance").map_err(fail("config"))?;
    let mut learner = Learner::new(cfg.env.clone(), cfg.model.clone(), cfg.train.clone(), cfg.ics.clone(), cfg.seed).map_err(fail("learner"))?;
    learner.train(|_, _| Ok(())).map_err(fail("train"))?;
    let resolved_text = cfg.to_toml();
    let ckpt = learner.to_checkpoint(Some(resolved_text.clone()));
    let path = dir.path().join("checkpoint.bin");
    ckpt.save(&path).map_err(fail("save"))?;
    let loaded = Checkpoint::load(&path).map_err(fail("load"))?;
    ensure!(bits(&loaded) == bits(&ckpt), "parameter bits changed across save/load");
    ensure!(loaded.to_bytes() == ckpt.to_bytes(), "re-serialised checkpoint differs");

    let mut fresh = Learner::new(cfg.env.clone(), cfg.model.clone(), cfg.train.clone(), cfg.ics.clone(), cfg.seed).map_err(fail("learner"))?;
    fresh.restore(&loaded).map_err(fail("restore"))?;
    ensure!(fresh.to_checkpoint(Some(resolved_text.clone())).to_bytes() == ckpt.to_bytes(), "restored learner checkpoints differently");

    let resolved_path = dir.path().join("config.toml");
    std::fs::write(&resolved_path, &resolved_text).map_err(fail("write config"))?;
    let resolved = RunConfig::load(&resolved_path).map_err(fail("resolved config"))?;
    ensure!(resolved == cfg, "resolved config does not parse back to the original");
    let a = eval_csv(&cfg, &ckpt)?;
    let b = eval_csv(&resolved, &loaded)?;
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    std::fs::write(&pa, &a).map_err(fail("write csv"))?;
    std::fs::write(&pb, &b).map_err(fail("write csv"))?;
    let (ba, bb) = (std::fs::read(&pa).map_err(fail("read"))?, std::fs::read(&pb).map_err(fail("read"))?);
    ensure!(ba == bb, "eval CSV from the resolved config differs");
    Ok(format!("{} bytes checkpoint, {} byte eval CSV identical", ckpt.to_bytes().len(), ba.len()))
}
