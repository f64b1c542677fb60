//! Value-decomposition Q-learning over the refinement game.

use std::fmt::Write as _;
use std::sync::Arc;

use amr_autodiff::{Adam, AdamConfig, AdamError, ParamSet, Tape, Tensor, TensorError};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{check_compatible, Checkpoint, CheckpointError};
use crate::env::{AmrEnv, EnvConfig, EnvError, MeshGraph, NUM_ACTIONS};
use crate::eval::{self, EvalError, GreedyPolicy, References, Start};
use crate::ic::{IcDistribution, InitialCondition};
use crate::model::{forward, greedy_from_q, q_values, GraphBatch, ModelError, VdgnConfig};
use crate::replay::{ReplayBuffer, ReplayConfig, Transition};

pub const STREAM_IC: u64 = 1;
pub const STREAM_EXPLORE: u64 = 2;
pub const STREAM_REPLAY: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_EVAL: u64 = 5;

/// Independent generator for one purpose, derived from the run seed.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Evaluation ICs drawn from the eval stream of `seed`.
pub fn held_out(dist: &IcDistribution, n: usize, seed: u64) -> Vec<InitialCondition> {
    let mut rng = stream(seed, STREAM_EVAL);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    /// Environment steps between gradient steps.
    pub train_every: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which ε decays linearly.
    pub epsilon_episodes: usize,
    /// Soft target update rate.
    pub target_rate: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub replay: ReplayConfig,
    pub eval_every: usize,
    pub eval_ics: usize,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Largest preference set searched by the envelope target; 0 means all in the batch.
    pub envelope_cap: usize,
    /// When false, rollouts and evaluation run but no gradient step is taken.
    pub learn: bool,
    /// Use the parameters with the best evaluation efficiency as the policy.
    /// Evaluations before the first gradient step are not candidates.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            batch_size: 16,
            train_every: 4,
            epsilon_start: 0.5,
            epsilon_end: 0.01,
            epsilon_episodes: 20_000,
            target_rate: 0.0112,
            learning_rate: 5e-4,
            gamma: 1.0,
            replay: ReplayConfig::default(),
            eval_every: 200,
            eval_ics: 10,
            checkpoint_every: 0,
            envelope_cap: 0,
            learn: true,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::Config(m.to_string()));
        if self.batch_size == 0 || self.train_every == 0 {
            return bad("batch_size and train_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) || self.epsilon_end > self.epsilon_start {
            return bad("need 0 ≤ epsilon_end ≤ epsilon_start ≤ 1");
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return bad("target_rate must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.replay.capacity < self.batch_size {
            return bad("replay capacity must hold at least one batch");
        }
        if !(0.0..1.0).contains(&self.replay.uniform) {
            return bad("replay uniform mass must lie in [0, 1)");
        }
        Ok(())
    }

    /// Linear decay per episode, then constant.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.epsilon_episodes == 0 {
            return self.epsilon_end;
        }
        let f = (episode as f64 / self.epsilon_episodes as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<AdamError> for LearnerError {
    fn from(e: AdamError) -> Self {
        LearnerError::Divergence(e.to_string())
    }
}

/// Per agent: uniform random action with probability `epsilon`, else `greedy`.
pub fn epsilon_greedy<R: Rng + ?Sized>(greedy: &[u8], epsilon: f64, rng: &mut R) -> Vec<u8> {
    greedy
        .iter()
        .map(|&g| if rng.gen::<f64>() < epsilon { rng.gen_range(0..NUM_ACTIONS as u8) } else { g })
        .collect()
}

pub fn act_epsilon_greedy<R: Rng + ?Sized>(
    model: &VdgnConfig,
    params: &ParamSet,
    graph: &MeshGraph,
    preference: Option<[f64; 2]>,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<u8>, ModelError> {
    let greedy = if epsilon >= 1.0 {
        vec![0; graph.num_nodes]
    } else {
        crate::model::greedy_joint_action(model, params, graph, preference)?
    };
    Ok(epsilon_greedy(&greedy, epsilon, rng))
}

/// Double-Q value-decomposition targets. `None` marks a terminal transition.
pub fn td_targets(
    model: &VdgnConfig,
    main: &ParamSet,
    target: &ParamSet,
    next: &[Option<&MeshGraph>],
    rewards: &[f64],
    gamma: f64,
) -> Result<Vec<f64>, ModelError> {
    let live: Vec<(&MeshGraph, Option<[f64; 2]>)> = next.iter().flatten().map(|g| (*g, None)).collect();
    let mut y: Vec<f64> = rewards.to_vec();
    if live.is_empty() {
        return Ok(y);
    }
    let batch = GraphBatch::build(model, &live)?;
    let q_main = q_values(model, main, &batch)?;
    let q_target = q_values(model, target, &batch)?;
    let greedy = greedy_from_q(&q_main, 1, None);
    let mut g = 0;
    for (i, n) in next.iter().enumerate() {
        if n.is_some() {
            let range = batch.offsets[g]..batch.offsets[g + 1];
            let bootstrap: f64 = range.map(|r| q_target.at(r, greedy[r] as usize)).sum();
            y[i] += gamma * bootstrap;
            g += 1;
        }
    }
    Ok(y)
}

/// Envelope targets for vector rewards: for each item, the best over actions
/// and candidate preferences of `ωᵀQ′(s′, a, ω′)`, returned as the vector.
pub fn envelope_targets(
    model: &VdgnConfig,
    target: &ParamSet,
    next: &[Option<&MeshGraph>],
    rewards: &[[f64; 2]],
    preferences: &[[f64; 2]],
    candidates: &[[f64; 2]],
    gamma: f64,
) -> Result<Vec<[f64; 2]>, ModelError> {
    let mut y: Vec<[f64; 2]> = rewards.to_vec();
    let mut items = Vec::new();
    for g in next.iter().flatten() {
        for w in candidates {
            items.push((*g, Some(*w)));
        }
    }
    if items.is_empty() {
        return Ok(y);
    }
    let batch = GraphBatch::build(model, &items)?;
    let q = q_values(model, target, &batch)?;
    let mut slot = 0;
    for (i, n) in next.iter().enumerate() {
        if n.is_none() {
            continue;
        }
        let w = preferences[i];
        let mut best: Option<(f64, [f64; 2])> = None;
        for _ in candidates {
            let range = batch.offsets[slot]..batch.offsets[slot + 1];
            let mut sum = [0.0; 2];
            for r in range {
                let row = q.row(r);
                let mut a_best = 0;
                for a in 1..NUM_ACTIONS {
                    if w[0] * row[2 * a] + w[1] * row[2 * a + 1] > w[0] * row[2 * a_best] + w[1] * row[2 * a_best + 1] {
                        a_best = a;
                    }
                }
                sum[0] += row[2 * a_best];
                sum[1] += row[2 * a_best + 1];
            }
            let score = w[0] * sum[0] + w[1] * sum[1];
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, sum));
            }
            slot += 1;
        }
        let v = best.expect("non-empty candidate set").1;
        y[i] = [y[i][0] + gamma * v[0], y[i][1] + gamma * v[1]];
    }
    Ok(y)
}

/// One evaluation point of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub mean_return: f64,
    pub mean_eta: f64,
    pub mean_error: f64,
    pub mean_dof: f64,
    pub epsilon: f64,
    pub loss: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("episode,mean_return,mean_eta,mean_c,mean_d,epsilon,loss\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:e},{},{},{}", r.episode, r.mean_return, r.mean_eta, r.mean_error, r.mean_dof, r.epsilon, r.loss);
    }
    out
}

/// Per-episode record handed to the progress callback.
#[derive(Clone, Debug)]
pub struct EpisodeLog {
    pub episode: usize,
    pub episode_return: f64,
    pub epsilon: f64,
    pub preference: Option<[f64; 2]>,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct StreamState {
    stream: u64,
    word_pos: String,
}

fn save_stream(rng: &ChaCha8Rng) -> StreamState {
    StreamState {
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

fn load_stream(seed: u64, s: &StreamState) -> Result<ChaCha8Rng, CheckpointError> {
    let mut rng = stream(seed, s.stream);
    let pos: u128 = s.word_pos.parse().map_err(|_| CheckpointError::Format(format!("bad stream position `{}`", s.word_pos)))?;
    rng.set_word_pos(pos);
    Ok(rng)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Manifest {
    model: VdgnConfig,
    seed: u64,
    episode: usize,
    env_steps: u64,
    train_steps: u64,
    adam_step: u64,
    streams: Vec<StreamState>,
    /// Resolved run configuration as TOML, if the caller provided one.
    run_config: Option<String>,
    #[serde(default)]
    best_eta: Option<f64>,
}

pub struct Learner {
    pub env: EnvConfig,
    pub model: VdgnConfig,
    pub train: TrainConfig,
    pub ics: IcDistribution,
    pub seed: u64,
    pub params: ParamSet,
    pub target: ParamSet,
    pub adam: Adam,
    pub buffer: ReplayBuffer,
    pub episode: usize,
    pub env_steps: u64,
    pub train_steps: u64,
    pub metrics: Vec<MetricsRow>,
    pub last_loss: f64,
    /// Evaluation efficiency and parameters of the best snapshot, with `keep_best`.
    pub best: Option<(f64, ParamSet)>,
    ic_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    eval_set: Vec<(InitialCondition, References)>,
}

impl Learner {
    pub fn new(env: EnvConfig, model: VdgnConfig, train: TrainConfig, ics: IcDistribution, seed: u64) -> Result<Self, LearnerError> {
        env.validate()?;
        model.validate()?;
        train.validate()?;
        if model.depth_max != env.depth_max {
            return Err(LearnerError::Config(format!("model depth_max {} differs from env depth_max {}", model.depth_max, env.depth_max)));
        }
        if model.multi_objective != env.multi_objective {
            return Err(LearnerError::Config("model and env disagree on multi_objective".into()));
        }
        let params = model.init_params(&mut stream(seed, STREAM_INIT));
        let adam = Adam::new(
            AdamConfig {
                learning_rate: train.learning_rate,
                ..AdamConfig::default()
            },
            &params,
        );
        Ok(Self {
            target: params.clone(),
            params,
            adam,
            buffer: ReplayBuffer::new(train.replay),
            episode: 0,
            env_steps: 0,
            train_steps: 0,
            metrics: Vec::new(),
            last_loss: f64::NAN,
            best: None,
            ic_rng: stream(seed, STREAM_IC),
            explore_rng: stream(seed, STREAM_EXPLORE),
            replay_rng: stream(seed, STREAM_REPLAY),
            eval_set: Vec::new(),
            env,
            model,
            train,
            ics,
            seed,
        })
    }

    fn preference_of(&self, t: &Transition) -> [f64; 2] {
        t.preference.unwrap_or([0.5, 0.5])
    }

    /// One gradient step on a prioritized minibatch. Returns the loss.
    pub fn train_step(&mut self) -> Result<f64, LearnerError> {
        let m = self.train.batch_size;
        let sample = self.buffer.sample(m, &mut self.replay_rng);
        let items: Vec<Transition> = sample.indices.iter().map(|&i| self.buffer.get(i).clone()).collect();
        let next: Vec<Option<&MeshGraph>> = items.iter().map(|t| (!t.done).then_some(t.next.as_ref())).collect();
        let k = self.model.objectives();
        let targets: Vec<[f64; 2]> = if self.model.multi_objective {
            let prefs: Vec<[f64; 2]> = items.iter().map(|t| self.preference_of(t)).collect();
            let mut candidates: Vec<[f64; 2]> = Vec::new();
            for p in &prefs {
                if !candidates.contains(p) {
                    candidates.push(*p);
                }
            }
            if self.train.envelope_cap > 0 {
                candidates.truncate(self.train.envelope_cap);
            }
            // each item always searches its own preference
            let mut out = Vec::with_capacity(m);
            for (i, t) in items.iter().enumerate() {
                let mut cand = candidates.clone();
                if !cand.contains(&prefs[i]) {
                    cand.push(prefs[i]);
                }
                let y = envelope_targets(&self.model, &self.target, &next[i..i + 1], &[t.reward], &prefs[i..i + 1], &cand, self.train.gamma)?;
                out.push(y[0]);
            }
            out
        } else {
            let rewards: Vec<f64> = items.iter().map(|t| t.reward[0]).collect();
            td_targets(&self.model, &self.params, &self.target, &next, &rewards, self.train.gamma)?
                .into_iter()
                .map(|y| [y, 0.0])
                .collect()
        };

        let graphs: Vec<(&MeshGraph, Option<[f64; 2]>)> = items.iter().map(|t| (t.graph.as_ref(), t.preference)).collect();
        let batch = GraphBatch::build(&self.model, &graphs)?;
        let mut owner = Vec::with_capacity(batch.num_nodes());
        let mut actions = Vec::with_capacity(batch.num_nodes());
        for (g, t) in items.iter().enumerate() {
            owner.extend(std::iter::repeat_n(g, t.actions.len()));
            actions.extend(t.actions.iter().map(|&a| a as usize));
        }
        let owner: Arc<[usize]> = owner.into();

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let q = forward(&mut tape, &self.model, &bound, &batch)?;
        let weights = tape.constant(Tensor::vector(sample.weights.clone()));
        let mut sq = None;
        let mut residuals = vec![[0.0; 2]; m];
        for obj in 0..k {
            let cols: Arc<[usize]> = actions.iter().map(|a| a * k + obj).collect();
            let picked = tape.pick_per_row(q, &cols)?;
            let per_graph = tape.scatter_add_rows(picked, &owner, m)?;
            let y = tape.constant(Tensor::vector(targets.iter().map(|t| t[obj]).collect()));
            let diff = tape.sub(per_graph, y)?;
            for (i, r) in tape.value(diff).data().iter().enumerate() {
                residuals[i][obj] = *r;
            }
            let d2 = tape.mul(diff, diff)?;
            sq = Some(match sq {
                None => d2,
                Some(s) => tape.add(s, d2)?,
            });
        }
        let weighted = tape.mul(sq.expect("at least one objective"), weights)?;
        let total = tape.sum(weighted);
        let loss = tape.scale(total, 1.0 / m as f64);
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(LearnerError::Divergence(format!("loss is {loss_value} at train step {}", self.train_steps)));
        }
        let grads = tape.backward(loss)?;
        self.adam.step_bound(&mut self.params, &bound, &grads)?;
        for (slot, &i) in sample.indices.iter().enumerate() {
            let r = residuals[slot];
            self.buffer.set_priority(i, (r[0] * r[0] + r[1] * r[1]).sqrt());
        }
        self.target.soft_update_from(&self.params, self.train.target_rate);
        self.train_steps += 1;
        self.last_loss = loss_value;
        Ok(loss_value)
    }

    /// Preference on the simplex, `[α, 1 − α]` with α uniform.
    fn sample_preference(&mut self) -> Option<[f64; 2]> {
        self.model.multi_objective.then(|| {
            let a: f64 = self.ic_rng.gen();
            [a, 1.0 - a]
        })
    }

    /// One ε-greedy episode with learning. Returns its log.
    pub fn run_training_episode(&mut self) -> Result<EpisodeLog, LearnerError> {
        let ic = self.ics.sample(&mut self.ic_rng);
        let pref = self.sample_preference();
        let eps = self.train.epsilon(self.episode);
        let (mut env, g) = AmrEnv::reset(&self.env, &ic)?;
        let mut graph = Arc::new(g);
        let mut ret = 0.0;
        loop {
            let actions = act_epsilon_greedy(&self.model, &self.params, &graph, pref, eps, &mut self.explore_rng)?;
            let r = env.step(&actions)?;
            let reward = if self.model.multi_objective { r.reward_vector } else { [r.reward, 0.0] };
            ret += match pref {
                Some(w) => w[0] * reward[0] + w[1] * reward[1],
                None => reward[0],
            };
            let next = Arc::new(r.graph);
            self.buffer.push(Transition {
                graph: graph.clone(),
                actions,
                reward,
                next: next.clone(),
                done: r.done,
                preference: pref,
            });
            self.env_steps += 1;
            if self.train.learn && self.env_steps % self.train.train_every as u64 == 0 && self.buffer.len() >= self.train.batch_size {
                self.train_step()?;
            }
            graph = next;
            if r.done {
                break;
            }
        }
        self.episode += 1;
        Ok(EpisodeLog {
            episode: self.episode,
            episode_return: ret,
            epsilon: eps,
            preference: pref,
            loss: self.last_loss,
        })
    }

    /// Fixed held-out ICs from the evaluation stream, with their references.
    pub fn eval_set(&mut self) -> Result<&[(InitialCondition, References)], LearnerError> {
        if self.eval_set.len() != self.train.eval_ics {
            let ics = held_out(&self.ics, self.train.eval_ics, self.seed);
            let env = self.env.clone();
            let refs = crate::par::map_slice(&ics, |ic| References::compute(&env, ic));
            self.eval_set = ics.into_iter().zip(refs).map(|(ic, r)| r.map(|r| (ic, r))).collect::<Result<_, _>>()?;
        }
        Ok(&self.eval_set)
    }

    /// Greedy rollouts on the evaluation set under the training config.
    pub fn evaluate(&mut self) -> Result<MetricsRow, LearnerError> {
        let set = self.eval_set()?.to_vec();
        let pref = self.model.multi_objective.then_some([0.5, 0.5]);
        let (env, model, params) = (&self.env, &self.model, &self.params);
        let runs = crate::par::map_slice(&set, |(ic, refs)| -> Result<(f64, eval::EfficiencyRecord), EvalError> {
            let mut policy = GreedyPolicy {
                config: model,
                params,
                preference: pref,
            };
            // return under the training budget, efficiency run to the final time
            let out = eval::run_episode(env, ic, Start::Adaptive, &mut policy)?;
            let ret = match pref {
                Some(w) => w[0] * out.return_vector[0] + w[1] * out.return_vector[1],
                None => out.episode_return,
            };
            let full = eval::run_episode(&eval::unbudgeted(env), ic, Start::Adaptive, &mut policy)?;
            Ok((ret, eval::efficiency(full.final_error, full.cumulative_dof as f64, *refs)?))
        });
        let runs: Vec<(f64, eval::EfficiencyRecord)> = runs.into_iter().collect::<Result<_, _>>()?;
        let n = runs.len().max(1) as f64;
        let row = MetricsRow {
            episode: self.episode,
            mean_return: runs.iter().map(|r| r.0).sum::<f64>() / n,
            mean_eta: runs.iter().map(|r| r.1.eta).sum::<f64>() / n,
            mean_error: runs.iter().map(|r| r.1.c).sum::<f64>() / n,
            mean_dof: runs.iter().map(|r| r.1.d).sum::<f64>() / n,
            epsilon: self.train.epsilon(self.episode),
            loss: self.last_loss,
        };
        if self.train.keep_best && self.train_steps > 0 && self.best.as_ref().is_none_or(|b| row.mean_eta > b.0) {
            self.best = Some((row.mean_eta, self.params.clone()));
        }
        self.metrics.push(row.clone());
        Ok(row)
    }

    /// Parameters to act with after training: the best snapshot if kept, else the current ones.
    pub fn policy_params(&self) -> &ParamSet {
        self.best.as_ref().map_or(&self.params, |b| &b.1)
    }

    /// Trains until `train.episodes`, evaluating every `eval_every` episodes
    /// and calling `on_episode` after each one.
    pub fn train(&mut self, mut on_episode: impl FnMut(&Learner, &EpisodeLog) -> Result<(), LearnerError>) -> Result<(), LearnerError> {
        if self.episode == 0 && self.train.eval_every > 0 {
            self.evaluate()?;
        }
        while self.episode < self.train.episodes {
            let log = self.run_training_episode()?;
            if self.train.eval_every > 0 && self.episode % self.train.eval_every == 0 {
                self.evaluate()?;
            }
            on_episode(self, &log)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, run_config: Option<String>) -> Checkpoint {
        let manifest = Manifest {
            model: self.model.clone(),
            seed: self.seed,
            episode: self.episode,
            env_steps: self.env_steps,
            train_steps: self.train_steps,
            adam_step: self.adam.step,
            streams: [&self.ic_rng, &self.explore_rng, &self.replay_rng].map(save_stream).to_vec(),
            run_config,
            best_eta: self.best.as_ref().map(|b| b.0),
        };
        let mut groups = IndexMap::new();
        groups.insert("main".to_string(), self.params.clone());
        groups.insert("target".to_string(), self.target.clone());
        groups.insert("adam1".to_string(), self.adam.first.clone());
        groups.insert("adam2".to_string(), self.adam.second.clone());
        if let Some((_, p)) = &self.best {
            groups.insert("best".to_string(), p.clone());
        }
        Checkpoint {
            manifest: serde_json::to_value(manifest).expect("manifest serialises"),
            groups,
        }
    }

    /// Restores parameters, optimiser state, counters and RNG positions.
    /// The replay buffer is not persisted and starts empty.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<(), LearnerError> {
        let m: Manifest = serde_json::from_value(ckpt.manifest.clone()).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if m.model != self.model {
            return Err(CheckpointError::Mismatch(format!("checkpoint model {:?} differs from configured {:?}", m.model, self.model)).into());
        }
        for g in ["main", "target", "adam1", "adam2"] {
            check_compatible(&self.params, ckpt.group(g)?)?;
        }
        self.params = ckpt.group("main")?.clone();
        self.target = ckpt.group("target")?.clone();
        self.adam.first = ckpt.group("adam1")?.clone();
        self.adam.second = ckpt.group("adam2")?.clone();
        self.adam.step = m.adam_step;
        self.episode = m.episode;
        self.env_steps = m.env_steps;
        self.train_steps = m.train_steps;
        self.seed = m.seed;
        if m.streams.len() != 3 {
            return Err(CheckpointError::Format("expected three RNG streams".into()).into());
        }
        self.ic_rng = load_stream(m.seed, &m.streams[0])?;
        self.explore_rng = load_stream(m.seed, &m.streams[1])?;
        self.replay_rng = load_stream(m.seed, &m.streams[2])?;
        self.best = match (m.best_eta, ckpt.groups.get("best")) {
            (Some(eta), Some(p)) => {
                check_compatible(&self.params, p)?;
                Some((eta, p.clone()))
            }
            (None, None) => None,
            _ => return Err(CheckpointError::Format("best snapshot and its score must come together".into()).into()),
        };
        Ok(())
    }
}

/// Model config and policy parameters from a checkpoint, for evaluation.
/// The kept best snapshot wins over the latest parameters.
pub fn load_policy(ckpt: &Checkpoint) -> Result<(VdgnConfig, ParamSet, Option<String>), CheckpointError> {
    let m: Manifest = serde_json::from_value(ckpt.manifest.clone()).map_err(|e| CheckpointError::Format(e.to_string()))?;
    m.model.validate().map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    let reference = m.model.init_params(&mut stream(0, STREAM_INIT));
    let params = match ckpt.groups.get("best") {
        Some(p) => p,
        None => ckpt.group("main")?,
    };
    check_compatible(&reference, params)?;
    Ok((m.model, params.clone(), m.run_config))
}
