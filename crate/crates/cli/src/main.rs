//! `amr`: train, evaluate and compare mesh refinement policies.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amr_core::baselines::{brute_csv, brute_force_pareto, StripSetup};
use amr_core::checkpoint::{Checkpoint, CheckpointError};
use amr_core::config::{ConfigError, RunConfig};
use amr_core::env::EnvError;
use amr_core::eval::{
    self, equivariance_suite, error_vs_time, pareto_sweep, references, sweep_csv, sweep_row, symmetry_csv, EvalError, GreedyPolicy, Policy, Start,
    StaticPolicy, ThresholdPolicy, Transform,
};
use amr_core::ic::{IcDistribution, IcFamily};
use amr_core::learner::{held_out, load_policy, metrics_csv, Learner, LearnerError};
use amr_core::model::ModelError;
use amr_core::svg::line_plot;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "amr", version, about = "Multi-agent mesh refinement policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoints, metrics and the resolved config.
    Train(TrainArgs),
    /// Run an evaluation suite on a checkpoint.
    Eval(EvalArgs),
    /// Run a baseline policy family.
    Baseline(BaselineArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Train on vector rewards with random preferences.
    #[arg(long)]
    multi_objective: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Efficiency,
    Pareto,
    Equivariance,
    ErrorVsTime,
    Generalization,
}

#[derive(clap::Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    suite: Suite,
    /// Run config; defaults to the one stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ics: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Threshold,
    Bruteforce,
}

#[derive(clap::Args)]
struct BaselineArgs {
    #[arg(value_enum)]
    kind: BaselineKind,
    #[arg(long, value_delimiter = ',')]
    theta_r: Option<Vec<f64>>,
    #[arg(long)]
    theta_d: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,2,4,8,16,32,64")]
    widths: Vec<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ics: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure with its process exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Mismatch(String),
    Diverged(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Mismatch(_) => 3,
            Failure::Diverged(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Mismatch(m) | Failure::Diverged(m) | Failure::Other(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Mismatch(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite => Failure::Diverged(e.to_string()),
            ModelError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Env(m) => m.into(),
            EvalError::Invalid(_) => Failure::Usage(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<LearnerError> for Failure {
    fn from(e: LearnerError) -> Self {
        match e {
            LearnerError::Divergence(_) => Failure::Diverged(e.to_string()),
            LearnerError::Config(_) => Failure::Usage(e.to_string()),
            LearnerError::Checkpoint(c) => c.into(),
            LearnerError::Model(m) => m.into(),
            LearnerError::Eval(m) => m.into(),
            LearnerError::Env(m) => m.into(),
            _ => Failure::Other(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Other(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Other(format!("cannot create {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a),
        Command::Baseline(a) => baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(n) = args.episodes {
        cfg.train.episodes = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.output {
        cfg.output = o;
    }
    if args.multi_objective {
        cfg.env.multi_objective = true;
        cfg.model.multi_objective = true;
    }
    cfg.validate()?;
    create_dir(&cfg.output)?;
    let resolved = cfg.to_toml();
    write_file(&cfg.output.join("config.toml"), &resolved)?;

    let mut learner = Learner::new(cfg.env.clone(), cfg.model.clone(), cfg.train.clone(), cfg.ics.clone(), cfg.seed)?;
    if let Some(path) = &args.resume {
        learner.restore(&Checkpoint::load(path)?)?;
    }
    let mut episodes = String::from("episode,return,epsilon,alpha,loss\n");
    let every = cfg.train.checkpoint_every;
    let out = cfg.output.clone();
    let result = learner.train(|l, log| {
        let alpha = log.preference.map_or(String::new(), |w| w[0].to_string());
        let _ = writeln!(episodes, "{},{},{},{},{}", log.episode, log.episode_return, log.epsilon, alpha, log.loss);
        if every > 0 && log.episode % every == 0 {
            l.to_checkpoint(Some(resolved.clone())).save(&out.join(format!("checkpoint_{}.bin", log.episode)))?;
        }
        if let Some(m) = l.metrics.last().filter(|m| m.episode == log.episode) {
            eprintln!("episode {:>6}  return {:>8.4}  eta {:.4}  eps {:.3}  loss {:.4e}", m.episode, m.mean_return, m.mean_eta, m.epsilon, m.loss);
        }
        Ok(())
    });
    write_file(&cfg.output.join("episodes.csv"), &episodes)?;
    write_file(&cfg.output.join("metrics.csv"), &metrics_csv(&learner.metrics))?;
    result?;
    learner.to_checkpoint(Some(resolved)).save(&cfg.output.join("checkpoint.bin"))?;
    eprintln!("wrote {}", cfg.output.display());
    Ok(())
}

fn evaluate(args: EvalArgs) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (model, params, embedded) = load_policy(&ckpt)?;
    let mut cfg = match (&args.config, embedded) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(text)) => RunConfig::from_toml(&text, "checkpoint manifest")?,
        (None, None) => return Err(Failure::Usage("checkpoint carries no run config; pass --config".into())),
    };
    if cfg.model != model {
        return Err(Failure::Mismatch(format!("config model {:?} does not match checkpoint model {:?}", cfg.model, model)));
    }
    if let Some(n) = args.ics {
        cfg.eval.ics = n;
    }
    if let Some(t) = args.thresholds {
        cfg.eval.thresholds = t;
    }
    cfg.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let out = args.output.unwrap_or_else(|| cfg.output.join("eval"));
    create_dir(&out)?;
    let ics = held_out(&cfg.ics, cfg.eval.ics, seed);
    let pref = model.multi_objective.then_some([0.5, 0.5]);
    let greedy = |preference| GreedyPolicy {
        config: &model,
        params: &params,
        preference,
    };
    let thresholds = || -> Result<Vec<(String, Box<dyn Policy + '_>)>, Failure> {
        cfg.eval
            .thresholds
            .iter()
            .map(|&t| Ok((format!("threshold {t:e}"), Box::new(ThresholdPolicy::new(t, cfg.eval.derefine)?) as Box<dyn Policy>)))
            .collect()
    };

    match args.suite {
        Suite::Efficiency => {
            let refs = references(&cfg.env, &ics)?;
            let records = eval::efficiency_records(&cfg.env, &ics, &refs, &mut greedy(pref))?;
            let csv = eval::efficiency_csv(&records);
            let etas: Vec<f64> = records.iter().map(|e| e.eta).collect();
            write_file(&out.join("efficiency.csv"), &csv)?;
            let (mean, se) = eval::mean_and_stderr(&etas);
            println!("mean eta {mean:.6} ± {se:.6} over {} ICs", etas.len());
        }
        Suite::Pareto => {
            let mut policies = thresholds()?;
            if model.multi_objective {
                let n = cfg.eval.preferences.max(2);
                for k in 0..n {
                    let a = k as f64 / (n - 1) as f64;
                    policies.insert(k, (format!("vdgn alpha={a:.4}"), Box::new(greedy(Some([a, 1.0 - a])))));
                }
            } else {
                policies.insert(0, ("vdgn".to_string(), Box::new(greedy(None))));
            }
            let csv = sweep_csv(&pareto_sweep(&cfg.env, &ics, &mut policies)?);
            write_file(&out.join("pareto.csv"), &csv)?;
            print!("{csv}");
        }
        Suite::Equivariance => {
            let transforms = [
                Transform::Rotate(1),
                Transform::Rotate(2),
                Transform::Rotate(3),
                Transform::Translate([1, 0]),
                Transform::Translate([0, 1]),
                Transform::Translate([2, 3]),
            ];
            let rows = equivariance_suite(&cfg.env, &model, &params, &ics[0], &transforms)?;
            let csv = symmetry_csv(&rows);
            write_file(&out.join("equivariance.csv"), &csv)?;
            for r in &rows {
                println!("{:<20} {:>6} elements  {}", r.label, r.elements, if r.passed() { "pass" } else { "FAIL" });
            }
            if rows.iter().any(|r| !r.passed()) {
                return Err(Failure::Other("equivariance violated".into()));
            }
        }
        Suite::ErrorVsTime => {
            let ic = &ics[0];
            let mut policies = thresholds()?;
            policies.insert(0, ("vdgn".to_string(), Box::new(greedy(pref))));
            policies.push(("static".to_string(), Box::new(StaticPolicy)));
            let mut csv = String::from("policy,tau_step,t,error\n");
            let mut series = Vec::new();
            for (name, policy) in policies.iter_mut() {
                for (tau_step, curve) in error_vs_time(&cfg.env, ic, Start::Adaptive, policy.as_mut(), &cfg.eval.tau_steps)? {
                    for (t, c) in &curve {
                        let _ = writeln!(csv, "{name},{tau_step},{t},{c:e}");
                    }
                    series.push((format!("{name} step {tau_step}"), curve));
                }
            }
            write_file(&out.join("error_vs_time.csv"), &csv)?;
            write_file(&out.join("error_vs_time.svg"), &line_plot(&series, true, 640.0, 400.0))?;
            println!("wrote {}", out.join("error_vs_time.csv").display());
        }
        Suite::Generalization => {
            let mut csv = String::from("family,policy,mean_c,mean_d,mean_eta,stderr_eta,clamped\n");
            for family in [IcFamily::Gaussian, IcFamily::Anisotropic, IcFamily::Ring, IcFamily::Opposite] {
                let dist = IcDistribution { family, ..cfg.ics.clone() };
                let ics = held_out(&dist, cfg.eval.ics, seed);
                let refs = references(&cfg.env, &ics)?;
                let mut policies = thresholds()?;
                policies.insert(0, ("vdgn".to_string(), Box::new(greedy(pref))));
                for (name, policy) in policies.iter_mut() {
                    let r = sweep_row(&cfg.env, &ics, &refs, name, policy.as_mut())?;
                    let _ = writeln!(csv, "{family:?},{},{:e},{},{},{},{}", r.policy, r.mean_c, r.mean_d, r.mean_eta, r.stderr_eta, r.clamped);
                }
            }
            write_file(&out.join("generalization.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.ics {
        cfg.eval.ics = n;
    }
    if let Some(d) = args.theta_d {
        cfg.eval.derefine = d;
    }
    if let Some(t) = args.theta_r {
        cfg.eval.thresholds = t;
    }
    let out = args.output.unwrap_or_else(|| cfg.output.join("baseline"));
    match args.kind {
        BaselineKind::Threshold => {
            let mut policies = Vec::new();
            for &t in &cfg.eval.thresholds {
                policies.push((format!("threshold {t:e}"), ThresholdPolicy::new(t, cfg.eval.derefine)?));
            }
            cfg.validate()?;
            let seed = args.seed.unwrap_or(cfg.seed);
            let ics = held_out(&cfg.ics, cfg.eval.ics, seed);
            let refs = references(&cfg.env, &ics)?;
            let rows = policies
                .iter_mut()
                .map(|(name, p)| sweep_row(&cfg.env, &ics, &refs, name, p))
                .collect::<Result<Vec<_>, _>>()?;
            let csv = sweep_csv(&rows);
            create_dir(&out)?;
            write_file(&out.join("threshold.csv"), &csv)?;
            print!("{csv}");
        }
        BaselineKind::Bruteforce => {
            let points = brute_force_pareto(&StripSetup::default(), &args.widths)?;
            let csv = brute_csv(&points);
            create_dir(&out)?;
            write_file(&out.join("bruteforce.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}
