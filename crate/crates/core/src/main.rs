//! Command-line entry point: `train`, `evaluate`, `ablate`, `inspect`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use regrasp::config::RunConfig;
use regrasp::env::{EpisodeLogRow, GraspEnv, InitialState};
use regrasp::eval::{
    ablate, run_task, unseen_object_battery, write_capability_csv, write_task_csv, Ablation, Policy, TaskKind,
    TaskSpec, UNSEEN_BOXES,
};
use regrasp::nn::Checkpoint;
use regrasp::ppo::{train, TrainHooks};
use regrasp::Error;

#[derive(Parser, Debug)]
#[command(name = "regrasp", version, about = "Train and evaluate planar reach/grasp/re-grasp policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Override any configuration key, e.g. `--set beta=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy; writes checkpoints and metrics.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on task scenarios.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task name, `all`, or `unseen` for the unseen-box battery.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train and score reward-ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Reward term (or `special_states`) to drop; repeatable. Default:
        /// the full battery.
        #[arg(long)]
        drop: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Print checkpoint metadata and replay one seeded episode to a CSV.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn overrides(common: &Common, extra: &[(&str, Option<Value>)]) -> anyhow::Result<Map<String, Value>> {
    let mut m = Map::new();
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        m.insert(k.to_string(), value);
    }
    let flags = [
        ("seed", common.seed.map(Value::from)),
        ("out_dir", common.out.as_ref().map(|p| Value::from(p.display().to_string()))),
        ("iterations", common.iterations.map(Value::from)),
        ("gamma", common.gamma.map(Value::from)),
    ];
    for (k, v) in flags.into_iter().chain(extra.iter().cloned()) {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    }
    Ok(m)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, stop: Arc<AtomicBool>) -> anyhow::Result<()> {
    let out = &cfg.out_dir;
    cfg.echo(out)?;
    let mut print = |m: &regrasp::ppo::IterationMetrics| {
        eprintln!(
            "iter {:5}  return {:9.3}  topology {:.3}  contact {:.3}  clip {:.3}",
            m.iteration, m.mean_return, m.r_topology, m.r_contact, m.clip_fraction
        );
    };
    let hooks = TrainHooks { stop: Some(&stop), on_iteration: Some(&mut print), config_echo: Some(cfg.to_json_value()) };
    let outcome = train(&cfg.train_config(), Some(out), hooks)?;
    for p in &outcome.checkpoints {
        println!("checkpoint {}", p.display());
    }
    if outcome.interrupted {
        eprintln!("interrupted; final checkpoint written");
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let env = cfg.episode_config();
    let policy: &dyn Policy = &ck.params;
    let rows = match cfg.task.as_str() {
        "all" => TaskKind::ALL
            .into_iter()
            .map(|k| run_task(&TaskSpec { object_size: cfg.object_size, ..TaskSpec::new(k, cfg.trials, cfg.seed) }, policy, &env))
            .collect::<regrasp::Result<Vec<_>>>()?,
        "unseen" => unseen_object_battery(policy, &env, &UNSEEN_BOXES, cfg.trials, cfg.seed)?,
        name => {
            let kind: TaskKind = name.parse()?;
            vec![run_task(&TaskSpec { object_size: cfg.object_size, ..TaskSpec::new(kind, cfg.trials, cfg.seed) }, policy, &env)?]
        }
    };
    fs::create_dir_all(&cfg.out_dir)?;
    cfg.echo(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("results.csv");
    write_task_csv(&rows, fs::File::create(&csv_path)?)?;
    write_json(&cfg.out_dir.join("results.json"), &rows)?;
    write_task_csv(&rows, std::io::stdout())?;
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, drops: &[String]) -> anyhow::Result<()> {
    let variants: Vec<Ablation> = if drops.is_empty() {
        Ablation::battery()
    } else {
        drops
            .iter()
            .map(|d| d.parse().map_err(|e: Error| Error::Config { key: "drop".into(), message: e.to_string() }))
            .collect::<regrasp::Result<_>>()?
    };
    fs::create_dir_all(&cfg.out_dir)?;
    cfg.echo(&cfg.out_dir)?;
    let mut base_train = cfg.train_config();
    base_train.iterations = cfg.ablation_iterations;
    let rows = ablate(&variants, &cfg.episode_config(), cfg.trials, cfg.seed, |variant, env| {
        let dir = cfg.out_dir.join(variant.label());
        let tc = regrasp::ppo::TrainConfig { env: env.clone(), ..base_train.clone() };
        eprintln!("training {} for {} iterations", variant.label(), tc.iterations);
        Ok(train(&tc, Some(&dir), TrainHooks::default())?.params)
    })?;
    write_capability_csv(&rows, fs::File::create(cfg.out_dir.join("ablation.csv"))?)?;
    write_json(&cfg.out_dir.join("ablation.json"), &rows)?;
    write_capability_csv(&rows, std::io::stdout())?;
    Ok(())
}

fn cmd_inspect(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let p = &ck.params;
    println!("format      {} v{}", ck.format, ck.version);
    println!("iteration   {}", ck.iteration);
    println!("seed        {}", ck.seed);
    println!("actor       {:?} ({} parameters)", p.actor.sizes, p.actor.params.len());
    println!("critic      {:?} ({} parameters)", p.critic.sizes, p.critic.params.len());
    println!("log_std     {:?}", p.log_std);
    println!("adam steps  {}", ck.optimizer.actor.t);

    let mut env = GraspEnv::new(cfg.episode_config(), cfg.seed)?;
    let mut obs = env.reset_with(InitialState::Normal);
    env.world.trace = Some(Vec::new());
    let mut rows = Vec::new();
    loop {
        let r = env.step(&p.act(&obs)?)?;
        rows.push(EpisodeLogRow::new(rows.len() + 1, &r));
        if r.done {
            break;
        }
        obs = r.observation;
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let episode = cfg.out_dir.join("episode.csv");
    regrasp::env::write_episode_csv(&rows, fs::File::create(&episode)?)?;
    let trace = cfg.out_dir.join("trace.csv");
    regrasp::dynamics::write_trace_csv(env.world.trace.as_deref().unwrap_or(&[]), fs::File::create(&trace)?)?;
    let ret: f64 = rows.iter().map(|r| r.total).sum();
    println!("replayed {} steps, return {ret:.3}", rows.len());
    println!("wrote {} and {}", episode.display(), trace.display());
    Ok(())
}

fn run(cli: Cli, stop: Arc<AtomicBool>) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &[])?)?;
            cmd_train(&cfg, stop)
        }
        Command::Evaluate { common, checkpoint, task, trials } => {
            let extra = [("task", task.map(Value::from)), ("trials", trials.map(Value::from))];
            // `all` and `unseen` are accepted here but are not single task names.
            let special = extra[0].1.as_ref().and_then(Value::as_str).filter(|t| *t == "all" || *t == "unseen").map(String::from);
            let extra = if special.is_some() { [("task", None), extra[1].clone()] } else { extra };
            let mut cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &extra)?)?;
            if let Some(t) = special {
                cfg.task = t;
            }
            cmd_evaluate(&cfg, &checkpoint)
        }
        Command::Ablate { common, drop, trials } => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &[("trials", trials.map(Value::from))])?)?;
            cmd_ablate(&cfg, &drop)
        }
        Command::Inspect { common, checkpoint } => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &[])?)?;
            cmd_inspect(&cfg, &checkpoint)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }
    match run(cli, stop) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. }));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
