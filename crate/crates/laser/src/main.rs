use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use laser::agent::{run_agent, run_sweep, HyperParams, RunOptions};
use laser::experiments::{self, ExperimentSpec, CATALOG};
use laser::formats::{load_mdp, mdp_to_json, sweep_from_toml, write_curve, write_summary};
use laser::replay::SharedReplay;
use laser::verify::{verify_all, Tamper};
use laser_core::{zoo, ClipConfig, Mdp, RelevanceConfig};
use serde::Deserialize;

/// Overrides `--out` everywhere.
const OUT_ENV: &str = "LASER_OUT_DIR";

#[derive(Parser)]
#[command(name = "laser", version, about = "Off-policy actor-critic experiments with shared replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the experiment catalog with parameter docs.
    List,
    /// Run a named experiment.
    Run(RunArgs),
    /// Run every invariant suite and print a pass/fail table.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inject a defect to see it caught: `clip` or `mask`.
        #[arg(long, value_parser = ["clip", "mask"])]
        tamper: Vec<String>,
    },
    /// Train a single agent.
    RunAgent(RunAgentArgs),
    /// Run a concurrent sweep from a TOML config.
    RunSweep(RunSweepArgs),
    /// Environment utilities.
    Env {
        #[command(subcommand)]
        command: EnvCommand,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Print a zoo environment as MDP JSON.
    Dump {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    experiment: String,
    /// `key=value`, repeatable.
    #[arg(long = "param", short = 'p')]
    params: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// TOML file with `seeds`, `out` and a `[params]` table; its values win
    /// over flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunFile {
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    #[serde(default)]
    params: BTreeMap<String, toml::Value>,
}

#[derive(Args)]
struct EnvSource {
    /// Zoo environment name.
    #[arg(long, default_value = "gridworld")]
    env: String,
    #[arg(long, default_value_t = 0)]
    env_seed: u64,
    /// MDP JSON file; replaces `--env`.
    #[arg(long)]
    mdp: Option<PathBuf>,
}

impl EnvSource {
    fn load(&self) -> anyhow::Result<Mdp> {
        match &self.mdp {
            Some(p) => load_mdp(p),
            None => Ok(zoo::by_name(&self.env, self.env_seed)?),
        }
    }
}

#[derive(Args)]
struct RunAgentArgs {
    #[command(flatten)]
    source: EnvSource,
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    entropy_cost: f64,
    #[arg(long, default_value_t = 0.125)]
    online_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_bar: f64,
    /// Trust-region threshold; omit to disable.
    #[arg(long)]
    trust_region: Option<f64>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 19)]
    unroll_length: usize,
    #[arg(long, default_value_t = 0.95)]
    discount: f64,
    #[arg(long, default_value_t = 100_000)]
    replay_capacity: usize,
    #[arg(long, default_value_t = 30)]
    max_episode_steps: usize,
    #[arg(long, default_value_t = 5_000)]
    curve_interval: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunSweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// MDP JSON file; replaces the config's environment.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    /// Replayed fraction of each batch for every member (`1 - alpha`).
    #[arg(long)]
    replay_ratio: Option<f64>,
    #[arg(long)]
    unroll_length: Option<usize>,
    #[arg(long, default_value_t = 4)]
    tail: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn out_dir(flag: &Path) -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| flag.to_path_buf())
}

fn toml_scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(items) => items.iter().map(toml_scalar).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn list() {
    for info in CATALOG {
        println!("{}\n    {}", info.name, info.summary);
        for p in info.params() {
            println!("    --param {}={:<20} {}", p.key, p.default, p.doc);
        }
        println!();
    }
}

fn run(args: RunArgs) -> anyhow::Result<bool> {
    let mut params = experiments::parse_overrides(&args.params)?;
    let mut seeds = args.seeds;
    let mut out = args.out;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: RunFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        seeds = file.seeds.unwrap_or(seeds);
        out = file.out.unwrap_or(out);
        params.extend(file.params.iter().map(|(k, v)| (k.clone(), toml_scalar(v))));
    }
    let spec = ExperimentSpec {
        name: args.experiment,
        params,
        seeds,
        output_dir: out_dir(&out),
    };
    let verdict = experiments::run_experiment(&spec)?;
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    eprintln!(
        "wrote {}",
        spec.output_dir.join(&spec.name).display()
    );
    Ok(verdict.pass)
}

fn run_single(a: RunAgentArgs) -> anyhow::Result<()> {
    let mdp = a.source.load()?;
    let hp = HyperParams {
        learning_rate: a.learning_rate,
        entropy_cost: a.entropy_cost,
        online_fraction: a.online_fraction,
        clip: ClipConfig::new(a.rho_bar, 1.0)?,
        trust_region: a
            .trust_region
            .map(|b| -> anyhow::Result<_> {
                Ok(RelevanceConfig {
                    rho_bar: a.rho_bar,
                    ..RelevanceConfig::new(b)?
                })
            })
            .transpose()?,
        unroll_length: a.unroll_length,
        batch_size: a.batch_size,
        discount: a.discount,
        ..HyperParams::default()
    };
    hp.validate()?;
    let opts = RunOptions {
        max_episode_steps: a.max_episode_steps,
        curve_interval: a.curve_interval,
        ..RunOptions::new(a.steps)
    };
    let replay = SharedReplay::new(a.replay_capacity)?;
    let res = run_agent(&mdp, &hp, &replay, &opts, a.seed)?;
    let dir = out_dir(&a.out);
    fs::create_dir_all(&dir)?;
    write_curve(fs::File::create(dir.join("agent-0.csv"))?, &res.curve)?;
    write_summary(fs::File::create(dir.join("summary.csv"))?, std::slice::from_ref(&res), 4)?;
    println!(
        "env_steps={} learner_steps={} episodes={} final_return={}",
        res.env_steps,
        res.learner_steps,
        res.episodes,
        laser::formats::final_return(&res.curve, 4)
    );
    Ok(())
}

fn run_sweep_cmd(a: RunSweepArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = sweep_from_toml(&text)?;
    if let Some(c) = a.replay_capacity {
        cfg.replay_capacity = c;
    }
    for hp in &mut cfg.agents {
        if let Some(r) = a.replay_ratio {
            hp.online_fraction = 1.0 - r;
        }
        if let Some(t) = a.unroll_length {
            hp.unroll_length = t;
        }
    }
    cfg.validate()?;
    let mdp = match &a.mdp {
        Some(p) => load_mdp(p)?,
        None => zoo::by_name(&cfg.environment, cfg.env_seed)?,
    };
    let res = run_sweep(&mdp, &cfg)?;
    let dir = out_dir(&a.out);
    fs::create_dir_all(&dir)?;
    for r in &res.agents {
        write_curve(fs::File::create(dir.join(format!("agent-{}.csv", r.agent_id)))?, &r.curve)?;
    }
    write_curve(fs::File::create(dir.join("best.csv"))?, &res.best)?;
    write_summary(fs::File::create(dir.join("summary.csv"))?, &res.agents, a.tail)?;
    println!(
        "{} agents, sweep-best final return {}",
        res.agents.len(),
        laser::formats::final_return(&res.best, a.tail)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::List => {
            list();
            Ok(true)
        }
        Command::Run(args) => run(args),
        Command::Verify { seed, tamper } => {
            let t = Tamper {
                clip: tamper.iter().any(|x| x == "clip"),
                action_dependent_mask: tamper.iter().any(|x| x == "mask"),
            };
            let report = verify_all(seed, t);
            print!("{report}");
            Ok(report.all_passed())
        }
        Command::RunAgent(a) => run_single(a).map(|_| true),
        Command::RunSweep(a) => run_sweep_cmd(a).map(|_| true),
        Command::Env {
            command: EnvCommand::Dump { name, seed },
        } => zoo::by_name(&name, seed)
            .map_err(anyhow::Error::from)
            .map(|m| {
                println!("{}", mdp_to_json(&m));
                true
            }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
