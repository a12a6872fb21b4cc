//! `nslam`: train, evaluate, and inspect Neural-SLAM exploration agents.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nslam::autodiff::OpKind;
use nslam::env::World;
use nslam::eval::{
    generate_world_set, load_agent, replay_render, run_battery, run_suite, BatteryOptions, RunConfig, Scale, WorldGen,
};
use nslam::policy::AgentVariant;
use nslam::trainer::{evaluate_window, train, TrainConfig, TrainOutputs};

/// Exit code for a failed check.
const EXIT_CHECK_FAILED: u8 = 1;
/// Exit code for bad input or any setup error.
const EXIT_SETUP: u8 = 2;

#[derive(Parser)]
#[command(name = "nslam", version, about = "Neural-SLAM exploration agents on grid worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by most commands; they override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Agent variant: neural-slam, a3c, a3c-nav1, a3c-nav2, a3c-ext, random.
    #[arg(long)]
    agent: Option<AgentVariant>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of world files (a single file for `replay`).
    #[arg(long)]
    worlds: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent with asynchronous advantage actor-critic.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workers: Option<usize>,
        /// Global environment-step budget.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// One training-style evaluation window on freshly generated worlds.
    Eval {
        #[command(flatten)]
        common: Common,
        /// World size.
        #[arg(long, default_value_t = 8)]
        size: usize,
    },
    /// Evaluate on a fixed world suite, one episode per world.
    Suite {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a world set with fixed start poses.
    GenWorlds {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = nslam::env::DEFAULT_DENSITY)]
        density: f64,
    },
    /// Render a greedy episode frame by frame.
    Replay {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value = "toy")]
        scale: Scale,
        /// Random instances per operation.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip the gradient sign of one primitive (negative control).
        #[arg(long)]
        fault: Option<OpKind>,
    },
}

type CliResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, workers, steps } => cmd_train(&common, workers, steps),
        Command::Eval { common, size } => cmd_eval(&common, size),
        Command::Suite { common } => cmd_suite(&common),
        Command::GenWorlds {
            common,
            count,
            size,
            density,
        } => cmd_gen_worlds(&common, count, size, density),
        Command::Replay { common } => cmd_replay(&common),
        Command::Gradcheck {
            scale,
            instances,
            seed,
            fault,
        } => cmd_gradcheck(scale, instances, seed, fault),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_SETUP)
        }
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(err)?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_train(common: &Common, workers: Option<usize>, steps: Option<u64>) -> CliResult {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p).map_err(err)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(a) = common.agent {
        cfg.variant = a;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(s) = steps {
        cfg.total_steps = s;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    let outputs = TrainOutputs {
        log: Some(out.join("train.jsonl")),
        checkpoint_dir: Some(out.join("checkpoints")),
    };
    let outcome = train(&cfg, &outputs).map_err(err)?;
    for e in &outcome.evals {
        println!(
            "step {:>9}  size {:>2}  episodes {:>3}  success {:.2}  reward {:>8.3}  steps {:>6.1}",
            e.global_step, e.size, e.stats.episodes, e.stats.success_ratio, e.stats.mean_reward, e.stats.mean_steps
        );
    }
    println!(
        "env steps {}  updates {}  skipped {}  course {}",
        outcome.env_steps, outcome.updates, outcome.skipped, outcome.final_course
    );
    for (id, msg) in &outcome.worker_errors {
        eprintln!("worker {id} stopped: {msg}");
    }
    println!("checkpoint {}", out.join("checkpoints/final.ckpt").display());
    Ok(ExitCode::SUCCESS)
}

fn run_config(common: &Common) -> Result<RunConfig, String> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(a) = common.agent {
        cfg.agent = a;
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(w) = &common.worlds {
        cfg.worlds = Some(w.clone());
    }
    Ok(cfg)
}

fn cmd_eval(common: &Common, size: usize) -> CliResult {
    let cfg = run_config(common)?;
    let params = load_agent(cfg.agent, cfg.checkpoint.as_deref()).map_err(err)?;
    let stats = evaluate_window(
        &params,
        size,
        nslam::env::DEFAULT_DENSITY,
        cfg.eval_steps,
        cfg.max_episode_steps,
        cfg.seed,
    )
    .map_err(err)?;
    println!(
        "{}: episodes {}  solved {}  success {:.3}  reward {:.3}  steps {:.1}",
        cfg.agent, stats.episodes, stats.solved, stats.success_ratio, stats.mean_reward, stats.mean_steps
    );
    if let Some(out) = &common.out {
        write_json(out, &stats)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_suite(common: &Common) -> CliResult {
    let cfg = run_config(common)?;
    let report = run_suite(&cfg).map_err(err)?;
    for r in &report.rows {
        println!("{:<16} steps {:>7}  reward {:>9.3}  solved {}", r.world, r.steps, r.reward, r.solved);
    }
    println!("{}", report.summary());
    if let Some(out) = &common.out {
        write_json(out, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_worlds(common: &Common, count: usize, size: usize, density: f64) -> CliResult {
    let out = common.out.clone().ok_or("gen-worlds needs --out DIR")?;
    let gen = WorldGen {
        count,
        size,
        seed: common.seed.unwrap_or(0),
        density,
    };
    let paths = generate_world_set(&out, &gen).map_err(err)?;
    println!("wrote {} worlds to {}", paths.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(common: &Common) -> CliResult {
    let cfg = run_config(common)?;
    let world_path = cfg.worlds.clone().ok_or("replay needs --worlds FILE")?;
    let out = common.out.clone().ok_or("replay needs --out DIR")?;
    let params = load_agent(cfg.agent, cfg.checkpoint.as_deref()).map_err(err)?;
    let world = World::load(&world_path).map_err(err)?;
    let summary = replay_render(&params, Arc::new(world), &out, cfg.episode_cap()).map_err(err)?;
    println!(
        "{} frames  steps {}  reward {:.3}  solved {}  -> {}",
        summary.frames,
        summary.steps,
        summary.reward,
        summary.solved,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(scale: Scale, instances: usize, seed: u64, fault: Option<OpKind>) -> CliResult {
    let opts = BatteryOptions {
        scale,
        instances,
        seed,
        fault,
    };
    let report = run_battery(&opts).map_err(err)?;
    print!("{}", report.render());
    if report.passed {
        println!("gradcheck ({scale}) passed");
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        println!("gradcheck ({scale}) FAILED: {}", names.join(", "));
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}
