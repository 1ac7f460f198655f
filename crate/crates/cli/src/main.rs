use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use trajdiff_cli::commands;
use trajdiff_cli::config::RunConfig;
use trajdiff_cli::exit::code_for;
use trajdiff_cli::plot::DEFAULT_PX_PER_M;
use trajdiff_core::eval::PlannerKind;

#[derive(Parser)]
#[command(name = "trajdiff", version, about = "Guided trajectory diffusion for a planar mobile manipulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON file with configuration overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dot-path override, e.g. `train.epochs=50`. Repeatable; applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Record wall-clock solve times (outputs are then not reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random scenes with task annotations.
    GenScenes {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scenes")]
        out_dir: PathBuf,
    },
    /// Solve generated tasks with the expert optimizer and write a dataset.
    GenData {
        #[arg(long, default_value_t = 40)]
        scenes: u64,
        #[arg(long, default_value_t = 15)]
        tasks_per_scene: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Train the denoiser on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// Loss curve CSV; defaults next to the checkpoint.
        #[arg(long)]
        loss_curve: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plan one trajectory for a scene file.
    Plan {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "guided")]
        planner: PlannerKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "plan.json")]
        out: PathBuf,
        /// Per-step objective trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a planner over a scene directory, or re-score an expert dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "dataset")]
        scenes: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "guided")]
        planner: PlannerKind,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "eval.csv")]
        out: PathBuf,
    },
    /// Compare guided, unguided and Langevin planners on the same tasks.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "ablation")]
        out_dir: PathBuf,
    },
    /// Render an SVG from a results CSV, or a trajectory overlay on a scene.
    Plot {
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, conflicts_with = "csv")]
        scene: Option<PathBuf>,
        #[arg(long)]
        trajectory: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PX_PER_M)]
        px_per_m: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Value> {
    let g = &cli.global;
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads.max(1))
        .build_global()
        .context("configuring worker threads")?;
    let mut cfg = RunConfig::resolve(g.config.as_deref(), &g.overrides)?;
    match cli.command {
        Command::GenScenes { count, seed, out_dir } => commands::gen_scenes(&cfg, count, seed, &out_dir),
        Command::GenData {
            scenes,
            tasks_per_scene,
            seed,
            out_dir,
        } => commands::gen_data(&cfg, scenes, tasks_per_scene, seed, &out_dir),
        Command::Train {
            data,
            out,
            loss_curve,
            seed,
        } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            commands::train(&cfg, &data, &out, loss_curve.as_deref())
        }
        Command::Plan {
            checkpoint,
            scene,
            planner,
            seed,
            out,
            trace,
        } => commands::plan_cmd(&cfg, &checkpoint, &scene, planner, seed, &out, trace.as_deref(), g.timing),
        Command::Eval {
            checkpoint,
            scenes,
            dataset,
            planner,
            seeds,
            out,
        } => commands::eval(
            &cfg,
            checkpoint.as_deref(),
            scenes.as_deref(),
            dataset.as_deref(),
            planner,
            &seeds,
            &out,
            g.timing,
        ),
        Command::Ablate {
            checkpoint,
            scenes,
            seeds,
            out_dir,
        } => commands::ablate(&cfg, &checkpoint, &scenes, &seeds, &out_dir, g.timing),
        Command::Plot {
            csv,
            scene,
            trajectory,
            px_per_m,
            out,
        } => commands::plot_cmd(&cfg, csv.as_deref(), scene.as_deref(), &trajectory, px_per_m, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code_for(&e))
        }
    }
}
