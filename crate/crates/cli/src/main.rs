use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::ToolkitConfig;

/// Inverse kinematics of a tendon-driven soft limb: simulate, learn, benchmark.
#[derive(Parser, Debug)]
#[command(name = "softlimb", version)]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an episode dataset and its summary table.
    Generate {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the training split of a dataset.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path, `<out_dir>/<model>.ckpt` by default; the loss
        /// log is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark a checkpoint on held-out episodes.
    Eval {
        #[arg(long)]
        model_path: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output prefix for the .txt, .json and .scatter.csv files,
        /// `<out_dir>/<model>-report` by default.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time single-step inference of a checkpoint.
    Bench {
        #[arg(long)]
        model_path: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Dataset whose first episode is the context; rest pose otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Kt,
    Ffnn,
    /// Echoes dataset labels; a zero-error reference for checking the pipeline.
    Oracle,
}

/// 2 config, 3 solver, 4 divergence, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use softlimb::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) => 2,
                E::Solver { .. }
                | E::Convergence { .. }
                | E::MaterialLimit { .. }
                | E::DegenerateGeometry(_)
                | E::Rollout { .. } => 3,
                E::Divergence { .. } => 4,
                _ => continue,
            };
        }
        if cause
            .downcast_ref::<commands::SolverFailureRate>()
            .is_some()
        {
            return 3;
        }
    }
    1
}

fn threads() -> anyhow::Result<Option<usize>> {
    match std::env::var("SOFTLIMB_THREADS") {
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| {
                softlimb::Error::Config(format!("SOFTLIMB_THREADS={v} is not a thread count"))
            })?;
            Ok(Some(n.max(1)))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => ToolkitConfig::load(path)?,
        None => ToolkitConfig::default(),
    };
    let threads = threads()?;
    if let Some(n) = threads {
        // Ignored if a pool already exists; only the first call wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Generate {
            episodes,
            steps,
            seed,
            out,
        } => commands::generate(&config, episodes, steps, seed, out, threads),
        Command::Train { model, data, out } => {
            let out = out.unwrap_or_else(|| {
                config.paths.out_dir.join(format!(
                    "{}.ckpt",
                    model.to_possible_value().unwrap().get_name()
                ))
            });
            commands::train(&config, model, data, &out)
        }
        Command::Eval {
            model_path,
            data,
            report,
        } => commands::eval(&config, &model_path, data, report),
        Command::Bench {
            model_path,
            iterations,
            data,
            out,
        } => commands::bench(&config, &model_path, iterations, data, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their cause; print each message once.
            let mut message = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !message.contains(&c) {
                    message = format!("{message}: {c}");
                }
            }
            eprintln!("error: {message}");
            ExitCode::from(exit_code(&e))
        }
    }
}
