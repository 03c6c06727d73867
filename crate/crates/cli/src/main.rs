use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safemap::io::{cmd_analyze, cmd_plan, cmd_run, DEFAULT_ETA};
use safemap::{Error, ExperimentConfig};

/// Safe scalar-field mapping with Gaussian processes.
#[derive(Parser)]
#[command(name = "safemap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select and order the offline measurement plan.
    Plan(RunArgs),
    /// Run a full mapping episode.
    Run(RunArgs),
    /// Write information and convergence reports for a finished run.
    Analyze {
        /// Run directory containing a manifest.
        run_dir: PathBuf,
        /// Interior margin for the certification audit.
        #[arg(long, default_value_t = DEFAULT_ETA)]
        eta: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file, or `preset:sim2d` / `preset:sim3d`.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    snapshot_every: Option<usize>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Format { .. } => EXIT_CONFIG,
        Error::EpisodeAbort { .. } => EXIT_ABORT,
        _ => EXIT_FAILURE,
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = match args.config.strip_prefix("preset:") {
        Some(name) => ExperimentConfig::preset(name)?,
        None => ExperimentConfig::load(args.config.as_ref()).map_err(|e| match e {
            Error::Io { path, source } => Error::Config {
                path,
                message: source.to_string(),
            },
            e => e,
        })?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.snapshot_every {
        cfg.snapshot_every = k;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config {
            path: "output_dir".into(),
            message: "no output directory; pass --out".into(),
        })?;
    cfg.validate()?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Plan(args) => {
            let (cfg, out) = load(&args)?;
            let s = cmd_plan(&cfg, &out)?;
            println!(
                "planned {} points on {} grid points (h = {:.6}, q = {:.6}) -> {}",
                s.points,
                s.geometry.m,
                s.geometry.h,
                s.geometry.q,
                out.display()
            );
            Ok(0)
        }
        Command::Run(args) => {
            let (cfg, out) = load(&args)?;
            let s = cmd_run(&cfg, &out)?;
            println!(
                "{} steps, {} regions, {} relocations -> {}",
                s.steps,
                s.regions,
                s.relocations,
                out.display()
            );
            match s.abort {
                Some(a) => {
                    eprintln!("episode aborted at step {}: {}", a.step, a.reason);
                    Ok(EXIT_ABORT)
                }
                None => Ok(0),
            }
        }
        Command::Analyze { run_dir, eta } => {
            let s = cmd_analyze(&run_dir, eta)?;
            println!(
                "gamma_g = {:.6}, gamma_s = {:.6}, delta_gamma = {:.6}",
                s.info.gamma_g, s.info.gamma_s, s.info.delta_gamma
            );
            if let Some(c) = s.convergence {
                let t_star = c.t_star.map_or("n/a".to_string(), |t| t.to_string());
                println!(
                    "event held: {}, soundness violations: {}, certified interior: {}/{}, T* = {t_star}",
                    c.event_held, c.soundness_violations, c.interior_certified, c.interior_count
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
