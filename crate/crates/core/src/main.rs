use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cw_rta::control::MlpPolicy;
use cw_rta::harness::config::{to_toml, MAX_SEED};
use cw_rta::harness::{
    default_experiment, emit, load_config, load_dir, run, run_batch, ExperimentConfig, Format, RunSummary,
};

#[derive(Parser)]
#[command(
    name = "cw-rta",
    version,
    about = "Inspection simulator with a barrier-function safety filter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its logs.
    Run(RunArgs),
    /// Run every `*.toml` config in a directory.
    Batch(BatchArgs),
    /// Print a built-in experiment as TOML.
    Config {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
        experiment: u8,
    },
    /// Load a policy weights file and report its shape.
    ValidateWeights { file: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in experiment 1..=6.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6), conflicts_with = "config", required_unless_present = "config")]
    experiment: Option<u8>,
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feed the controller a noisy state and disturb the plant.
    #[arg(long)]
    closed_loop: bool,
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: Option<u64>,
    /// Policy weights for NNC experiments.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated list of csv, json, svg.
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    configs: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run_cmd(args),
        Command::Batch(args) => batch_cmd(args),
        Command::Config { experiment } => {
            print!("{}", to_toml(&default_experiment(experiment)?)?);
            Ok(())
        }
        Command::ValidateWeights { file } => {
            let policy = MlpPolicy::from_path(&file).with_context(|| format!("loading {}", file.display()))?;
            let widths: Vec<String> = policy.layers().iter().map(|l| l.weights.nrows().to_string()).collect();
            println!(
                "{}: input {} -> {} ({})",
                file.display(),
                policy.input_dim(),
                widths.join(" -> "),
                if policy.is_reference_architecture() {
                    "2x256 tanh reference architecture"
                } else {
                    "non-reference architecture"
                }
            );
            Ok(())
        }
    }
}

fn run_cmd(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg: ExperimentConfig = match (&args.config, args.experiment) {
        (Some(path), _) => load_config(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(n)) => default_experiment(n)?,
        (None, None) => bail!("one of --experiment or --config is required"),
    };
    if args.closed_loop {
        cfg.closed_loop = true;
    }
    if let Some(seed) = args.seed {
        cfg.noise.seed = seed;
    }
    if args.weights.is_some() {
        cfg.weights = args.weights;
    }
    let out = run(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    for &f in &args.format {
        let path = args.out.join(format!("{}.{}", cfg.name, f.extension()));
        emit(&out.log, Some(&out.summary), f, &path)?;
        eprintln!("wrote {}", path.display());
    }
    print_summary(&out.summary);
    Ok(())
}

fn batch_cmd(args: BatchArgs) -> anyhow::Result<()> {
    let configs = load_dir(&args.configs)?;
    let items = run_batch(&configs, args.jobs, Path::new(&args.out), &args.format);
    let mut failed = 0;
    for item in &items {
        match &item.outcome {
            Ok(s) => {
                print!("{}: ", item.source);
                print_summary(s);
            }
            Err(e) => {
                failed += 1;
                println!("{}: FAILED {e}", item.source);
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} runs failed", items.len());
    }
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!(
        "{} [{}] steps={} t={:.0}s inspected={} dv={:.3} reward={:.3} min_range={:.3} min_h={:.3e} interventions={} infeasible={}",
        s.name,
        s.controller,
        s.steps,
        s.duration,
        s.inspected,
        s.delta_v,
        s.reward,
        s.min_range,
        s.min_h,
        s.interventions,
        s.infeasible_steps
    );
}
