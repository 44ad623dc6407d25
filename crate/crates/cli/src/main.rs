mod artifacts;
mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Context, PipelineOptions, Reuse, Split, Start};
use config::Overrides;
use exit::Failure;

/// Denoise self-reported dialog ratings and train a pairwise dialog ranker.
///
/// Artifacts go under --out: the corpus, `stage{n}.ckpt` checkpoints with a
/// `manifest.json`, and reports. Set RANK_DENOISE_THREADS to cap the worker
/// thread count.
///
/// Exit codes: 1 invalid configuration, 2 I/O or malformed input,
/// 3 missing checkpoint or corpus, 4 training divergence.
#[derive(Debug, Parser)]
#[command(name = "rank-denoise", version, after_long_help = after_help())]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file; omitted keys take the defaults listed below.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configuration's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for relative corpus, checkpoint and report paths.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Overrides the number of synthetic training dialogs.
    #[arg(long, global = true, value_name = "N")]
    n_train: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus and print its rating statistics.
    Generate,
    /// Self-supervised training on real versus perturbed dialogs.
    Stage1,
    /// Label smoothing over stage-1 neighbors and fine-tuning.
    Stage2(StageArgs),
    /// Shapley valuation against the dev pairs, removal and fine-tuning.
    Stage3(StageArgs),
    /// Score a checkpoint or run the comparison experiments.
    Evaluate(EvaluateArgs),
    /// generate (optional), stage 1, 2, 3 and every evaluation. Stages whose
    /// checkpoint is on record with identical inputs are skipped, so an
    /// interrupted run resumes where it stopped.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Start from a fresh encoder instead of the previous stage's checkpoint.
    #[arg(long)]
    from_scratch: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Test,
    Dev,
    Baselines,
    RemovalCurve,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    which: Which,
    /// Checkpoint to use: 3 for test/dev, 2 (the valuation feature space) for removal-curve.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    stage: Option<u8>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Write a fresh synthetic corpus first.
    #[arg(long)]
    generate: bool,
    /// Skip the eight-model baseline comparison.
    #[arg(long)]
    no_baselines: bool,
}

fn after_help() -> String {
    format!("Default configuration:\n\n{}", config::default_toml())
}

fn run(cli: Cli) -> Result<(), Failure> {
    rank_denoise::pipeline::init_thread_pool()?;
    let mut config = config::load(cli.global.config.as_deref())?;
    Overrides {
        seed: cli.global.seed,
        n_train: cli.global.n_train,
    }
    .apply(&mut config);
    let ctx = Context::new(config, &cli.global.out)?;
    let start = |a: &StageArgs| {
        if a.from_scratch {
            Start::Scratch
        } else {
            Start::Previous
        }
    };
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Stage1 => commands::stage(&ctx, 1, Start::Previous, Reuse::Never).map(drop),
        Command::Stage2(a) => commands::stage(&ctx, 2, start(&a), Reuse::Never).map(drop),
        Command::Stage3(a) => commands::stage(&ctx, 3, start(&a), Reuse::Never).map(drop),
        Command::Evaluate(a) => match a.which {
            Which::Test => {
                commands::evaluate_split(&ctx, Split::Test, a.stage.unwrap_or(3)).map(drop)
            }
            Which::Dev => {
                commands::evaluate_split(&ctx, Split::Dev, a.stage.unwrap_or(3)).map(drop)
            }
            Which::Baselines => commands::baselines(&ctx),
            Which::RemovalCurve => commands::curve(&ctx, a.stage.unwrap_or(2)).map(drop),
        },
        Command::Pipeline(a) => commands::pipeline(
            &ctx,
            &PipelineOptions {
                generate: a.generate,
                baselines: !a.no_baselines,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code() as u8)
        }
    }
}
