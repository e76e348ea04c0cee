use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use yoas_cli::{CliError, Preset, RunConfig, Runner, Stage};

/// Sparse-to-dense EEG channel synthesis pipeline.
#[derive(Debug, Parser)]
#[command(name = "yoas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-edge training and assembly.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Re-run stages even when their manifest entry is current.
    #[arg(long, global = true)]
    force: bool,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the labelled multichannel corpus.
    GenCorpus,
    /// Divide the montage into regions and extract bias signals.
    Prepare,
    /// Outlier removal and multiscale PCA on the training recordings.
    Clean,
    /// Train the adversarial one-stage generator of every channel pair.
    TrainGan,
    /// Train and calibrate the diffusion refiner of every channel pair.
    TrainDiff,
    /// Score channel pairs and deduce the generation plan.
    Deduce,
    /// Rebuild held-out recordings from their reference channels.
    Synthesize,
    /// Write metrics and plots.
    Evaluate,
    /// Every stage in order.
    RunAll,
}

fn run(cli: Cli) -> yoas_cli::Result<()> {
    let mut cfg = RunConfig::load(cli.preset, cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let runner = Runner::new(cfg, cli.out, cli.jobs, cli.force)?;
    let stage = match cli.command {
        Command::GenCorpus => Stage::GenCorpus,
        Command::Prepare => Stage::Prepare,
        Command::Clean => Stage::Clean,
        Command::TrainGan => Stage::TrainGan,
        Command::TrainDiff => Stage::TrainDiff,
        Command::Deduce => Stage::Deduce,
        Command::Synthesize => Stage::Synthesize,
        Command::Evaluate => Stage::Evaluate,
        Command::RunAll => return runner.run_all().map(|_| ()),
    };
    runner.run(stage).map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("YOAS_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
