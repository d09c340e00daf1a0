use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kiln_atlas_cli::{exit_code, with_workers, Outcome, PipelineConfig, RunError};

#[derive(Parser)]
#[command(name = "kiln-atlas", version, about = "Brick kiln detection and emission inventory pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the pixel classifier and write the model plus an evaluation report
    Train(Common),
    /// Classify low-resolution tiles into kiln candidates and a fetch plan
    DetectLowres(Common),
    /// Turn high-resolution detections into deduplicated kiln points
    Geolocate(Common),
    /// Join emissions and exposure onto kiln points and write the dataset
    Inventory(Common),
}

#[derive(Args)]
struct Common {
    /// JSON pipeline configuration
    #[arg(long)]
    config: PathBuf,
    /// Use the published per-kiln production figure
    #[arg(long)]
    reproduce_paper: bool,
    /// Worker threads (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    type Stage = fn(&PipelineConfig) -> Result<Outcome, RunError>;
    let (common, run): (&Common, Stage) = match &cli.command {
        Command::Train(c) => (c, kiln_atlas_cli::cmd_train),
        Command::DetectLowres(c) => (c, kiln_atlas_cli::cmd_detect_lowres),
        Command::Geolocate(c) => (c, kiln_atlas_cli::cmd_geolocate),
        Command::Inventory(c) => (c, kiln_atlas_cli::cmd_inventory),
    };

    let result = PipelineConfig::load(&common.config)
        .map_err(RunError::Config)
        .and_then(|mut cfg| {
            if common.reproduce_paper {
                cfg.parameters.reproduce_paper = true;
            }
            if common.workers.is_some() {
                cfg.workers = common.workers;
            }
            if cfg.workers == Some(0) {
                return Err(RunError::Config(anyhow::anyhow!("--workers must be positive")));
            }
            with_workers(cfg.workers, || run(&cfg))?
        });

    match &result {
        Ok(Outcome::Complete) => log::info!("done"),
        Ok(Outcome::Partial(f)) => log::warn!("finished with {} failures", f.len()),
        Err(e) => log::error!("{e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
