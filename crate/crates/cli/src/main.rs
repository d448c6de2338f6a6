use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use koopman_cli::{commands, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "koopman", version, about = "Koopman-operator system identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print progress details.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `paths.out` in the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the root seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured system and write trial CSVs.
    Generate(Common),
    /// Fit one model per configured basis degree.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Trial CSVs; defaults to the configured or generated data.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
    },
    /// Simulate models on the validation windows and score them.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model files; defaults to every configured degree under `<out>/models`.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[arg(long = "data")]
        data: Vec<PathBuf>,
    },
    /// Render a comparison table from report files.
    Compare {
        /// Report JSON files (one report or an array each).
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Accepted for symmetry with the other subcommands; not required.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write comparison.txt and comparison.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// generate, identify, evaluate and compare in one run.
    Pipeline(Common),
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().or_else(|| cfg.paths.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = load(&common)?;
            commands::cmd_generate(&cfg, &out)?;
        }
        Command::Identify { common, data } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_identify(&cfg, &out, &data)?;
        }
        Command::Evaluate { common, models, data } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_evaluate(&cfg, &out, &models, &data)?;
        }
        Command::Compare { reports, config, out } => {
            if let Some(path) = config {
                RunConfig::load(&path)?;
            }
            commands::cmd_compare(&reports, out.as_deref().map(Path::new))?;
        }
        Command::Pipeline(common) => {
            let (cfg, out) = load(&common)?;
            commands::cmd_pipeline(&cfg, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
