use std::path::PathBuf;
use std::process::ExitCode;

use botstance::pipeline::{Pipeline, PipelineConfig, Stage};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "botstance", version, about = "Stance and bot analysis of a tweet corpus")]
struct Cli {
    /// TOML config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Replace the config's master seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    /// Log verbosity: repeat for more.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground truth.
    Synth,
    /// Validate, window and deduplicate the corpus.
    Ingest,
    /// Label accounts from profile hashtags.
    Seed,
    /// Build the account feature matrix.
    Featurize,
    /// Fit the stance classifier on seed-labeled accounts.
    Train,
    /// Predict stances for all accounts.
    Predict,
    /// Rank features by stance association.
    Associate,
    /// Score accounts with an isolation forest.
    Anomaly,
    /// Compare stance along the anomaly ranking with label permutations.
    Nullmodel,
    /// Flag bots from anomaly group, registration date and username digits.
    Botflag,
    /// Fit a block model on the retweet graph and profile bot presence.
    Network,
    /// Write the run summary.
    Report,
    /// Score a synthetic run against its ground truth.
    Evaluate,
    /// Run several stages in order (all by default).
    Run {
        /// Comma-separated stage names.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
    /// Print a config with every default filled in.
    DefaultConfig {
        /// Output directory written into the config.
        #[arg(long, default_value = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Synth => Stage::Synth,
            Command::Ingest => Stage::Ingest,
            Command::Seed => Stage::Seed,
            Command::Featurize => Stage::Featurize,
            Command::Train => Stage::Train,
            Command::Predict => Stage::Predict,
            Command::Associate => Stage::Associate,
            Command::Anomaly => Stage::Anomaly,
            Command::Nullmodel => Stage::Nullmodel,
            Command::Botflag => Stage::Botflag,
            Command::Network => Stage::Network,
            Command::Report => Stage::Report,
            Command::Evaluate => Stage::Evaluate,
            Command::Run { .. } | Command::DefaultConfig { .. } => return None,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Command::DefaultConfig { output, seed } = &cli.command {
        return match PipelineConfig::with_output(output, *seed).to_toml() {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }

    let Some(config_path) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let mut config = match PipelineConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed_override {
        config.seed = Some(seed);
    }

    let stages = match &cli.command {
        Command::Run { stages } if stages.is_empty() => Stage::default_plan(&config),
        Command::Run { stages } => match stages.iter().map(|s| s.trim().parse()).collect() {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        cmd => vec![cmd.stage().expect("stage command")],
    };

    let pipeline = match Pipeline::new(config) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pipeline.run(&stages) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
