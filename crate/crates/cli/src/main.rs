use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use honest_audit_cli::{
    cmd_probe, cmd_report, cmd_score, cmd_score_toxicity, cmd_validate_translation, CliError, Options, Outcome,
    RunConfig,
};

/// Audits masked language models for hurtful sentence completions.
#[derive(Parser, Debug)]
#[command(name = "honest-audit", version)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "honest-audit.conf")]
    config: PathBuf,
    /// Restrict to this model id (repeatable).
    #[arg(long = "model", global = true)]
    models: Vec<String>,
    /// Override the configured k values (repeatable).
    #[arg(long = "k", global = true)]
    k_values: Vec<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Refuse network endpoints; only replay and stub backends may run.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fetch top-k completions into the completion store.
    Probe,
    /// Compute HONEST, category and toxicity tables from the store.
    Score,
    /// Score filled sentences with the toxicity client.
    ScoreToxicity {
        /// Also write every request/response as a replay fixture file.
        #[arg(long)]
        record_fixtures: Option<PathBuf>,
    },
    /// Compare direct and translated toxicity flags for one language.
    ValidateTranslation {
        #[arg(long)]
        language: String,
    },
    /// Re-render tables from an existing report.json.
    Report,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("HONEST_AUDIT_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            ExitCode::from(outcome.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let config = RunConfig::load(&cli.config)?;
    let opts = Options {
        models: cli.models.clone(),
        k_values: cli.k_values.clone(),
        out: cli.out.clone(),
        offline: cli.offline,
        retry: None,
    };
    match &cli.command {
        Command::Probe => cmd_probe(&config, &opts).map(|(o, _)| o),
        Command::Score => cmd_score(&config, &opts).map(|(o, _)| o),
        Command::ScoreToxicity { record_fixtures } => cmd_score_toxicity(&config, &opts, record_fixtures.as_deref()),
        Command::ValidateTranslation { language } => cmd_validate_translation(&config, &opts, language).map(|(o, _)| o),
        Command::Report => cmd_report(&config, &opts),
    }
}
