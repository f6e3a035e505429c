mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config, missing input files.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] hasd::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Runtime(hasd::Error::Config(_)) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hasd", version, about = "Human-aligned skill discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train skills from a TOML run file.
    Train(TrainArgs),
    /// Roll out a checkpoint's skills and write trajectories, solution points and hypervolume.
    Eval(EvalArgs),
    /// Goal-reaching meta-controller on top of frozen skills.
    #[command(subcommand)]
    Downstream(DownstreamCommand),
    /// Sample unlabeled preference queries from a checkpoint's replay buffer.
    QueryExport(QueryExportArgs),
    /// Serve queries to the labeling UI and collect answers.
    ServeFeedback(ServeArgs),
    /// Fit a teacher reward model to labels, or hand labels to a paused run.
    ImportLabels(ImportArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run file; keys not given take the preset's defaults.
    config: PathBuf,
    /// Run directory (overrides OUTPUT_DIR and the file's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
}

/// Comma-separated weights as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaList(pub Vec<f64>);

fn parse_alphas(s: &str) -> Result<AlphaList, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|a| a.is_finite())
                .ok_or_else(|| format!("'{t}' is not a finite number"))
        })
        .collect::<Result<_, _>>()?;
    Ok(AlphaList(v))
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated trade-off weights, e.g. 0,0.2,1.
    #[arg(long, value_parser = parse_alphas)]
    alphas: Option<AlphaList>,
    #[arg(long)]
    skills: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum DownstreamCommand {
    /// Train a meta-controller, evaluate it and write results.csv.
    Train(DownstreamTrainArgs),
    /// Evaluate a saved meta-controller.
    Eval(DownstreamEvalArgs),
}

#[derive(Debug, Args)]
struct DownstreamTrainArgs {
    /// Skill-training checkpoint; its parameters are never modified.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional TOML overlay for the meta-controller config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Weight the skills are interpreted at (default c, or 0 for the baseline).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    goals: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DownstreamEvalArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value_t = 1000)]
    goals: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Method name for the results row.
    #[arg(long, default_value = "meta")]
    method: String,
    /// results.csv to write; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueryExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 128)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    queries: PathBuf,
    /// Run checkpoint whose room geometry is drawn; default room otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Listening port (overrides PORT; default 8080).
    #[arg(long)]
    port: Option<u16>,
    /// Directory holding the built labeling UI.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Label file written on export (default labels.jsonl next to the queries).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Query file the labels answer; not needed with --checkpoint.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Checkpoint of a run paused for labels; updated in place.
    #[arg(long, conflicts_with = "out")]
    checkpoint: Option<PathBuf>,
    /// Where to save the fitted reward model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run file whose [reward] section configures the fit.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Downstream(DownstreamCommand::Train(a)) => commands::downstream_train(a),
        Command::Downstream(DownstreamCommand::Eval(a)) => commands::downstream_eval(a),
        Command::QueryExport(a) => commands::query_export(a),
        Command::ServeFeedback(a) => commands::serve_feedback(a),
        Command::ImportLabels(a) => commands::import_labels(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_lists() {
        assert_eq!(parse_alphas("0,0.2,1").unwrap().0, vec![0.0, 0.2, 1.0]);
        assert_eq!(parse_alphas(" 0.5 ").unwrap().0, vec![0.5]);
        for bad in ["", "0,,1", "a", "0;1", "nan", "1,inf"] {
            assert!(parse_alphas(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Runtime(hasd::Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Runtime(hasd::Error::Env("x".into())).exit_code(), 3);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
