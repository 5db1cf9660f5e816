mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::Overrides;

/// Prompting and execution-based evaluation for text-to-SQL.
#[derive(Debug, Parser)]
#[command(name = "textsql", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Md,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the bundled demo databases, benchmarks and replay files.
    DemoData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one prompt per benchmark example.
    Prompt {
        #[command(flatten)]
        cfg: Overrides,
        /// Defaults to <out_dir>/prompts.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the chosen few-shot support set as JSON.
        #[arg(long)]
        support_out: Option<PathBuf>,
    },
    /// Obtain completions for rendered prompts.
    Predict {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the finalized SQL, one query per line.
        #[arg(long)]
        sql_out: Option<PathBuf>,
    },
    /// Score predictions by validity, execution and test-suite accuracy.
    Eval {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-generate test suites for the benchmark's databases.
    Suite {
        #[command(flatten)]
        cfg: Overrides,
        /// Restrict to these databases.
        #[arg(long)]
        db_id: Vec<String>,
    },
    /// Aggregate outcome files.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Manual error annotation helpers.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
}

#[derive(Debug, Subcommand)]
enum ReportCommand {
    /// One VA/EX/TS row per run.
    Metrics {
        /// Outcome files or glob patterns.
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<String>,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Test-suite accuracy against the number of support examples.
    Curve {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Pool runs that share a shot count.
        #[arg(long)]
        average: bool,
        /// Reference accuracy drawn as a horizontal line.
        #[arg(long)]
        reference: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
enum AnnotateCommand {
    /// Sample valid but incorrect predictions into an annotation skeleton.
    Sample {
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine annotation files, rejecting conflicting labels.
    Merge {
        #[arg(long, required = true, num_args = 1..)]
        annotations: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Category table of all predictions.
    Breakdown {
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, num_args = 0..)]
        annotations: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::DemoData { out } => commands::demo_data(&out),
        Command::Prompt { cfg, out, support_out } => commands::prompt(&cfg, out, support_out),
        Command::Predict {
            cfg,
            prompts,
            out,
            sql_out,
        } => commands::predict(&cfg, prompts, out, sql_out),
        Command::Eval { cfg, predictions, out } => commands::eval(&cfg, predictions, out),
        Command::Suite { cfg, db_id } => commands::suite(&cfg, &db_id),
        Command::Report(ReportCommand::Metrics {
            runs,
            format,
            out,
            allow_mixed,
        }) => commands::report_metrics(&runs, format, out, allow_mixed),
        Command::Report(ReportCommand::Curve {
            runs,
            out,
            average,
            reference,
        }) => commands::report_curve(&runs, &out, average, reference),
        Command::Annotate(AnnotateCommand::Sample { outcomes, n, seed, out }) => {
            commands::annotate_sample(&outcomes, n, seed, &out)
        }
        Command::Annotate(AnnotateCommand::Merge { annotations, out }) => commands::annotate_merge(&annotations, &out),
        Command::Annotate(AnnotateCommand::Breakdown {
            outcomes,
            annotations,
            format,
            out,
        }) => commands::annotate_breakdown(&outcomes, &annotations, format, out),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(hard_errors) => {
            log::error!("finished with {hard_errors} error(s)");
            ExitCode::FAILURE
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
