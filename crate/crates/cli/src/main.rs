use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seploss_cli::corpus::DEFAULT_SOURCES;
use seploss_cli::{cmd_bench, cmd_correlate, cmd_eval, thread_count, BenchOptions, CliError, CorrelateOptions, EvalOptions, Format};

#[derive(Debug, Parser)]
#[command(name = "seploss", version, about = "Source-separation losses as metrics: evaluate, benchmark, correlate")]
struct Cli {
    /// Repeat for more logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare estimate WAVs against reference WAVs named `<item>_<source>.wav`.
    Eval {
        #[arg(long = "ref", value_name = "DIR")]
        reference: PathBuf,
        #[arg(long = "est", value_name = "DIR")]
        estimate: PathBuf,
        /// Comma-separated loss/metric names, or `all`. SDR is always reported.
        #[arg(long, default_value = "all")]
        losses: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SOURCES.map(String::from))]
        sources: Vec<String>,
        /// JSON with `stft`, `frame_seconds` and `loss_params`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// One row per metric and source instead of the mean over sources.
        #[arg(long)]
        per_source: bool,
    },
    /// Train the toy separator once per (loss, seed) and write the metric matrix.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pearson correlation of each metric row with listening-test scores.
    Correlate {
        /// Metric matrix (CSV, or JSON by extension).
        #[arg(long)]
        metrics: PathBuf,
        /// Scores CSV: `source,<systems...>` with one row per source and optionally `mean`.
        #[arg(long)]
        mos: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Negate correlations of lower-is-better metrics.
        #[arg(long)]
        sign_flip: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn run(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Eval {
            reference,
            estimate,
            losses,
            out,
            format,
            sources,
            config,
            per_source,
        } => cmd_eval(
            &EvalOptions {
                reference,
                estimate,
                losses,
                out,
                format,
                sources,
                config,
                per_source,
                threads: thread_count()?,
            },
            args,
        ),
        Command::Bench { config, out, seed } => cmd_bench(
            &BenchOptions {
                config,
                out,
                seed,
                threads: thread_count()?,
            },
            args,
        ),
        Command::Correlate {
            metrics,
            mos,
            out,
            sign_flip,
            format,
        } => cmd_correlate(
            &CorrelateOptions {
                metrics,
                mos,
                out,
                sign_flip,
                format,
            },
            args,
        ),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli, args.into_iter().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
