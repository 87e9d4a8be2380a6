use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use drkm_cli::config::DataFormat;
use drkm_cli::run::{cmd_bench, cmd_evaluate, cmd_predict, cmd_train, EvalSource};
use drkm_cli::CliError;

/// Train, evaluate and compare deep restricted kernel machine classifiers.
#[derive(Parser)]
#[command(name = "drkm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Libsvm,
    Paired,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the model and a metrics report.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a saved model on labelled data and print a metrics report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Labelled data file.
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Label file for the paired format.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        has_header: bool,
        /// Feature dimension for libsvm input.
        #[arg(long)]
        dim: Option<usize>,
        /// Take the data from a run config instead, split as in training.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Print one predicted label per row of a feature-only CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        has_header: bool,
    },
    /// Compare DRKM initialization schemes with the MLP and LSSVM baselines.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DRKM_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("DRKM_NUM_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(CliError::config("DRKM_NUM_THREADS must be a positive integer"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot configure threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Evaluate {
            model,
            data,
            format,
            labels,
            has_header,
            dim,
            config,
            split,
        } => {
            let source = match (data, config) {
                (Some(path), _) => EvalSource::File {
                    path,
                    format: match format {
                        FormatArg::Csv => DataFormat::Csv,
                        FormatArg::Libsvm => DataFormat::Libsvm,
                        FormatArg::Paired => DataFormat::Paired,
                    },
                    labels,
                    has_header,
                    dim,
                },
                (None, Some(config)) => EvalSource::Split {
                    config,
                    test: matches!(split, SplitArg::Test),
                },
                (None, None) => unreachable!("clap requires --data or --config"),
            };
            cmd_evaluate(&model, &source)
        }
        Command::Predict {
            model,
            input,
            has_header,
        } => cmd_predict(&model, &input, has_header),
        Command::Bench { config } => cmd_bench(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
