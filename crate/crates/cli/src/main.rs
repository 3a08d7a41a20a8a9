use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Learn sum-product networks with piecewise-polynomial leaves and query them.
#[derive(Debug, Parser)]
#[command(name = "wmispn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CsvArgs {
    /// Field delimiter: a single character, or `tab`.
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// The first line is data, not a header.
    #[arg(long)]
    no_header: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a delimited file.
    Learn {
        data: PathBuf,
        /// Where to write the model.
        #[arg(short, long)]
        out: PathBuf,
        /// Sidecar with one `name:kind[:min:max]` line per column.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Fixed bin count per continuous feature; chosen by BIC when omitted.
        #[arg(long)]
        bins: Option<usize>,
        /// Largest bin count tried by BIC selection.
        #[arg(long, default_value_t = 10)]
        bins_max: usize,
        #[arg(long, default_value_t = 0)]
        order_min: usize,
        #[arg(long, default_value_t = 6)]
        order_max: usize,
        /// Significance level of the independence test.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Log-score cost of opening a new cluster.
        #[arg(long, default_value_t = 0.8)]
        cluster_penalty: f64,
        /// Slices with fewer rows are fully factorized.
        #[arg(long, default_value_t = 10)]
        min_slice: usize,
        /// Train, validation and test fractions.
        #[arg(long, default_value = "0.75,0.10,0.15", value_parser = parse_fractions)]
        split: (f64, f64, f64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        csv: CsvArgs,
    },
    /// Average log-likelihood of a model on data.
    Eval {
        model: PathBuf,
        data: PathBuf,
        /// Score point densities instead of bin masses for continuous features.
        #[arg(long)]
        density: bool,
        /// Re-split the training file as the model did and score one part.
        #[arg(long, value_enum)]
        part: Option<Part>,
        #[command(flatten)]
        csv: CsvArgs,
    },
    /// Probability of a query such as `40 <= weight < 50 & male = 1 | class = 2`.
    Query {
        model: PathBuf,
        query: String,
        /// Print the evaluation plan with per-fragment masses.
        #[arg(long)]
        explain: bool,
        /// Run one network pass per piece fragment and sum.
        #[arg(long)]
        per_pass: bool,
    },
    /// Time random queries of increasing length.
    Bench {
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        /// Include parsing and normalization in the timed path.
        #[arg(long)]
        include_parse: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample a continuous feature's fitted density, 512 points per piece.
    Plot {
        model: PathBuf,
        feature: String,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Weighted model integration over a theory file.
    Wmi {
        theory: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    Train,
    Valid,
    Test,
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be one ASCII character or `tab`, got {s:?}")),
    }
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad fraction {p:?}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
