//! `prdp`: run per-record DP experiments from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prdp_core::harness::{parse_budget_spec, parse_generator_spec, run_experiment};
use prdp_core::{DataSource, ExperimentConfig, Method, PrdpError, Query};

const EXIT_CONFIG: u8 = 2;
const EXIT_INCOMPATIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "prdp", version, about = "Per-record differential privacy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated trials of one method and write a JSON report.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// count | sum | max | distinct
    #[arg(long)]
    query: String,
    /// prdp-count | prdp-ext | prdp-framework | prldp-count | prldp-framework | naive
    #[arg(long)]
    method: String,
    /// inverse:alpha=A | log:c=C[,power=P] | sqrt:c=C
    #[arg(long)]
    budget: String,
    /// Upper bound U on values (accepts 1e12)
    #[arg(long, default_value = "1e12")]
    u: f64,
    /// Largest budget
    #[arg(long, default_value_t = 100.0)]
    eps_hat: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// normal:mu=M,sigma=S,n=N | zipf:a=A,b=B,n=N
    #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
    gen: Option<String>,
    /// Headed CSV file to load instead of generating data
    #[arg(long, requires = "value_col")]
    csv: Option<PathBuf>,
    #[arg(long)]
    value_col: Option<String>,
    #[arg(long, requires = "csv")]
    key_col: Option<String>,
    /// JSON report path; printed to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial CSV for plotting
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Replace all noise with zeros. Output is NOT private.
    #[arg(long)]
    unsafe_zero_noise: bool,
}

fn bound_from(u: f64) -> Result<u64, PrdpError> {
    if u >= 1.0 && u.fract() == 0.0 && u <= u64::MAX as f64 {
        Ok(u as u64)
    } else {
        Err(PrdpError::InvalidParameter(format!("--u must be a positive integer, got {u}")))
    }
}

fn config(args: &RunArgs) -> Result<ExperimentConfig, PrdpError> {
    let query: Query = args.query.parse()?;
    let method: Method = args.method.parse()?;
    let budget = parse_budget_spec(&args.budget)?;
    let source = match (&args.gen, &args.csv) {
        (Some(spec), _) => {
            let (distribution, n) = parse_generator_spec(spec)?;
            DataSource::Generated { distribution, n }
        }
        (None, Some(path)) => DataSource::Csv {
            path: path.clone(),
            value_column: args.value_col.clone().unwrap_or_default(),
            key_column: args.key_col.clone(),
        },
        (None, None) => unreachable!("clap requires --gen or --csv"),
    };
    let mut c = ExperimentConfig::new(source, budget, query, method);
    c.bound = bound_from(args.u)?;
    c.eps_max = args.eps_hat;
    c.beta = args.beta;
    c.trials = args.trials;
    c.seed = args.seed;
    c.zero_noise = args.unsafe_zero_noise;
    Ok(c)
}

fn run(args: &RunArgs) -> Result<(), PrdpError> {
    let cfg = config(args)?;
    if cfg.zero_noise {
        eprintln!("warning: --unsafe-zero-noise set; results are NOT differentially private");
    }
    let report = run_experiment(&cfg)?;
    let json = report.to_json()?;
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    if let Some(path) = &args.csv_out {
        report.write_csv(path)?;
    }
    let metric = if cfg.query == Query::Max { "relative rank error" } else { "relative error" };
    eprintln!(
        "{} {} on n={}: trimmed-mean {metric} {:.6}%, runtime {:.4}s",
        cfg.method,
        cfg.query,
        report.n,
        report.trimmed_mean_relative_error * 100.0,
        report.trimmed_mean_runtime_secs
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PrdpError::Unsupported { .. }) => {
            eprintln!("error: {e} (N.A.)");
            ExitCode::from(EXIT_INCOMPATIBLE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
