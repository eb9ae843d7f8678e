//! `depnet`: simulate multi-sample networks, fit community memberships,
//! evaluate them, run benchmark presets and preprocess multilayer data.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 fit stopped at the
//! iteration limit (results are still written), 3 nothing left after filtering.

mod commands;
mod config;
mod error;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use depnet::bench::{Method, PresetName};
use depnet::CorrelationOrder;

use crate::commands::FitOverrides;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "depnet", version, about = "Community detection across correlated network samples")]
struct Cli {
    /// Seed overriding the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Vem,
    Bahadur2,
    Bahadur4,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Vem => Method::Vem,
            MethodArg::Bahadur2 => Method::Bahadur2,
            MethodArg::Bahadur4 => Method::Bahadur4,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    None,
    Second,
    Fourth,
}

impl From<OrderArg> for CorrelationOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::None => CorrelationOrder::None,
            OrderArg::Second => CorrelationOrder::Second,
            OrderArg::Fourth => CorrelationOrder::Fourth,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate networks from the [simulation] section of a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit memberships to an edge list.
    Fit {
        edges: PathBuf,
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, conflicts_with = "order")]
        method: Option<MethodArg>,
        /// Correlation terms of the objective (`none` is variational EM).
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Adjusted Rand index between fitted and true labels.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation preset.
    Bench {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Drop low-degree nodes and estimate the number of communities.
    Ingest {
        edges: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep nodes whose aggregated degree exceeds this value.
        #[arg(long)]
        min_degree: Option<usize>,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("DEPNET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("DEPNET_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} worker threads: {e}")))
}

fn run(cli: Cli) -> CliResult<u8> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, out } => {
            for path in commands::cmd_simulate(&config, &out, cli.seed)? {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Fit {
            edges,
            covariates,
            config,
            out,
            method,
            order,
            k,
            epsilon,
            max_iters,
        } => {
            let overrides = FitOverrides {
                order: method.map(|m| Method::from(m).order()).or(order.map(Into::into)),
                k,
                epsilon,
                max_iters,
                seed: cli.seed,
            };
            let summary = commands::cmd_fit(&edges, covariates.as_deref(), config.as_deref(), &out, &overrides)?;
            if summary.converged {
                println!("converged after {} iterations", summary.iterations);
                Ok(0)
            } else {
                eprintln!("stopped at the iteration limit ({}) without converging", summary.iterations);
                Ok(2)
            }
        }
        Command::Eval { labels, truth, out } => {
            let ari = commands::cmd_eval(&labels, &truth, out.as_deref())?;
            println!("ari={}", depnet::bench::format_sig9(ari));
            Ok(0)
        }
        Command::Bench {
            preset,
            config,
            out,
            replicates,
        } => {
            let preset: PresetName = preset.parse().map_err(|e: depnet::Error| CliError::Usage(e.to_string()))?;
            print!("{}", commands::cmd_bench(preset, config.as_deref(), &out, cli.seed, replicates)?);
            Ok(0)
        }
        Command::Ingest {
            edges,
            config,
            out,
            min_degree,
        } => {
            let s = commands::cmd_ingest(&edges, config.as_deref(), &out, min_degree)?;
            println!(
                "kept {} nodes, {} layers; k={}",
                s.kept_nodes.len(),
                s.kept_layers.len(),
                s.k
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
