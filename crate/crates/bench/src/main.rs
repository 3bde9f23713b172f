use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use arpqn::experiment::{emit_csv, run_experiment, ExperimentSpec, SummaryRow};
use arpqn::problems::{Boundary, ProblemKind};
use arpqn::solver::Mode;
use arpqn::stiefel::RetractionKind;
use clap::Parser;

/// Seed and parameter sweeps for the Stiefel l1 solvers.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
struct Args {
    /// Problem family: cm or spca.
    #[arg(long)]
    problem: ProblemKind,
    /// Comma-separated dimensions n.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Comma-separated column counts r.
    #[arg(long, value_delimiter = ',', required = true)]
    r: Vec<usize>,
    /// Comma-separated l1 weights.
    #[arg(long, value_delimiter = ',', required = true)]
    mu: Vec<f64>,
    /// Solver modes: arpqn, nls, pg.
    #[arg(long, value_delimiter = ',', default_value = "nls")]
    mode: Vec<Mode>,
    /// Retractions: svd, qr, cayley.
    #[arg(long, value_delimiter = ',', default_value = "svd")]
    retraction: Vec<RetractionKind>,
    /// Runs per sweep point.
    #[arg(long, default_value_t = arpqn::experiment::DEFAULT_SEEDS)]
    seeds: usize,
    /// First seed; run i uses base-seed + i.
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Boundary condition of the compressed-modes operator.
    #[arg(long, default_value = "periodic")]
    boundary: Boundary,
    /// Summary CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Solver setting override, `key=value`; repeatable.
    #[arg(long = "config", value_name = "KEY=VAL")]
    config: Vec<String>,
    /// Directory for per-run iteration traces.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "BENCH_THREADS", default_value_t = 0)]
    threads: usize,
}

fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .with_context(|| format!("override '{s}' is not key=value"))?;
    if k.trim().is_empty() {
        bail!("override '{s}' has an empty key");
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn print_table(rows: &[SummaryRow]) {
    println!(
        "{:<36} {:>8} {:>10} {:>9} {:>8} {:>8} {:>6} {:>5}",
        "label", "iter", "F", "sparsity", "cpu_s", "ls", "ssn", "fail"
    );
    for r in rows {
        println!(
            "{:<36} {:>8.1} {:>10.5} {:>9.3} {:>8.3} {:>8.1} {:>6.2} {:>5}",
            r.label, r.iter, r.objective, r.sparsity, r.cpu_s, r.linesearch, r.ssn_iters, r.failures
        );
    }
}

fn run(args: Args) -> Result<()> {
    let spec = ExperimentSpec {
        problem: args.problem,
        ns: args.n,
        rs: args.r,
        mus: args.mu,
        modes: args.mode,
        retractions: args.retraction,
        seeds: args.seeds,
        base_seed: args.base_seed,
        overrides: args
            .config
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<_>>()?,
        boundary: args.boundary,
        trace_dir: args.trace_dir,
    };
    spec.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("building the worker pool")?;
    let rows = pool.install(|| run_experiment(&spec))?;
    emit_csv(&rows, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    print_table(&rows);
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
