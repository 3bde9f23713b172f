//! Seed and parameter sweeps over the solver.
//!
//! A sweep point is one `(mode, retraction, n, r, μ)` combination. Every point
//! runs `seeds` independent solves; run `i` uses seed `base_seed + i` for both
//! the instance (where the instance is random) and the initial point, so
//! different modes see the same instances. Runs are independent and are
//! spread over the rayon pool when the `parallel` feature is enabled.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::{
    make_cm_with_boundary, make_spca, sparsity, Boundary, CompositeProblem, ProblemKind, SPARSITY_THRESHOLD,
};
use crate::solver::{solve, write_trace_csv, Mode, SolverConfig, Status};
use crate::stiefel::{random_point, RetractionKind};

/// Header of the summary CSV.
pub const SUMMARY_HEADER: &str = "label,iter,F,sparsity,cpu_s,linesearch,ssn_iters,failures";

/// Default number of seeds per sweep point.
pub const DEFAULT_SEEDS: usize = 50;

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    pub ns: Vec<usize>,
    pub rs: Vec<usize>,
    pub mus: Vec<f64>,
    pub modes: Vec<Mode>,
    pub retractions: Vec<RetractionKind>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Applied in order on top of the default config via [`SolverConfig::set`].
    pub overrides: Vec<(String, String)>,
    /// Discretization of the compressed-modes operator.
    pub boundary: Boundary,
    /// When set, every run writes its iteration trace here.
    pub trace_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(problem: ProblemKind, n: usize, r: usize, mu: f64) -> Self {
        Self {
            problem,
            ns: vec![n],
            rs: vec![r],
            mus: vec![mu],
            modes: vec![Mode::NlsArpqn],
            retractions: vec![RetractionKind::Svd],
            seeds: DEFAULT_SEEDS,
            base_seed: 0,
            overrides: Vec::new(),
            boundary: Boundary::default(),
            trace_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("n", self.ns.is_empty()),
            ("r", self.rs.is_empty()),
            ("mu", self.mus.is_empty()),
            ("mode", self.modes.is_empty()),
            ("retraction", self.retractions.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidArgument(format!("empty '{name}' sweep")));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidArgument("seed count must be at least 1".into()));
        }
        if self.problem == ProblemKind::Custom {
            return Err(Error::InvalidArgument(
                "sweeps need a generated problem kind".into(),
            ));
        }
        if let Some(&mu) = self.mus.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mu must be finite and >= 0, got {mu}"
            )));
        }
        for &n in &self.ns {
            for &r in &self.rs {
                if r == 0 || r > n {
                    return Err(Error::InvalidArgument(format!(
                        "need 0 < r <= n, got n = {n}, r = {r}"
                    )));
                }
            }
        }
        self.config(Mode::default(), RetractionKind::default())
            .map(|_| ())
    }

    /// Sweep points in output order: mode, retraction, n, r, μ.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &retraction in &self.retractions {
                for &n in &self.ns {
                    for &r in &self.rs {
                        for &mu in &self.mus {
                            out.push(SweepPoint {
                                mode,
                                retraction,
                                n,
                                r,
                                mu,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn config(&self, mode: Mode, retraction: RetractionKind) -> Result<SolverConfig> {
        let mut config = SolverConfig::with_mode(mode);
        config.retraction = retraction;
        for (k, v) in &self.overrides {
            config.set(k, v)?;
        }
        // Sweep axes win over overrides of the same field.
        config.mode = mode;
        config.retraction = retraction;
        config.validate()?;
        Ok(config)
    }

    fn instance(&self, p: &SweepPoint, seed: u64) -> Result<CompositeProblem> {
        match self.problem {
            ProblemKind::CompressedModes => make_cm_with_boundary(p.n, p.r, p.mu, self.boundary),
            ProblemKind::SparsePca => make_spca(p.n, p.r, p.mu, seed),
            ProblemKind::Custom => Err(Error::InvalidArgument("custom problems cannot be swept".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub mode: Mode,
    pub retraction: RetractionKind,
    pub n: usize,
    pub r: usize,
    pub mu: f64,
}

impl SweepPoint {
    pub fn label(&self, problem: ProblemKind) -> String {
        format!(
            "{problem}/{}/{}/n{}/r{}/mu{}",
            self.mode, self.retraction, self.n, self.r, self.mu
        )
    }
}

/// Outcome of one successful solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub status: Status,
    pub iterations: usize,
    pub objective: f64,
    pub sparsity: f64,
    pub cpu_s: f64,
    pub linesearch: usize,
    pub mean_ssn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub point: SweepPoint,
    /// Means over the successful runs.
    pub iter: f64,
    pub objective: f64,
    pub sparsity: f64,
    pub cpu_s: f64,
    pub linesearch: f64,
    pub ssn_iters: f64,
    pub failures: usize,
    /// Successful runs in seed order.
    pub runs: Vec<RunResult>,
}

impl SummaryRow {
    fn aggregate(label: String, point: SweepPoint, outcomes: Vec<Option<RunResult>>) -> Self {
        let failures = outcomes.iter().filter(|o| o.is_none()).count();
        let runs: Vec<RunResult> = outcomes.into_iter().flatten().collect();
        let mean = |f: &dyn Fn(&RunResult) -> f64| {
            if runs.is_empty() {
                f64::NAN
            } else {
                runs.iter().map(f).sum::<f64>() / runs.len() as f64
            }
        };
        Self {
            iter: mean(&|r| r.iterations as f64),
            objective: mean(&|r| r.objective),
            sparsity: mean(&|r| r.sparsity),
            cpu_s: mean(&|r| r.cpu_s),
            linesearch: mean(&|r| r.linesearch as f64),
            ssn_iters: mean(&|r| r.mean_ssn),
            label,
            point,
            failures,
            runs,
        }
    }
}

fn run_one(spec: &ExperimentSpec, point: &SweepPoint, config: &SolverConfig, seed: u64) -> Option<RunResult> {
    let problem = spec.instance(point, seed).ok()?;
    let x0 = random_point(point.n, point.r, seed).ok()?;
    let start = Instant::now();
    let out = solve(&problem, &x0, config).ok()?;
    let cpu_s = start.elapsed().as_secs_f64();
    if !out.objective.is_finite() {
        return None;
    }
    if let Some(dir) = &spec.trace_dir {
        let name = format!("{}_seed{seed}.csv", point.label(spec.problem).replace('/', "_"));
        write_trace_csv(&dir.join(name), &out.trace).ok()?;
    }
    Some(RunResult {
        seed,
        status: out.status,
        iterations: out.iterations(),
        objective: out.objective,
        sparsity: sparsity(out.x.as_matrix(), SPARSITY_THRESHOLD),
        cpu_s,
        linesearch: out.total_backtracks(),
        mean_ssn: out.mean_ssn_iters(),
    })
}

/// Runs every `(point, seed)` pair and returns one row per sweep point.
///
/// A run that errors or produces a non-finite objective is counted in
/// `failures` and left out of the means; it never aborts the sweep. With the
/// `parallel` feature the runs are spread over the current rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<SummaryRow>> {
    run_with(spec, cfg!(feature = "parallel"))
}

/// [`run_experiment`] on the calling thread only.
pub fn run_experiment_sequential(spec: &ExperimentSpec) -> Result<Vec<SummaryRow>> {
    run_with(spec, false)
}

fn run_with(spec: &ExperimentSpec, parallel: bool) -> Result<Vec<SummaryRow>> {
    spec.validate()?;
    if let Some(dir) = &spec.trace_dir {
        fs::create_dir_all(dir)?;
    }
    let points = spec.points();
    let configs = points
        .iter()
        .map(|p| spec.config(p.mode, p.retraction))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|pi| (0..spec.seeds as u64).map(move |i| (pi, spec.base_seed + i)))
        .collect();

    let work = |&(pi, seed): &(usize, u64)| run_one(spec, &points[pi], &configs[pi], seed);
    let outcomes: Vec<Option<RunResult>> = if parallel {
        par_map(&jobs, work)
    } else {
        jobs.iter().map(work).collect()
    };

    let mut outcomes = outcomes.into_iter();
    Ok(points
        .iter()
        .map(|p| {
            let chunk = outcomes.by_ref().take(spec.seeds).collect();
            SummaryRow::aggregate(p.label(spec.problem), *p, chunk)
        })
        .collect())
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `rows` under [`SUMMARY_HEADER`] with six significant digits.
///
/// Rows without any successful run get empty numeric cells.
pub fn emit_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to write".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_rows(&mut out, rows)?;
    out.flush()?;
    Ok(())
}

fn write_rows<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for row in rows {
        let nums = [
            row.iter,
            row.objective,
            row.sparsity,
            row.cpu_s,
            row.linesearch,
            row.ssn_iters,
        ];
        let mut record = vec![row.label.clone()];
        // Means are undefined when every run failed; leave those cells empty.
        record.extend(nums.iter().map(|&v| {
            if v.is_finite() {
                format_sig(v, 6)
            } else {
                String::new()
            }
        }));
        record.push(row.failures.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
