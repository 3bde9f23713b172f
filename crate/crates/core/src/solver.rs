//! Adaptive regularized proximal quasi-Newton driver.
//!
//! Each outer iteration builds the diagonal quasi-Newton metric, solves the
//! regularized subproblem for a tangent direction `V_k`, backtracks along
//! the retraction until the (possibly nonmonotone) sufficient-decrease test
//! holds, and compares the actual decrease with the model decrease through
//! the ratio `ρ_k`. A poor ratio enlarges `σ_k` and re-solves the
//! subproblem; a very good one shrinks `σ_k` for the next iteration.
//!
//! [`Mode::PgBaseline`] reuses the same machinery with a constant metric
//! `L·I`, `σ = 0`, a monotone line search and no ratio test, which is the
//! manifold proximal-gradient method.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::{
    build_diag, damp_pair, DiagonalMetric, LbfgsMemory, ThetaRule, DEFAULT_MEMORY, DEFAULT_THETA_FLOOR,
};
use crate::problems::CompositeProblem;
use crate::stiefel::{project_tangent, retract, RetractionKind, StiefelPoint, TangentVector};
use crate::subproblem::{SsnOptions, Subproblem, SymmetricMultiplier};

/// Smallest step the backtracking line search tries.
pub const MIN_STEP: f64 = 1e-20;

/// Header of the per-iteration trace CSV.
pub const TRACE_HEADER: &str = "k,F,normV,sigma,alpha,rho,backtracks,ssn_iters,resolves";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    /// Monotone line search.
    Arpqn,
    /// Nonmonotone line search over a window of `window_m + 1` values.
    #[default]
    NlsArpqn,
    /// Proximal gradient with metric `L·I`.
    PgBaseline,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Arpqn, Mode::NlsArpqn, Mode::PgBaseline];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Arpqn => "arpqn",
            Mode::NlsArpqn => "nls",
            Mode::PgBaseline => "pg",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arpqn" => Ok(Mode::Arpqn),
            "nls" | "nls-arpqn" | "nls_arpqn" => Ok(Mode::NlsArpqn),
            "pg" | "manpg" => Ok(Mode::PgBaseline),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub sigma0: f64,
    /// Lower bound applied when `σ` shrinks.
    pub sigma_min: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Sufficient-decrease constant of the line search.
    pub ls_sigma: f64,
    /// Backtracking factor.
    pub ls_gamma: f64,
    /// Nonmonotone window; ignored outside [`Mode::NlsArpqn`].
    pub window_m: usize,
    pub memory_p: usize,
    pub theta_floor: f64,
    pub theta_rule: ThetaRule,
    /// Stop once `‖V_k‖² ≤ tol_factor · n · r`.
    pub tol_factor: f64,
    pub max_outer: usize,
    pub max_ssn: usize,
    /// Relative SSN tolerance `‖E‖ ≤ ssn_rel_tol · ‖V‖²`, applied until `‖V‖²`
    /// drops below the stopping threshold.
    pub ssn_rel_tol: f64,
    /// Cap on subproblem solves per outer iteration.
    pub max_inner_sigma: usize,
    pub retraction: RetractionKind,
    pub mode: Mode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            sigma_min: 1e-8,
            eta1: 0.2,
            eta2: 0.9,
            gamma1: 0.3,
            gamma2: 3.0,
            ls_sigma: 1e-4,
            ls_gamma: 0.5,
            window_m: 5,
            memory_p: DEFAULT_MEMORY,
            theta_floor: DEFAULT_THETA_FLOOR,
            theta_rule: ThetaRule::Curvature,
            tol_factor: 1e-8,
            max_outer: 70_000,
            max_ssn: 100,
            ssn_rel_tol: 0.1,
            max_inner_sigma: 30,
            retraction: RetractionKind::Svd,
            mode: Mode::NlsArpqn,
        }
    }
}

impl SolverConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(0.0 < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0) {
            return bad("need 0 < eta1 < eta2 < 1");
        }
        if !(0.0 < self.gamma1 && self.gamma1 < 1.0 && 1.0 < self.gamma2) {
            return bad("need 0 < gamma1 < 1 < gamma2");
        }
        if !(0.0 < self.ls_sigma && self.ls_sigma < 1.0 && 0.0 < self.ls_gamma && self.ls_gamma < 1.0) {
            return bad("line-search constants must lie in (0, 1)");
        }
        if !(self.sigma0 > 0.0) {
            return bad("sigma0 must be positive");
        }
        if !(self.sigma_min >= 0.0 && self.sigma_min <= self.sigma0) {
            return bad("need 0 <= sigma_min <= sigma0");
        }
        if !(self.theta_floor > 0.0) {
            return bad("theta_floor must be positive");
        }
        if !(self.ssn_rel_tol >= 0.0) {
            return bad("ssn_rel_tol must be nonnegative");
        }
        if !(self.tol_factor >= 0.0) {
            return bad("tol_factor must be nonnegative");
        }
        if self.memory_p == 0 || self.max_ssn == 0 || self.max_inner_sigma == 0 {
            return bad("memory_p, max_ssn and max_inner_sigma must be at least 1");
        }
        Ok(())
    }

    /// Effective nonmonotone window for the configured mode.
    pub fn window(&self) -> usize {
        match self.mode {
            Mode::NlsArpqn => self.window_m,
            Mode::Arpqn | Mode::PgBaseline => 0,
        }
    }

    /// Sets a field from its name, as used by `--config key=value`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value '{value}' for '{key}'")))
        }
        match key.trim() {
            "sigma0" => self.sigma0 = num(key, value)?,
            "sigma_min" => self.sigma_min = num(key, value)?,
            "eta1" => self.eta1 = num(key, value)?,
            "eta2" => self.eta2 = num(key, value)?,
            "gamma1" => self.gamma1 = num(key, value)?,
            "gamma2" => self.gamma2 = num(key, value)?,
            "ls_sigma" => self.ls_sigma = num(key, value)?,
            "ls_gamma" => self.ls_gamma = num(key, value)?,
            "window_m" => self.window_m = num(key, value)?,
            "memory_p" => self.memory_p = num(key, value)?,
            "theta_floor" => self.theta_floor = num(key, value)?,
            "theta_rule" => self.theta_rule = value.parse()?,
            "tol_factor" => self.tol_factor = num(key, value)?,
            "max_outer" => self.max_outer = num(key, value)?,
            "max_ssn" => self.max_ssn = num(key, value)?,
            "ssn_rel_tol" => self.ssn_rel_tol = num(key, value)?,
            "max_inner_sigma" => self.max_inner_sigma = num(key, value)?,
            "retraction" => self.retraction = value.parse()?,
            "mode" => self.mode = value.parse()?,
            other => return Err(Error::InvalidArgument(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

/// One accepted outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    /// `F(X_k)`.
    pub objective: f64,
    /// `F(X_{l(k)})`, the line-search reference.
    pub reference: f64,
    pub norm_v: f64,
    /// `σ` used by the accepted subproblem solve.
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
    pub backtracks: usize,
    /// SSN iterations summed over all solves of this iteration.
    pub ssn_iters: usize,
    /// Number of subproblem solves `r(k) ≥ 1`.
    pub resolves: usize,
    /// Ratios of the rejected passes (`−∞` for a failed line search).
    pub rejected_rhos: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIter,
    Stalled,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::Stalled => "stalled",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: StiefelPoint,
    pub status: Status,
    pub trace: Vec<TraceRecord>,
    /// `F` at the returned point.
    pub objective: f64,
    /// `‖V‖` of the last subproblem solved at the returned point.
    pub final_norm_v: f64,
}

impl SolveOutput {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn total_backtracks(&self) -> usize {
        self.trace.iter().map(|t| t.backtracks).sum()
    }

    pub fn total_ssn_iters(&self) -> usize {
        self.trace.iter().map(|t| t.ssn_iters).sum()
    }

    /// Mean SSN iterations per accepted outer iteration.
    pub fn mean_ssn_iters(&self) -> f64 {
        if self.trace.is_empty() {
            0.0
        } else {
            self.total_ssn_iters() as f64 / self.trace.len() as f64
        }
    }
}

/// `max_{max(0, k−m) ≤ j ≤ k} F(X_j)` over the accepted history.
pub fn nonmonotone_reference(history: &[f64], m: usize) -> f64 {
    let start = history.len().saturating_sub(m + 1);
    history[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Accepted backtracking step.
#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub alpha: f64,
    pub point: StiefelPoint,
    /// `F` at `point`.
    pub objective: f64,
    pub backtracks: usize,
}

/// Backtracks `α = 1, γ, γ², …` until
/// `F(R_X(αV)) ≤ f_ref − ½ ls_sigma · α · ‖V‖²_B` with `B = diag(d)`.
///
/// Returns `Ok(None)` when `α` drops below [`MIN_STEP`].
pub fn line_search(
    problem: &CompositeProblem,
    x: &StiefelPoint,
    v: &TangentVector,
    metric: &DiagonalMetric,
    f_ref: f64,
    config: &SolverConfig,
) -> Result<Option<LineSearchStep>> {
    let decrease = 0.5 * config.ls_sigma * metric.quasi_newton_norm_sq(v.as_matrix())?;
    let mut alpha = 1.0;
    let mut backtracks = 0;
    while alpha >= MIN_STEP {
        let point = retract(x, &v.scaled(alpha), config.retraction)?;
        let objective = problem.objective(point.as_matrix());
        if objective <= f_ref - alpha * decrease {
            return Ok(Some(LineSearchStep {
                alpha,
                point,
                objective,
                backtracks,
            }));
        }
        alpha *= config.ls_gamma;
        backtracks += 1;
    }
    Ok(None)
}

/// `ρ = (F_trial − F_ref) / (φ(αV) − φ(0))`; `+∞` when the model predicts
/// no decrease.
pub fn compute_rho(f_trial: f64, f_ref: f64, phi_at_step: f64, phi_at_zero: f64) -> f64 {
    let denom = phi_at_step - phi_at_zero;
    if denom >= -1e-16 * phi_at_zero.abs() {
        return f64::INFINITY;
    }
    (f_trial - f_ref) / denom
}

/// Returns the new `σ` and whether the step is accepted.
pub fn update_sigma(sigma: f64, rho: f64, config: &SolverConfig) -> (f64, bool) {
    if rho >= config.eta2 {
        ((config.gamma1 * sigma).max(config.sigma_min), true)
    } else if rho >= config.eta1 {
        (sigma, true)
    } else {
        (config.gamma2 * sigma, false)
    }
}

/// Constant metric `max(L, ϑ₀)·I` of the proximal-gradient baseline.
pub fn pg_baseline_metric(problem: &CompositeProblem, n: usize, theta_floor: f64) -> DiagonalMetric {
    let l = problem.lipschitz_estimate().max(theta_floor);
    DiagonalMetric::new(DVector::from_element(n, l), 0.0).expect("positive constant metric")
}

/// Runs the configured method from `x0`.
pub fn solve(problem: &CompositeProblem, x0: &StiefelPoint, config: &SolverConfig) -> Result<SolveOutput> {
    config.validate()?;
    let (n, r) = x0.shape();
    if problem.descriptor().n != n {
        return Err(Error::Dimension {
            expected: (problem.descriptor().n, r),
            got: (n, r),
        });
    }
    let mu = problem.mu();
    let tol = config.tol_factor * (n * r) as f64;
    let window = config.window();
    let pg = config.mode == Mode::PgBaseline;

    let mut x = x0.clone();
    let (f_smooth, mut grad) = problem.smooth().value_and_gradient(x.as_matrix());
    let mut objective = f_smooth + problem.eval_h(x.as_matrix());
    let mut rgrad = project_tangent(&x, &grad)?.into_matrix();
    let mut history = vec![objective];
    let mut memory = LbfgsMemory::new(config.memory_p, config.theta_floor)?;
    let mut last_pair: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut sigma = if pg { 0.0 } else { config.sigma0 };
    let mut lambda = SymmetricMultiplier::zeros(r);
    let mut trace = Vec::new();
    let pg_metric = pg.then(|| pg_baseline_metric(problem, n, config.theta_floor));
    let mut final_norm_v = f64::NAN;
    let mut arrived_loose = false;
    let mut last_loose = false;

    let finish = |x: StiefelPoint, status, trace, objective, final_norm_v| {
        Ok(SolveOutput {
            x,
            status,
            trace,
            objective,
            final_norm_v,
        })
    };

    for k in 0..config.max_outer {
        let diag = if let Some(m) = &pg_metric {
            m.diag().clone()
        } else if let Some((s, y)) = last_pair.take() {
            let theta = config.theta_rule.theta(&s, &y, config.theta_floor);
            if let Some(pair) = damp_pair(&s, &y, theta)? {
                memory.push(pair);
            }
            memory.set_theta(theta);
            build_diag(&memory, n)?
        } else {
            DVector::from_element(n, 1.0)
        };
        let f_ref = nonmonotone_reference(&history, window);
        let opts = SsnOptions::for_gradient(&grad, config.max_ssn).with_rel_tol(config.ssn_rel_tol, tol);

        let mut ssn_iters = 0;
        let mut rejected = Vec::new();
        let mut accepted = None;
        for pass in 0..config.max_inner_sigma {
            let metric = DiagonalMetric::new(diag.clone(), sigma)?;
            let sub = Subproblem::new(&x, &grad, &metric, mu)?;
            let result = sub.solve(&lambda, opts)?;
            ssn_iters += result.ssn_iters;
            lambda = result.lambda.clone();
            let v = result.v;
            let norm_v = v.norm();
            if pass == 0 {
                final_norm_v = norm_v;
                // A point reached through a loosely solved subproblem gets
                // one more step before the stopping test may fire.
                if norm_v * norm_v <= tol && !arrived_loose {
                    return finish(x, Status::Converged, trace, objective, norm_v);
                }
            }
            last_loose = result.residual_norm > opts.tol;

            let step = line_search(problem, &x, &v, &metric, f_ref, config)?;
            let Some(step) = step else {
                if pg {
                    return finish(x, Status::Stalled, trace, objective, final_norm_v);
                }
                rejected.push(f64::NEG_INFINITY);
                sigma *= config.gamma2;
                continue;
            };
            let phi_zero = sub.objective(&DMatrix::zeros(n, r));
            let phi_step = sub.objective(&(v.as_matrix() * step.alpha));
            let rho = compute_rho(step.objective, f_ref, phi_step, phi_zero);
            let used_sigma = sigma;
            if !pg {
                let (next_sigma, accept) = update_sigma(sigma, rho, config);
                sigma = next_sigma;
                if !accept {
                    rejected.push(rho);
                    continue;
                }
            }
            accepted = Some((step, v, rho, used_sigma, pass + 1));
            break;
        }

        let Some((step, v, rho, used_sigma, resolves)) = accepted else {
            return finish(x, Status::Stalled, trace, objective, final_norm_v);
        };

        let (f_new, grad_new) = problem.smooth().value_and_gradient(step.point.as_matrix());
        let rgrad_new = project_tangent(&step.point, &grad_new)?.into_matrix();
        if !pg {
            last_pair = Some((step.point.as_matrix() - x.as_matrix(), &rgrad_new - &rgrad));
        }
        trace.push(TraceRecord {
            k,
            objective,
            reference: f_ref,
            norm_v: v.norm(),
            sigma: used_sigma,
            alpha: step.alpha,
            rho,
            backtracks: step.backtracks,
            ssn_iters,
            resolves,
            rejected_rhos: rejected,
        });
        x = step.point;
        arrived_loose = last_loose;
        grad = grad_new;
        rgrad = rgrad_new;
        objective = f_new + problem.eval_h(x.as_matrix());
        history.push(objective);
    }
    finish(x, Status::MaxIter, trace, objective, final_norm_v)
}

/// Writes one CSV row per trace record under [`TRACE_HEADER`].
pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{TRACE_HEADER}")?;
    for t in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.k, t.objective, t.norm_v, t.sigma, t.alpha, t.rho, t.backtracks, t.ssn_iters, t.resolves
        )?;
    }
    out.flush()?;
    Ok(())
}
