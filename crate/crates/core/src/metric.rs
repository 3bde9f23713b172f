//! Diagonal quasi-Newton metric built from damped limited-memory BFGS pairs.
//!
//! The pairs use Euclidean differences `s = X₊ − X` and `y = g₊ − g` of
//! iterates and Riemannian gradients. Only the diagonal of the resulting
//! `n × n` BFGS matrix is kept, and the subproblem metric is
//! `diag(B) + σI`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_shape, Error, Result};

pub const DEFAULT_MEMORY: usize = 5;
pub const DEFAULT_THETA_FLOOR: f64 = 1e-3;

/// Pairs whose curvature `tr(sᵀBs)` falls below this multiple of `‖s‖²`
/// are skipped by [`build_diag`].
const DEGENERATE_CURVATURE: f64 = 1e-12;

/// A damped curvature pair `(s, ȳ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: DMatrix<f64>,
    pub y_damped: DMatrix<f64>,
    /// `tr(sᵀȳ)`.
    pub s_dot_y: f64,
    /// Blend weight `β ∈ (0, 1]` applied to the raw `y`.
    pub beta: f64,
    /// Scale `ϑ` of `H₀⁻¹ = ϑI` at damping time.
    pub theta: f64,
}

/// Powell damping: `ȳ = βy + (1 − β)ϑs`, with `β < 1` only when
/// `tr(sᵀy) < ¼ ϑ tr(sᵀs)`, in which case `tr(sᵀȳ) = ¼ ϑ tr(sᵀs)` exactly.
///
/// Returns `Ok(None)` when `s = 0`; the caller skips the update.
pub fn damp_pair(s: &DMatrix<f64>, y: &DMatrix<f64>, theta: f64) -> Result<Option<CurvaturePair>> {
    check_shape(s.shape(), y.shape())?;
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "theta must be positive, got {theta}"
        )));
    }
    let ss = s.norm_squared();
    if ss == 0.0 {
        return Ok(None);
    }
    let s_h_s = theta * ss;
    let sy = s.dot(y);
    let (beta, y_damped) = if sy < 0.25 * s_h_s {
        let beta = 0.75 * s_h_s / (s_h_s - sy);
        (beta, y * beta + s * ((1.0 - beta) * theta))
    } else {
        (1.0, y.clone())
    };
    let s_dot_y = s.dot(&y_damped);
    Ok(Some(CurvaturePair {
        s: s.clone(),
        y_damped,
        s_dot_y,
        beta,
        theta,
    }))
}

/// Initial scale `ϑ = max(tr(yᵀy)/tr(sᵀy), ϑ₀)`; `ϑ₀` when `tr(sᵀy) ≤ 0`.
pub fn theta_init(s_prev: &DMatrix<f64>, y_prev: &DMatrix<f64>, theta_floor: f64) -> f64 {
    let sy = s_prev.dot(y_prev);
    if !(sy > 0.0) {
        return theta_floor;
    }
    let ratio = y_prev.norm_squared() / sy;
    if ratio.is_finite() {
        ratio.max(theta_floor)
    } else {
        theta_floor
    }
}

/// How the initial scale `ϑ` of `B₀ = ϑI` is chosen from the latest pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaRule {
    /// `max(tr(yᵀy)/tr(sᵀy), ϑ₀)`, see [`theta_init`].
    #[default]
    Curvature,
    /// `max(tr(sᵀy)/tr(yᵀy), ϑ₀)`, the Barzilai–Borwein step length.
    InverseCurvature,
}

impl ThetaRule {
    pub const ALL: [ThetaRule; 2] = [ThetaRule::Curvature, ThetaRule::InverseCurvature];

    pub fn as_str(&self) -> &'static str {
        match self {
            ThetaRule::Curvature => "curvature",
            ThetaRule::InverseCurvature => "inverse",
        }
    }

    pub fn theta(&self, s_prev: &DMatrix<f64>, y_prev: &DMatrix<f64>, theta_floor: f64) -> f64 {
        match self {
            ThetaRule::Curvature => theta_init(s_prev, y_prev, theta_floor),
            ThetaRule::InverseCurvature => {
                let sy = s_prev.dot(y_prev);
                let yy = y_prev.norm_squared();
                if !(sy > 0.0) || !(yy > 0.0) {
                    return theta_floor;
                }
                (sy / yy).max(theta_floor)
            }
        }
    }
}

impl fmt::Display for ThetaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThetaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "curvature" => Ok(ThetaRule::Curvature),
            "inverse" | "inverse_curvature" | "bb" => Ok(ThetaRule::InverseCurvature),
            other => Err(Error::InvalidArgument(format!("unknown theta rule '{other}'"))),
        }
    }
}

/// Ring buffer of the `p` most recent damped pairs plus the current `ϑ`.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    pairs: VecDeque<CurvaturePair>,
    capacity: usize,
    theta: f64,
}

impl LbfgsMemory {
    pub fn new(capacity: usize, theta: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("memory size must be at least 1".into()));
        }
        if !(theta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "theta must be positive, got {theta}"
            )));
        }
        Ok(Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
            theta,
        })
    }

    pub fn push(&mut self, pair: CurvaturePair) {
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(pair);
    }

    pub fn set_theta(&mut self, theta: f64) {
        debug_assert!(theta > 0.0);
        self.theta = theta;
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs from oldest to newest.
    pub fn pairs(&self) -> impl Iterator<Item = &CurvaturePair> {
        self.pairs.iter()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }
}

/// Diagonal of the limited-memory BFGS matrix `B_p` started from `ϑI`:
///
/// `B_i = B_{i−1} − (B_{i−1}s)(B_{i−1}s)ᵀ / tr(sᵀB_{i−1}s) + ȳȳᵀ / tr(sᵀȳ)`.
///
/// `B_i` is never formed. For every pair the `n × r` product
/// `a_i = B_{i−1} s_i` is expanded over the earlier rank-`r` corrections,
/// and the diagonal collects row-wise squared norms of the `a_i` and `ȳ_i`.
/// The cost is `O(n r² p²)`.
pub fn build_diag(memory: &LbfgsMemory, n: usize) -> Result<DVector<f64>> {
    let theta = memory.theta;
    let mut diag = DVector::from_element(n, theta);
    // (a_i, tr(s_iᵀa_i), ȳ_i, tr(s_iᵀȳ_i)) for the accepted pairs
    let mut terms: Vec<(DMatrix<f64>, f64, &DMatrix<f64>, f64)> = Vec::with_capacity(memory.len());
    for pair in memory.pairs() {
        if pair.s.nrows() != n {
            return Err(Error::Dimension {
                expected: (n, pair.s.ncols()),
                got: pair.s.shape(),
            });
        }
        let s = &pair.s;
        let mut a = s * theta;
        for (a_l, curv_l, y_l, sy_l) in &terms {
            a -= a_l * (a_l.tr_mul(s) / *curv_l);
            a += *y_l * (y_l.tr_mul(s) / *sy_l);
        }
        let curvature = s.dot(&a);
        if curvature <= DEGENERATE_CURVATURE * s.norm_squared() || pair.s_dot_y <= 0.0 {
            continue;
        }
        for (i, d) in diag.iter_mut().enumerate() {
            let a_row = a.row(i).norm_squared();
            let y_row = pair.y_damped.row(i).norm_squared();
            *d += y_row / pair.s_dot_y - a_row / curvature;
        }
        terms.push((a, curvature, &pair.y_damped, pair.s_dot_y));
    }
    // Rounding can push a diagonal entry of a nearly singular B to zero.
    let floor = 1e-12 * theta;
    diag.iter_mut().for_each(|d| *d = d.max(floor));
    Ok(diag)
}

/// The subproblem metric `diag(d) + σI`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMetric {
    d: DVector<f64>,
    sigma: f64,
}

impl DiagonalMetric {
    pub fn new(d: DVector<f64>, sigma: f64) -> Result<Self> {
        if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("metric diagonal must be positive".into()));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be nonnegative, got {sigma}"
            )));
        }
        Ok(Self { d, sigma })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            d: DVector::from_element(n, 1.0),
            sigma: 0.0,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.d.clone(), sigma)
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Row weights `w_i = d_i + σ`.
    pub fn weights(&self) -> DVector<f64> {
        self.d.add_scalar(self.sigma)
    }

    /// `‖V‖²` in the metric `diag(d) + σI`.
    pub fn norm_sq(&self, v: &DMatrix<f64>) -> Result<f64> {
        metric_norm_sq(self, v)
    }

    /// `‖V‖²` in `diag(d)` alone, without the regularization term.
    pub fn quasi_newton_norm_sq(&self, v: &DMatrix<f64>) -> Result<f64> {
        check_shape((self.n(), v.ncols()), v.shape())?;
        Ok(weighted_rows(&self.d, 0.0, v))
    }
}

/// `Σ_i (d_i + σ) Σ_j V_ij²`.
pub fn metric_norm_sq(metric: &DiagonalMetric, v: &DMatrix<f64>) -> Result<f64> {
    check_shape((metric.n(), v.ncols()), v.shape())?;
    Ok(weighted_rows(&metric.d, metric.sigma, v))
}

fn weighted_rows(d: &DVector<f64>, sigma: f64, v: &DMatrix<f64>) -> f64 {
    v.row_iter()
        .zip(d.iter())
        .map(|(row, &di)| (di + sigma) * row.norm_squared())
        .sum()
}
