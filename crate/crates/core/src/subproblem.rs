//! Regularized proximal quasi-Newton subproblem over the tangent space.
//!
//! At an iterate `X` with Euclidean gradient `G`, metric `𝔹 = diag(d) + σI`
//! and ℓ₁ weight `μ`, the search direction solves
//!
//! ```text
//! min_V  φ(V) = ⟨G, V⟩ + ½‖V‖²_𝔹 + μ‖X + V‖₁   s.t.  VᵀX + XᵀV = 0.
//! ```
//!
//! The tangency constraint is dualized with a symmetric multiplier `Λ`. For
//! fixed `Λ` the Lagrangian minimizer is a weighted soft-threshold,
//!
//! ```text
//! V(Λ) = prox(X − 𝔹⁻¹(G − 2XΛ)) − X,
//! ```
//!
//! and the multiplier is the root of the monotone, piecewise-affine map
//! `E(Λ) = V(Λ)ᵀX + XᵀV(Λ)`. The root is found by a regularized semismooth
//! Newton iteration whose linear systems are solved by conjugate gradients
//! directly on symmetric `r × r` matrices under the trace inner product.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_shape, Error, Result};
use crate::metric::DiagonalMetric;
use crate::stiefel::{project_tangent, sym, StiefelPoint, TangentVector};

/// Symmetric Lagrange multiplier for the tangency constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMultiplier {
    lambda: DMatrix<f64>,
}

impl SymmetricMultiplier {
    /// Symmetrizes `m`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension {
                expected: (m.nrows(), m.nrows()),
                got: m.shape(),
            });
        }
        Ok(Self { lambda: sym(&m) })
    }

    pub fn zeros(r: usize) -> Self {
        Self {
            lambda: DMatrix::zeros(r, r),
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.lambda
    }
}

/// Outcome of [`ssn_solve`].
#[derive(Debug, Clone)]
pub struct SubproblemResult {
    /// Search direction, projected onto the tangent space.
    pub v: TangentVector,
    pub lambda: SymmetricMultiplier,
    /// `‖E(Λ)‖_F` at the returned multiplier.
    pub residual_norm: f64,
    pub ssn_iters: usize,
    pub converged: bool,
}

/// Stopping controls for [`ssn_solve`]: stop once
/// `‖E(Λ)‖ ≤ max(tol, rel_tol · ‖V(Λ)‖²)`, except that the relative term is
/// dropped while `‖V(Λ)‖² ≤ exact_below`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsnOptions {
    pub tol: f64,
    pub rel_tol: f64,
    pub exact_below: f64,
    pub max_iter: usize,
}

impl SsnOptions {
    /// `tol = 1e-7 · max(1, ‖G‖_F)` with no relative term.
    pub fn for_gradient(grad_f: &DMatrix<f64>, max_iter: usize) -> Self {
        Self {
            tol: 1e-7 * grad_f.norm().max(1.0),
            rel_tol: 0.0,
            exact_below: 0.0,
            max_iter,
        }
    }

    pub fn with_rel_tol(self, rel_tol: f64, exact_below: f64) -> Self {
        Self {
            rel_tol,
            exact_below,
            ..self
        }
    }

    fn target(&self, v: &DMatrix<f64>) -> f64 {
        let v2 = v.norm_squared();
        if v2 <= self.exact_below {
            self.tol
        } else {
            self.tol.max(self.rel_tol * v2)
        }
    }
}

/// Weighted soft-threshold: entry `(i, j)` becomes
/// `sign(P_ij) · max(|P_ij| − μ/w_i, 0)`.
///
/// This is the exact minimizer of `μ‖Y‖₁ + ½ Σ_i w_i ‖Y_i − P_i‖²`.
pub fn prox_l1_weighted(p: &DMatrix<f64>, weights: &DVector<f64>, mu: f64) -> Result<DMatrix<f64>> {
    if weights.len() != p.nrows() {
        return Err(Error::Dimension {
            expected: (p.nrows(), 1),
            got: (weights.len(), 1),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument("prox weights must be positive".into()));
    }
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mu must be nonnegative, got {mu}"
        )));
    }
    let mut out = p.clone();
    for (i, &w) in weights.iter().enumerate() {
        let thr = mu / w;
        for v in out.row_mut(i).iter_mut() {
            *v = soft(*v, thr);
        }
    }
    Ok(out)
}

#[inline]
fn soft(v: f64, thr: f64) -> f64 {
    if v > thr {
        v - thr
    } else if v < -thr {
        v + thr
    } else {
        0.0
    }
}

/// `𝒜(V) = VᵀX + XᵀV`.
pub fn constraint_map(x: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let xtv = x.tr_mul(v);
    &xtv + xtv.transpose()
}

/// Adjoint `𝒜*(Λ) = 2XΛ` for symmetric `Λ`.
pub fn constraint_adjoint(x: &DMatrix<f64>, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    x * lambda * 2.0
}

/// One subproblem instance with the metric weights precomputed.
#[derive(Debug, Clone)]
pub struct Subproblem<'a> {
    x: &'a StiefelPoint,
    grad_f: &'a DMatrix<f64>,
    mu: f64,
    weights: DVector<f64>,
    inv_weights: DVector<f64>,
    /// Lipschitz constant `4 / min w` of `E`.
    lipschitz: f64,
}

impl<'a> Subproblem<'a> {
    pub fn new(
        x: &'a StiefelPoint,
        grad_f: &'a DMatrix<f64>,
        metric: &DiagonalMetric,
        mu: f64,
    ) -> Result<Self> {
        check_shape(x.shape(), grad_f.shape())?;
        if metric.n() != x.n() {
            return Err(Error::Dimension {
                expected: (x.n(), 1),
                got: (metric.n(), 1),
            });
        }
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mu must be nonnegative, got {mu}"
            )));
        }
        let weights = metric.weights();
        let inv_weights = weights.map(|w| 1.0 / w);
        let lipschitz = 4.0 / weights.min();
        Ok(Self {
            x,
            grad_f,
            mu,
            weights,
            inv_weights,
            lipschitz,
        })
    }

    fn r(&self) -> usize {
        self.x.r()
    }

    /// Prox argument `P(Λ) = X − 𝔹⁻¹(G − 2XΛ)`.
    fn prox_argument(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.x.as_matrix();
        let mut p = constraint_adjoint(x, lambda) - self.grad_f;
        for (mut row, &iw) in p.row_iter_mut().zip(self.inv_weights.iter()) {
            row *= iw;
        }
        p + x
    }

    /// `V(Λ)`, the unconstrained minimizer of the Lagrangian.
    pub fn v_of_lambda(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = self.prox_argument(lambda);
        self.shrink_in_place(&mut p);
        p - self.x.as_matrix()
    }

    fn shrink_in_place(&self, p: &mut DMatrix<f64>) {
        if self.mu == 0.0 {
            return;
        }
        for (i, &w) in self.weights.iter().enumerate() {
            let thr = self.mu / w;
            for v in p.row_mut(i).iter_mut() {
                *v = soft(*v, thr);
            }
        }
    }

    /// `E(Λ) = 𝒜(V(Λ))`.
    pub fn residual(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        constraint_map(self.x.as_matrix(), &self.v_of_lambda(lambda))
    }

    /// 0/1 mask of the generalized Jacobian of the prox at `P(Λ)`. Entries
    /// exactly on the threshold are inactive.
    fn active_mask(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = self.prox_argument(lambda);
        for (i, &w) in self.weights.iter().enumerate() {
            let thr = self.mu / w;
            for v in p.row_mut(i).iter_mut() {
                *v = if v.abs() > thr || self.mu == 0.0 { 1.0 } else { 0.0 };
            }
        }
        p
    }

    fn apply_with_mask(&self, mask: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.x.as_matrix();
        let mut dv = constraint_adjoint(x, d);
        for (mut row, &iw) in dv.row_iter_mut().zip(self.inv_weights.iter()) {
            row *= iw;
        }
        dv.component_mul_assign(mask);
        constraint_map(x, &dv)
    }

    /// Element of the generalized Jacobian of `E` at `Λ`, applied to `D`.
    pub fn jacobian_apply(&self, lambda: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_with_mask(&self.active_mask(lambda), d)
    }

    /// Subproblem objective `φ(V)`.
    pub fn objective(&self, v: &DMatrix<f64>) -> f64 {
        let quad: f64 = v
            .row_iter()
            .zip(self.weights.iter())
            .map(|(row, &w)| w * row.norm_squared())
            .sum();
        self.grad_f.dot(v) + 0.5 * quad + self.mu * l1_norm(&(self.x.as_matrix() + v))
    }

    /// Lagrangian `φ(V) − ⟨Λ, 𝒜(V)⟩`.
    pub fn lagrangian(&self, v: &DMatrix<f64>, lambda: &DMatrix<f64>) -> f64 {
        self.objective(v) - lambda.dot(&constraint_map(self.x.as_matrix(), v))
    }

    /// `V(Λ)` together with `E(Λ)`.
    fn evaluate(&self, lambda: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let v = self.v_of_lambda(lambda);
        let e = constraint_map(self.x.as_matrix(), &v);
        (v, e)
    }

    /// Regularized, safeguarded semismooth Newton iteration on `E(Λ) = 0`.
    ///
    /// Every accepted update decreases `‖E‖`. When neither the damped Newton
    /// step nor the fixed-point fallback makes sufficient progress the
    /// iteration stops at the best multiplier found.
    pub fn solve(&self, lambda0: &SymmetricMultiplier, opts: SsnOptions) -> Result<SubproblemResult> {
        let r = self.r();
        check_shape((r, r), lambda0.as_matrix().shape())?;
        if opts.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        let mut lambda = lambda0.as_matrix().clone();
        let (mut v_raw, mut e) = self.evaluate(&lambda);
        let mut e_norm = e.norm();
        let mut iters = 0;
        let cg_max = (r * (r + 1) / 2).max(1);

        while e_norm > opts.target(&v_raw) && iters < opts.max_iter {
            iters += 1;
            let eta = (0.2 * e_norm.sqrt()).clamp(1e-12, 1e-2);
            let mask = self.active_mask(&lambda);
            let rhs = -&e;
            let dir = conjugate_gradient(
                |z| self.apply_with_mask(&mask, z) + z * eta,
                &rhs,
                0.1f64.min(e_norm),
                cg_max,
            );

            let mut newton = None;
            let mut step = 1.0;
            for _ in 0..=10 {
                let trial = sym(&(&lambda + &dir * step));
                let (v_trial, e_trial) = self.evaluate(&trial);
                let n_trial = e_trial.norm();
                if n_trial <= (1.0 - 1e-4) * e_norm {
                    newton = Some((trial, v_trial, e_trial, n_trial));
                    break;
                }
                step *= 0.5;
            }
            let used_newton = newton.is_some();
            let (next, v_next, e_next, n_next) = match newton {
                Some(t) => t,
                None => {
                    // Gradient step on the convex dual with step 1/L; it
                    // cannot increase ‖E‖.
                    let trial = sym(&(&lambda - &e / self.lipschitz));
                    let (v_trial, e_trial) = self.evaluate(&trial);
                    let n_trial = e_trial.norm();
                    (trial, v_trial, e_trial, n_trial)
                }
            };
            if n_next > e_norm {
                // Rounding at the noise floor; keep the best iterate.
                break;
            }
            let stalled = !used_newton && n_next > (1.0 - 1e-4) * e_norm;
            lambda = next;
            v_raw = v_next;
            e = e_next;
            e_norm = n_next;
            if stalled {
                break;
            }
        }

        let converged = e_norm <= opts.target(&v_raw);
        let v = project_tangent(self.x, &v_raw)?;
        Ok(SubproblemResult {
            v,
            lambda: SymmetricMultiplier { lambda },
            residual_norm: e_norm,
            ssn_iters: iters,
            converged,
        })
    }
}

pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Conjugate gradients for a self-adjoint positive definite operator on
/// symmetric matrices under the trace inner product.
fn conjugate_gradient<F>(apply: F, rhs: &DMatrix<f64>, rtol: f64, max_iter: usize) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let mut x = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    let mut res = rhs.clone();
    let mut p = res.clone();
    let mut rr = res.norm_squared();
    let stop = (rtol * rhs.norm()).powi(2);
    for _ in 0..max_iter {
        if rr <= stop {
            break;
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        x += &p * alpha;
        res -= &ap * alpha;
        let rr_new = res.norm_squared();
        p = &res + &p * (rr_new / rr);
        rr = rr_new;
    }
    x
}

/// Weighted ℓ₁ prox in the metric `metric` (see [`prox_l1_weighted`]).
pub fn prox_in_metric(p: &DMatrix<f64>, metric: &DiagonalMetric, mu: f64) -> Result<DMatrix<f64>> {
    prox_l1_weighted(p, &metric.weights(), mu)
}

pub fn v_of_lambda(
    x: &StiefelPoint,
    grad_f: &DMatrix<f64>,
    metric: &DiagonalMetric,
    mu: f64,
    lambda: &SymmetricMultiplier,
) -> Result<DMatrix<f64>> {
    let sp = Subproblem::new(x, grad_f, metric, mu)?;
    check_shape((x.r(), x.r()), lambda.as_matrix().shape())?;
    Ok(sp.v_of_lambda(lambda.as_matrix()))
}

pub fn residual_e(
    x: &StiefelPoint,
    grad_f: &DMatrix<f64>,
    metric: &DiagonalMetric,
    mu: f64,
    lambda: &SymmetricMultiplier,
) -> Result<DMatrix<f64>> {
    let sp = Subproblem::new(x, grad_f, metric, mu)?;
    check_shape((x.r(), x.r()), lambda.as_matrix().shape())?;
    Ok(sp.residual(lambda.as_matrix()))
}

pub fn jacobian_apply(
    x: &StiefelPoint,
    grad_f: &DMatrix<f64>,
    metric: &DiagonalMetric,
    mu: f64,
    lambda: &SymmetricMultiplier,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let sp = Subproblem::new(x, grad_f, metric, mu)?;
    check_shape((x.r(), x.r()), lambda.as_matrix().shape())?;
    check_shape((x.r(), x.r()), d.shape())?;
    Ok(sp.jacobian_apply(lambda.as_matrix(), d))
}

pub fn ssn_solve(
    x: &StiefelPoint,
    grad_f: &DMatrix<f64>,
    metric: &DiagonalMetric,
    mu: f64,
    lambda0: &SymmetricMultiplier,
    opts: SsnOptions,
) -> Result<SubproblemResult> {
    Subproblem::new(x, grad_f, metric, mu)?.solve(lambda0, opts)
}
