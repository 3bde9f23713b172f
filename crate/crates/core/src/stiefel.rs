//! Geometry of the Stiefel manifold `St(n, r) = { X : XᵀX = I_r }`.
//!
//! Points and tangent vectors are thin wrappers over dense `n × r`
//! matrices. The tangent space at `X` is `{ V : VᵀX + XᵀV = 0 }` and the
//! orthogonal projection onto it is `V − X sym(XᵀV)`. Three retractions are
//! provided: the polar (SVD) factor of `X + ξ`, the positive-diagonal Q
//! factor of `X + ξ`, and the Cayley transform.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_shape, Error, Result};

/// Feasibility residual above which a point is re-orthonormalized.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Relative tolerance for accepting a matrix as tangent.
pub const TANGENCY_TOL: f64 = 1e-8;

/// A point on `St(n, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    data: DMatrix<f64>,
}

impl StiefelPoint {
    /// Wraps `data` as a Stiefel point, replacing it by its polar factor
    /// when `‖XᵀX − I‖_F` exceeds [`FEASIBILITY_TOL`].
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (n, r) = data.shape();
        if r == 0 || r > n {
            return Err(Error::InvalidArgument(format!(
                "Stiefel point needs 0 < r <= n, got n = {n}, r = {r}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in Stiefel point".into()));
        }
        if feasibility_residual(&data) <= FEASIBILITY_TOL {
            return Ok(Self { data });
        }
        let data = polar_factor(&data)?;
        Ok(Self { data })
    }

    /// The canonical embedding `[I_r; 0]`.
    pub fn identity_embedding(n: usize, r: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, r))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn r(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn residual(&self) -> f64 {
        feasibility_residual(&self.data)
    }
}

/// A tangent vector. The base point is not stored; every operation that
/// consumes a tangent vector takes the base point alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    data: DMatrix<f64>,
}

impl TangentVector {
    /// Wraps `data` after checking `‖VᵀX + XᵀV‖_F ≤ 1e-8 · max(1, ‖V‖_F)`.
    pub fn new(base: &StiefelPoint, data: DMatrix<f64>) -> Result<Self> {
        check_shape(base.shape(), data.shape())?;
        let defect = tangency_defect(base, &data);
        if defect > TANGENCY_TOL * data.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not tangent: ‖VᵀX + XᵀV‖ = {defect:e}"
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(base: &StiefelPoint) -> Self {
        Self {
            data: DMatrix::zeros(base.n(), base.r()),
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            data: &self.data * alpha,
        }
    }

    pub(crate) fn from_projected(data: DMatrix<f64>) -> Self {
        Self { data }
    }
}

/// Retraction used to map a tangent step back onto the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RetractionKind {
    /// Polar factor `UVᵀ` of `X + ξ = UΣVᵀ`.
    #[default]
    Svd,
    /// Q factor of `X + ξ = QR` with `diag(R) > 0`.
    Qr,
    /// Cayley transform `(I − W/2)⁻¹(I + W/2)X`.
    Cayley,
}

impl RetractionKind {
    pub const ALL: [RetractionKind; 3] = [RetractionKind::Svd, RetractionKind::Qr, RetractionKind::Cayley];

    pub fn as_str(&self) -> &'static str {
        match self {
            RetractionKind::Svd => "svd",
            RetractionKind::Qr => "qr",
            RetractionKind::Cayley => "cayley",
        }
    }
}

impl fmt::Display for RetractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetractionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svd" | "polar" => Ok(RetractionKind::Svd),
            "qr" => Ok(RetractionKind::Qr),
            "cayley" => Ok(RetractionKind::Cayley),
            other => Err(Error::InvalidArgument(format!("unknown retraction '{other}'"))),
        }
    }
}

/// `‖XᵀX − I‖_F`.
pub fn feasibility_residual(x: &DMatrix<f64>) -> f64 {
    let r = x.ncols();
    let mut gram = x.tr_mul(x);
    for i in 0..r {
        gram[(i, i)] -= 1.0;
    }
    gram.norm()
}

/// Symmetric part `(A + Aᵀ)/2` of a square matrix.
pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn tangency_defect(x: &StiefelPoint, v: &DMatrix<f64>) -> f64 {
    let xtv = x.as_matrix().tr_mul(v);
    (&xtv + xtv.transpose()).norm()
}

/// Orthogonal projection `M − X sym(XᵀM)` onto the tangent space at `x`.
pub fn project_tangent(x: &StiefelPoint, m: &DMatrix<f64>) -> Result<TangentVector> {
    check_shape(x.shape(), m.shape())?;
    let xm = x.as_matrix();
    let s = sym(&xm.tr_mul(m));
    Ok(TangentVector::from_projected(m - xm * s))
}

/// Riemannian gradient under the embedded metric: the tangent projection of
/// the Euclidean gradient `g`.
pub fn riemannian_gradient(x: &StiefelPoint, g: &DMatrix<f64>) -> Result<TangentVector> {
    project_tangent(x, g)
}

/// Maps the tangent step `xi` at `x` back onto the manifold.
pub fn retract(x: &StiefelPoint, xi: &TangentVector, kind: RetractionKind) -> Result<StiefelPoint> {
    check_shape(x.shape(), xi.as_matrix().shape())?;
    if xi.as_matrix().iter().all(|&v| v == 0.0) {
        return Ok(x.clone());
    }
    let data = match kind {
        RetractionKind::Svd => polar_factor(&(x.as_matrix() + xi.as_matrix()))?,
        RetractionKind::Qr => q_factor(&(x.as_matrix() + xi.as_matrix()))?,
        RetractionKind::Cayley => cayley_lowrank(x.as_matrix(), xi.as_matrix())?,
    };
    StiefelPoint::new(data)
}

/// Polar factor `A (AᵀA)^{-1/2}` of a full-column-rank matrix.
///
/// Uses the `r × r` eigen-decomposition of `AᵀA` and falls back to a thin
/// SVD when that route loses orthogonality.
pub fn polar_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = a.tr_mul(a);
    let eig = SymmetricEigen::new(gram);
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if min_ev > 1e-10 * max_ev && max_ev.is_finite() {
        let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let q = &eig.eigenvectors;
        let scaled = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();
        let w = a * scaled;
        if feasibility_residual(&w) <= 1e-12 {
            return Ok(w);
        }
    }
    polar_factor_svd(a)
}

/// Polar factor `UVᵀ` from a thin SVD.
pub fn polar_factor_svd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smin = svd.singular_values.min();
    let smax = svd.singular_values.max();
    if !(smin > 1e-14 * smax.max(1e-300)) {
        return Err(Error::Numerical("polar factor of a rank-deficient matrix".into()));
    }
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD without U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD without Vᵀ".into()))?;
    Ok(u * v_t)
}

/// Thin Q factor with the sign convention `diag(R) > 0`.
pub fn q_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = a.ncols();
    let qr = a.clone().qr();
    let rmat = qr.r();
    let mut q = qr.q();
    let scale = rmat.diagonal().amax().max(1e-300);
    for j in 0..r {
        let d = rmat[(j, j)];
        if d.abs() <= 1e-14 * scale {
            return Err(Error::Numerical("QR of a rank-deficient matrix".into()));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Cayley retraction through the Sherman–Morrison–Woodbury identity.
///
/// `W = UVᵀ` with `U = [Pξ, X]`, `V = [X, −Pξ]` and `P = I − XXᵀ/2`, so the
/// `n × n` solve reduces to a `2r × 2r` one.
fn cayley_lowrank(x: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, r) = x.shape();
    let p_xi = xi - x * (x.tr_mul(xi) * 0.5);
    let mut u = DMatrix::zeros(n, 2 * r);
    u.columns_mut(0, r).copy_from(&p_xi);
    u.columns_mut(r, r).copy_from(x);
    let mut v = DMatrix::zeros(n, 2 * r);
    v.columns_mut(0, r).copy_from(x);
    v.columns_mut(r, r).copy_from(&(-&p_xi));

    // (I + W/2) X
    let y = x + &u * (v.tr_mul(x) * 0.5);
    // (I − W/2)⁻¹ = I + U/2 (I − VᵀU/2)⁻¹ Vᵀ
    let small = DMatrix::identity(2 * r, 2 * r) - v.tr_mul(&u) * 0.5;
    let rhs = v.tr_mul(&y);
    let sol = small
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Cayley system".into()))?;
    Ok(y + &u * sol * 0.5)
}

/// Cayley retraction with the dense `n × n` system. Reference path for
/// checking the low-rank form.
pub fn cayley_dense(x: &StiefelPoint, xi: &TangentVector) -> Result<DMatrix<f64>> {
    let xm = x.as_matrix();
    let n = x.n();
    let p = DMatrix::identity(n, n) - xm * xm.transpose() * 0.5;
    let xi = xi.as_matrix();
    let w = &p * xi * xm.transpose() - xm * xi.transpose() * &p;
    let lhs = DMatrix::identity(n, n) - &w * 0.5;
    let rhs = (DMatrix::identity(n, n) + &w * 0.5) * xm;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Cayley system".into()))
}

/// Deterministic random point: the Q factor of an `n × r` standard Gaussian
/// matrix drawn from a ChaCha8 stream seeded with `seed`.
pub fn random_point(n: usize, r: usize, seed: u64) -> Result<StiefelPoint> {
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!(
            "random point needs 0 < r <= n, got n = {n}, r = {r}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian_matrix(n, r, &mut rng);
    StiefelPoint::new(q_factor(&g)?)
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // Column-major fill so that the stream layout matches the storage order.
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_vec(rows, cols, values)
}
