//! Benchmark problems of the form `min f(X) + μ‖X‖₁` over `St(n, r)`.
//!
//! * Compressed modes: `f(X) = tr(XᵀHX)` with `H = −½Δ` discretized on
//!   `[0, 50]` by second-order central differences.
//! * Sparse PCA: `f(X) = −tr(XᵀAᵀAX)` for a `50 × n` standard normal `A`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stiefel::gaussian_matrix;
use crate::subproblem::l1_norm;

/// Length of the compressed-modes domain.
pub const CM_DOMAIN_LENGTH: f64 = 50.0;
/// Rows of the sparse PCA data matrix.
pub const SPCA_ROWS: usize = 50;
/// Entries at or below this magnitude count as zero.
pub const SPARSITY_THRESHOLD: f64 = 1e-5;

const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-8;

/// Smooth part `f` of a composite objective.
pub trait SmoothObjective: fmt::Debug + Send + Sync {
    fn value(&self, x: &DMatrix<f64>) -> f64;

    fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    fn value_and_gradient(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        (self.value(x), self.gradient(x))
    }

    /// Upper estimate of the Lipschitz constant of `∇f`.
    fn lipschitz(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    CompressedModes,
    SparsePca,
    Custom,
}

impl ProblemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemKind::CompressedModes => "cm",
            ProblemKind::SparsePca => "spca",
            ProblemKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cm" => Ok(ProblemKind::CompressedModes),
            "spca" => Ok(ProblemKind::SparsePca),
            other => Err(Error::InvalidArgument(format!("unknown problem '{other}'"))),
        }
    }
}

/// Name and generation parameters of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDescriptor {
    pub kind: ProblemKind,
    pub n: usize,
    pub r: usize,
    pub mu: f64,
    pub seed: Option<u64>,
}

impl fmt::Display for ProblemDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/n{}/r{}/mu{}", self.kind, self.n, self.r, self.mu)?;
        if let Some(seed) = self.seed {
            write!(f, "/seed{seed}")?;
        }
        Ok(())
    }
}

/// `F(X) = f(X) + μ‖X‖₁`.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    smooth: Arc<dyn SmoothObjective>,
    mu: f64,
    descriptor: ProblemDescriptor,
}

impl CompositeProblem {
    pub fn new(smooth: Arc<dyn SmoothObjective>, mu: f64, descriptor: ProblemDescriptor) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mu must be nonnegative, got {mu}"
            )));
        }
        Ok(Self {
            smooth,
            mu,
            descriptor,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn descriptor(&self) -> &ProblemDescriptor {
        &self.descriptor
    }

    pub fn lipschitz_estimate(&self) -> f64 {
        self.smooth.lipschitz()
    }

    pub fn smooth(&self) -> &dyn SmoothObjective {
        self.smooth.as_ref()
    }

    pub fn eval_f(&self, x: &DMatrix<f64>) -> f64 {
        self.smooth.value(x)
    }

    pub fn eval_grad_f(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.smooth.gradient(x)
    }

    pub fn eval_h(&self, x: &DMatrix<f64>) -> f64 {
        self.mu * l1_norm(x)
    }

    /// `F(X)`.
    pub fn objective(&self, x: &DMatrix<f64>) -> f64 {
        self.eval_f(x) + self.eval_h(x)
    }
}

/// Boundary condition of the discrete Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Periodic,
    Dirichlet,
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "periodic" => Ok(Boundary::Periodic),
            "dirichlet" => Ok(Boundary::Dirichlet),
            other => Err(Error::InvalidArgument(format!("unknown boundary '{other}'"))),
        }
    }
}

/// `H = −½ Δ_h` on a uniform grid of `n` points over `[0, 50]`, kept as a
/// three-point stencil.
#[derive(Debug, Clone)]
pub struct CmInstance {
    n: usize,
    dx: f64,
    boundary: Boundary,
    lipschitz: f64,
}

impl CmInstance {
    pub fn new(n: usize, boundary: Boundary) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!(
                "compressed modes needs n >= 4, got {n}"
            )));
        }
        let mut inst = Self {
            n,
            dx: CM_DOMAIN_LENGTH / n as f64,
            boundary,
            lipschitz: 0.0,
        };
        let norm = power_iteration(n, |v| inst.apply_vec(v));
        inst.lipschitz = 2.0 * norm;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Power-iteration estimate of `‖H‖₂`.
    pub fn h_norm(&self) -> f64 {
        self.lipschitz / 2.0
    }

    /// `HX` column by column.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let c = -0.5 / (self.dx * self.dx);
        let mut out = DMatrix::zeros(n, x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mut dst = out.column_mut(j);
            for i in 0..n {
                let left = match (i, self.boundary) {
                    (0, Boundary::Periodic) => col[n - 1],
                    (0, Boundary::Dirichlet) => 0.0,
                    _ => col[i - 1],
                };
                let right = match (i + 1 == n, self.boundary) {
                    (true, Boundary::Periodic) => col[0],
                    (true, Boundary::Dirichlet) => 0.0,
                    _ => col[i + 1],
                };
                dst[i] = c * (left - 2.0 * col[i] + right);
            }
        }
        out
    }

    fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(self.n, 1, v.as_slice());
        DVector::from_column_slice(self.apply(&m).as_slice())
    }

    /// Dense `H`.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.apply(&DMatrix::identity(self.n, self.n))
    }
}

impl SmoothObjective for CmInstance {
    fn value(&self, x: &DMatrix<f64>) -> f64 {
        x.dot(&self.apply(x))
    }

    fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply(x) * 2.0
    }

    fn value_and_gradient(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let hx = self.apply(x);
        (x.dot(&hx), hx * 2.0)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Sparse PCA data `A`.
#[derive(Debug, Clone)]
pub struct SpcaInstance {
    a: DMatrix<f64>,
    seed: Option<u64>,
    lipschitz: f64,
}

impl SpcaInstance {
    /// `50 × n` i.i.d. standard normal data from `seed`.
    pub fn generate(n: usize, seed: u64) -> Self {
        let mut rng = instance_rng(seed);
        let a = gaussian_matrix(SPCA_ROWS, n, &mut rng);
        let mut inst = Self::from_data(a);
        inst.seed = Some(seed);
        inst
    }

    pub fn from_data(a: DMatrix<f64>) -> Self {
        let n = a.ncols();
        let ata_norm = power_iteration(n, |v| a.tr_mul(&(&a * v)));
        Self {
            a,
            seed: None,
            lipschitz: 2.0 * ata_norm,
        }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

impl SmoothObjective for SpcaInstance {
    fn value(&self, x: &DMatrix<f64>) -> f64 {
        -(&self.a * x).norm_squared()
    }

    fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.a.tr_mul(&(&self.a * x)) * -2.0
    }

    fn value_and_gradient(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let ax = &self.a * x;
        (-ax.norm_squared(), self.a.tr_mul(&ax) * -2.0)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// RNG stream for instance data. Initial points draw from
/// [`crate::stiefel::random_point`] with the same seed but a separate stream.
pub(crate) fn instance_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Largest eigenvalue of a symmetric positive semidefinite operator.
fn power_iteration<F>(n: usize, apply: F) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_column_slice(gaussian_matrix(n, 1, &mut rng).as_slice());
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let converged = (next - estimate).abs() <= POWER_TOL * next.abs();
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

pub fn make_cm(n: usize, r: usize, mu: f64) -> Result<CompositeProblem> {
    make_cm_with_boundary(n, r, mu, Boundary::Periodic)
}

pub fn make_cm_with_boundary(n: usize, r: usize, mu: f64, boundary: Boundary) -> Result<CompositeProblem> {
    check_rank(n, r)?;
    let inst = CmInstance::new(n, boundary)?;
    CompositeProblem::new(
        Arc::new(inst),
        mu,
        ProblemDescriptor {
            kind: ProblemKind::CompressedModes,
            n,
            r,
            mu,
            seed: None,
        },
    )
}

pub fn make_spca(n: usize, r: usize, mu: f64, seed: u64) -> Result<CompositeProblem> {
    check_rank(n, r)?;
    CompositeProblem::new(
        Arc::new(SpcaInstance::generate(n, seed)),
        mu,
        ProblemDescriptor {
            kind: ProblemKind::SparsePca,
            n,
            r,
            mu,
            seed: Some(seed),
        },
    )
}

/// Sparse PCA with caller-provided data (e.g. `A = 0`).
pub fn spca_from_data(a: DMatrix<f64>, r: usize, mu: f64) -> Result<CompositeProblem> {
    let n = a.ncols();
    check_rank(n, r)?;
    CompositeProblem::new(
        Arc::new(SpcaInstance::from_data(a)),
        mu,
        ProblemDescriptor {
            kind: ProblemKind::SparsePca,
            n,
            r,
            mu,
            seed: None,
        },
    )
}

fn check_rank(n: usize, r: usize) -> Result<()> {
    if r == 0 || r > n {
        Err(Error::InvalidArgument(format!(
            "need 0 < r <= n, got n = {n}, r = {r}"
        )))
    } else {
        Ok(())
    }
}

/// Fraction of entries with `|X_ij| ≤ threshold`.
pub fn sparsity(x: &DMatrix<f64>, threshold: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let zeros = x.iter().filter(|v| v.abs() <= threshold).count();
    zeros as f64 / x.len() as f64
}

/// Writes `m` as dense CSV preceded by the header line `# rows cols seed`.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, seed: u64) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# {} {} {}", m.nrows(), m.ncols(), seed)?;
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        for row in m.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`], returning it with its seed.
pub fn read_matrix_csv(path: &Path) -> Result<(DMatrix<f64>, u64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let fields: Vec<&str> = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Io("missing '# rows cols seed' header".into()))?
        .split_whitespace()
        .collect();
    let parse = |s: &str| {
        s.parse::<u64>()
            .map_err(|e| Error::Io(format!("bad header field '{s}': {e}")))
    };
    if fields.len() != 3 {
        return Err(Error::Io(format!("header needs 3 fields, got {}", fields.len())));
    }
    let rows = parse(fields[0])? as usize;
    let cols = parse(fields[1])? as usize;
    let seed = parse(fields[2])?;

    let mut values = Vec::with_capacity(rows * cols);
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    for record in csv_reader.records() {
        let record = record?;
        if record.len() != cols {
            return Err(Error::Io(format!(
                "expected {cols} columns, got {}",
                record.len()
            )));
        }
        for field in record.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Io(format!("bad value '{field}': {e}")))?,
            );
        }
    }
    if values.len() != rows * cols {
        return Err(Error::Io(format!(
            "expected {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    Ok((DMatrix::from_row_slice(rows, cols, &values), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stiefel::{random_point, retract, RetractionKind, TangentVector};
    use approx::assert_relative_eq;

    fn fd_check(problem: &CompositeProblem, n: usize, r: usize) {
        for seed in 0..5 {
            let x = random_point(n, r, seed).unwrap();
            let dir = random_point(n, r, 100 + seed).unwrap().into_matrix();
            let g = problem.eval_grad_f(x.as_matrix());
            let t = 1e-6;
            let plus = problem.eval_f(&(x.as_matrix() + &dir * t));
            let minus = problem.eval_f(&(x.as_matrix() - &dir * t));
            let fd = (plus - minus) / (2.0 * t);
            let exact = g.dot(&dir);
            assert!(
                (fd - exact).abs() <= 1e-5 * exact.abs().max(1.0),
                "{fd} vs {exact}"
            );
        }
    }

    #[test]
    fn laplacian_stencil_for_n4() {
        let inst = CmInstance::new(4, Boundary::Periodic).unwrap();
        let h = inst.matrix();
        let dx = 12.5;
        let scale = -0.5 / (dx * dx);
        let expected = [-2.0, 1.0, 0.0, 1.0];
        for (j, e) in expected.iter().enumerate() {
            assert_relative_eq!(h[(0, j)], scale * e, epsilon = 1e-18);
        }
        let ones = DMatrix::from_element(4, 1, 1.0);
        assert!(inst.apply(&ones).norm() <= 1e-18);
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn dirichlet_boundary_drops_corners() {
        let inst = CmInstance::new(6, Boundary::Dirichlet).unwrap();
        let h = inst.matrix();
        assert_eq!(h[(0, 5)], 0.0);
        assert_eq!(h[(5, 0)], 0.0);
        assert!(h[(0, 1)] < 0.0);
    }

    #[test]
    fn cm_gradient_matches_finite_differences() {
        fd_check(&make_cm(8, 2, 0.1).unwrap(), 8, 2);
    }

    #[test]
    fn spca_gradient_matches_finite_differences() {
        fd_check(&make_spca(20, 3, 0.5, 7).unwrap(), 20, 3);
    }

    #[test]
    fn zero_data_gives_zero_smooth_part() {
        let p = spca_from_data(DMatrix::zeros(50, 6), 2, 1.0).unwrap();
        let x = random_point(6, 2, 1).unwrap();
        assert_eq!(p.eval_f(x.as_matrix()), 0.0);
        assert_eq!(p.eval_grad_f(x.as_matrix()).norm(), 0.0);
        assert_eq!(p.lipschitz_estimate(), 0.0);
    }

    #[test]
    fn cm_lipschitz_estimate() {
        // n = 50 on [0, 50] ⇒ Δx = 1 and ‖H‖₂ = 2.
        let inst = CmInstance::new(50, Boundary::Periodic).unwrap();
        assert_relative_eq!(inst.h_norm(), 2.0, max_relative = 1e-2);
        assert!(inst.h_norm() <= 2.0 + 1e-12);
    }

    #[test]
    fn spca_lipschitz_matches_largest_singular_value() {
        let inst = SpcaInstance::generate(30, 3);
        let smax = inst.data().clone().svd(false, false).singular_values.max();
        assert_relative_eq!(inst.lipschitz(), 2.0 * smax * smax, max_relative = 1e-6);
    }

    #[test]
    fn objective_bounds_hold() {
        let cm = make_cm(32, 3, 0.0).unwrap();
        let spca = make_spca(40, 3, 0.0, 5).unwrap();
        let a_norm_sq = spca.lipschitz_estimate() / 2.0;
        for seed in 0..10 {
            let x = random_point(32, 3, seed).unwrap();
            assert!(cm.eval_f(x.as_matrix()) >= -1e-12);
            let y = random_point(40, 3, seed).unwrap();
            assert!(spca.eval_f(y.as_matrix()) >= -2.0 * 3.0 * a_norm_sq * 1.001);
        }
    }

    #[test]
    fn zero_retraction_leaves_objective_unchanged() {
        let p = make_cm(16, 2, 0.1).unwrap();
        let x = random_point(16, 2, 4).unwrap();
        for kind in RetractionKind::ALL {
            let y = retract(&x, &TangentVector::zeros(&x), kind).unwrap();
            assert_eq!(p.objective(y.as_matrix()), p.objective(x.as_matrix()));
            assert_eq!(p.eval_f(y.as_matrix()), p.eval_f(x.as_matrix()));
        }
    }

    #[test]
    fn sparsity_counts() {
        assert_eq!(
            sparsity(&DMatrix::from_element(3, 3, 1.0), SPARSITY_THRESHOLD),
            0.0
        );
        assert_eq!(sparsity(&DMatrix::zeros(3, 3), SPARSITY_THRESHOLD), 1.0);
        let half = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.0]);
        assert_eq!(sparsity(&half, SPARSITY_THRESHOLD), 0.5);
    }

    #[test]
    fn instance_generation_is_deterministic() {
        let a = SpcaInstance::generate(12, 9);
        let b = SpcaInstance::generate(12, 9);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), SpcaInstance::generate(12, 10).data());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let a = SpcaInstance::generate(7, 3);
        write_matrix_csv(&path, a.data(), 3).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# 50 7 3\n"));
        let (back, seed) = read_matrix_csv(&path).unwrap();
        assert_eq!(seed, 3);
        assert_eq!(&back, a.data());
    }

    #[test]
    fn matrix_csv_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3,4\n").unwrap();
        assert!(read_matrix_csv(&path).is_err());
    }
}
