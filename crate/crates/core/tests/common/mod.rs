//! Slow reference implementations shared by the integration tests.
#![allow(dead_code)]

use arpqn::metric::{damp_pair, LbfgsMemory};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `φ(V) = ⟨G, V⟩ + ½ Σ_i w_i ‖V_i‖² + μ‖X + V‖₁`.
pub fn phi(x: &DMatrix<f64>, g: &DMatrix<f64>, w: &DVector<f64>, mu: f64, v: &DMatrix<f64>) -> f64 {
    let quad: f64 = (0..v.nrows()).map(|i| w[i] * v.row(i).norm_squared()).sum();
    g.dot(v) + 0.5 * quad + mu * (x + v).iter().map(|a| a.abs()).sum::<f64>()
}

/// Orthonormal basis of `{V : XᵀV + VᵀX = 0}`, one column per basis
/// direction in column-major `vec(V)` layout.
pub fn tangent_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = x.shape();
    let dim = n * r;
    // Rows of the constraint operator, one per upper-triangular (a, b).
    let mut rows = Vec::new();
    for a in 0..r {
        for b in a..r {
            let mut row = DMatrix::<f64>::zeros(n, r);
            for i in 0..n {
                row[(i, b)] += x[(i, a)];
                row[(i, a)] += x[(i, b)];
            }
            rows.push(row.as_slice().to_vec());
        }
    }
    let a = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    // Null space of A from the eigenvectors of AᵀA with zero eigenvalue.
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let cols: Vec<_> = (0..dim)
        .filter(|&j| eig.eigenvalues[j].abs() < 1e-9)
        .map(|j| eig.eigenvectors.column(j).into_owned())
        .collect();
    assert_eq!(cols.len(), dim - r * (r + 1) / 2);
    DMatrix::from_columns(&cols)
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Minimizes `φ` over the tangent space in basis coordinates.
///
/// For `μ = 0` the problem is a linear system. Otherwise ADMM on the split
/// `z = vec(X) + Bc` is run to a tight residual.
pub fn oracle_subproblem(x: &DMatrix<f64>, g: &DMatrix<f64>, w: &DVector<f64>, mu: f64) -> DMatrix<f64> {
    let (n, r) = x.shape();
    let basis = tangent_basis(x);
    let wvec = DVector::from_fn(n * r, |k, _| w[k % n]);
    let q_mat = basis.transpose() * DMatrix::from_diagonal(&wvec) * &basis;
    let gvec = DVector::from_column_slice(g.as_slice());
    let q = basis.transpose() * &gvec;
    let to_matrix = |c: &DVector<f64>| DMatrix::from_column_slice(n, r, (&basis * c).as_slice());

    if mu == 0.0 {
        let c = q_mat.clone().cholesky().expect("positive definite").solve(&(-q));
        return to_matrix(&c);
    }

    let xvec = DVector::from_column_slice(x.as_slice());
    let rho = wvec.mean();
    let chol = (&q_mat + DMatrix::identity(q_mat.nrows(), q_mat.ncols()) * rho)
        .cholesky()
        .expect("positive definite");
    let mut c = DVector::zeros(q.len());
    let mut z = xvec.clone();
    let mut u = DVector::zeros(n * r);
    for _ in 0..400_000 {
        let rhs = -&q + basis.transpose() * ((&z - &xvec - &u) * rho);
        c = chol.solve(&rhs);
        let bc = &basis * &c;
        let z_old = z.clone();
        z = (&xvec + &bc + &u).map(|v| soft(v, mu / rho));
        let primal = &xvec + &bc - &z;
        u += &primal;
        let dual = (&z - &z_old).norm() * rho;
        if primal.norm() < 1e-14 && dual < 1e-14 {
            break;
        }
    }
    to_matrix(&c)
}

/// Diagonal of the limited-memory BFGS matrix formed densely from `ϑI`.
pub fn dense_diag(memory: &LbfgsMemory, n: usize) -> DVector<f64> {
    let mut b = DMatrix::identity(n, n) * memory.theta();
    for pair in memory.pairs() {
        let bs = &b * &pair.s;
        let curvature = pair.s.dot(&bs);
        if curvature <= 1e-12 * pair.s.norm_squared() || pair.s_dot_y <= 0.0 {
            continue;
        }
        b = &b - &bs * bs.transpose() / curvature + &pair.y_damped * pair.y_damped.transpose() / pair.s_dot_y;
    }
    b.diagonal()
}

/// Memory of capacity `p` fed with `pushes` random pairs. About a third of
/// the pairs have negative curvature so damping is exercised.
pub fn random_memory(n: usize, r: usize, p: usize, pushes: usize, seed: u64) -> LbfgsMemory {
    let mut g = rng(seed);
    let theta = 10f64.powf(g.gen_range(-2.0..1.0));
    let mut memory = LbfgsMemory::new(p, theta).unwrap();
    for _ in 0..pushes {
        let s = gaussian(n, r, &mut g);
        let noise = gaussian(n, r, &mut g);
        let scale = g.gen_range(-1.0..2.0);
        let y = &s * scale + noise * 0.5;
        if let Some(pair) = damp_pair(&s, &y, theta).unwrap() {
            memory.push(pair);
        }
    }
    memory
}
