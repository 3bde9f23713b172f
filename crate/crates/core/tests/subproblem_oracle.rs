mod common;

use arpqn::metric::DiagonalMetric;
use arpqn::stiefel::random_point;
use arpqn::subproblem::{ssn_solve, SsnOptions, SymmetricMultiplier};
use common::{gaussian, oracle_subproblem, phi, rng};
use nalgebra::DVector;
use rand::Rng;

fn check(n: usize, r: usize, mu: f64, seed: u64) {
    let mut g = rng(seed);
    let x = random_point(n, r, seed).unwrap();
    let grad = gaussian(n, r, &mut g);
    let d = DVector::from_fn(n, |_, _| g.gen_range(0.5..5.0));
    let sigma = g.gen_range(0.0..1.0);
    let metric = DiagonalMetric::new(d.clone(), sigma).unwrap();
    let w = d.add_scalar(sigma);

    let opts = SsnOptions {
        tol: 1e-13,
        rel_tol: 0.0,
        exact_below: 0.0,
        max_iter: 500,
    };
    let out = ssn_solve(&x, &grad, &metric, mu, &SymmetricMultiplier::zeros(r), opts).unwrap();
    let v = out.v.as_matrix();
    let oracle = oracle_subproblem(x.as_matrix(), &grad, &w, mu);

    let gap = (v - &oracle).norm();
    let phi_ssn = phi(x.as_matrix(), &grad, &w, mu, v);
    let phi_oracle = phi(x.as_matrix(), &grad, &w, mu, &oracle);
    assert!(gap <= 1e-6, "St({n},{r}) mu {mu} seed {seed}: gap {gap:e}");
    assert!(
        phi_ssn <= phi_oracle + 1e-8,
        "St({n},{r}) mu {mu} seed {seed}: {phi_ssn} > {phi_oracle}"
    );
    let tangency = (x.as_matrix().transpose() * v + v.transpose() * x.as_matrix()).norm();
    assert!(tangency <= 1e-10);
}

#[test]
fn matches_oracle_without_l1() {
    for seed in 0..50 {
        check(6, 2, 0.0, seed);
        check(10, 3, 0.0, 1000 + seed);
    }
}

#[test]
fn matches_oracle_small_l1() {
    for seed in 0..50 {
        check(6, 2, 0.1, seed);
        check(10, 3, 0.1, 1000 + seed);
    }
}

#[test]
fn matches_oracle_large_l1() {
    for seed in 0..50 {
        check(6, 2, 1.0, seed);
        check(10, 3, 1.0, 1000 + seed);
    }
}
