use arpqn::problems::{make_cm, make_spca, spca_from_data, Boundary, CmInstance};
use arpqn::solver::{solve, Mode, SolveOutput, SolverConfig, Status};
use arpqn::stiefel::{feasibility_residual, random_point, RetractionKind, StiefelPoint};
use nalgebra::{DMatrix, SymmetricEigen};

fn check_trace(out: &SolveOutput, config: &SolverConfig, n: usize, r: usize) {
    let tol = config.tol_factor * (n * r) as f64;
    if out.status == Status::Converged {
        assert!(out.final_norm_v.powi(2) <= tol);
    }
    assert!(feasibility_residual(out.x.as_matrix()) <= 1e-10);

    let mut prev_ref = f64::INFINITY;
    for t in &out.trace {
        assert!(
            t.reference <= prev_ref + 1e-12 * prev_ref.abs().max(1.0),
            "reference increased at k = {}",
            t.k
        );
        prev_ref = t.reference;
        assert!(t.sigma <= 1e8);
        assert!(t.resolves >= 1);
        assert_eq!(t.rejected_rhos.len(), t.resolves - 1);
        for &rho in &t.rejected_rhos {
            assert!(rho < config.eta1);
        }
        if config.mode != Mode::PgBaseline {
            assert!(t.rho >= config.eta1);
        }
        assert!(t.alpha > 0.0 && t.alpha <= 1.0);
    }
}

#[test]
fn invariants_hold_across_modes_and_retractions() {
    let problem = make_cm(48, 3, 0.1).unwrap();
    for mode in Mode::ALL {
        for retraction in RetractionKind::ALL {
            let config = SolverConfig {
                mode,
                retraction,
                ..SolverConfig::default()
            };
            for seed in 0..3 {
                let x0 = random_point(48, 3, seed).unwrap();
                let out = solve(&problem, &x0, &config).unwrap();
                assert_eq!(out.status, Status::Converged, "{mode} {retraction} seed {seed}");
                check_trace(&out, &config, 48, 3);
            }
        }
    }
}

#[test]
fn invariants_hold_on_sparse_pca() {
    let config = SolverConfig::default();
    for seed in 0..3 {
        let problem = make_spca(30, 2, 0.5, seed).unwrap();
        let x0 = random_point(30, 2, seed).unwrap();
        let out = solve(&problem, &x0, &config).unwrap();
        assert_eq!(out.status, Status::Converged);
        check_trace(&out, &config, 30, 2);
    }
}

#[test]
fn monotone_mode_never_increases_objective() {
    let problem = make_cm(40, 2, 0.2).unwrap();
    let config = SolverConfig::with_mode(Mode::Arpqn);
    let out = solve(&problem, &random_point(40, 2, 9).unwrap(), &config).unwrap();
    let mut prev = f64::INFINITY;
    for t in &out.trace {
        assert!(t.objective <= prev);
        assert_eq!(t.objective, t.reference);
        prev = t.objective;
    }
    assert!(out.objective <= prev);
}

#[test]
fn baseline_keeps_sigma_at_zero() {
    let problem = make_cm(32, 2, 0.1).unwrap();
    let config = SolverConfig::with_mode(Mode::PgBaseline);
    let out = solve(&problem, &random_point(32, 2, 4).unwrap(), &config).unwrap();
    assert!(out.trace.iter().all(|t| t.sigma == 0.0 && t.resolves == 1));
}

#[test]
fn stationary_start_terminates_immediately() {
    let n = 40;
    let r = 3;
    let h = CmInstance::new(n, Boundary::Periodic).unwrap().matrix();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let cols: Vec<_> = order[..r]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let x0 = StiefelPoint::new(DMatrix::from_columns(&cols)).unwrap();

    let problem = make_cm(n, r, 0.0).unwrap();
    let out = solve(&problem, &x0, &SolverConfig::default()).unwrap();
    assert_eq!(out.status, Status::Converged);
    assert_eq!(out.iterations(), 0);
    assert!(out.final_norm_v < 1e-6);
}

#[test]
fn zero_data_sparse_pca_reaches_a_coordinate_vector() {
    let config = SolverConfig::default();
    for n in [5, 12, 40] {
        for seed in 0..3 {
            let problem = spca_from_data(DMatrix::zeros(50, n), 1, 1.0).unwrap();
            let out = solve(&problem, &random_point(n, 1, seed).unwrap(), &config).unwrap();
            assert!(
                (out.objective - 1.0).abs() <= 1e-6,
                "n = {n}, F = {}",
                out.objective
            );
            let x = out.x.as_matrix();
            let peak = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let dist = (x.iter().map(|v| v * v).sum::<f64>() - peak * peak + (1.0 - peak).powi(2)).sqrt();
            assert!(dist <= 1e-4, "n = {n}, distance {dist}");
        }
    }
}

#[test]
fn max_outer_is_respected() {
    let problem = make_cm(64, 4, 0.1).unwrap();
    let config = SolverConfig {
        max_outer: 3,
        ..SolverConfig::default()
    };
    let out = solve(&problem, &random_point(64, 4, 0).unwrap(), &config).unwrap();
    assert_eq!(out.status, Status::MaxIter);
    assert_eq!(out.iterations(), 3);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let problem = make_cm(16, 2, 0.1).unwrap();
    assert!(solve(
        &problem,
        &random_point(20, 2, 0).unwrap(),
        &SolverConfig::default()
    )
    .is_err());
}
