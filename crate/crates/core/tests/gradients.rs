//! Finite-difference checks of the analytic sensitivities.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topopt_core::estimator::estimate;
use topopt_core::fem::{assemble, compliance, solve, FemSpace, LinearSolver, SolverOptions};
use topopt_core::grid::{build_grid, BoundarySpec, Side};
use topopt_core::sensitivity::{
    combined_gradient, compliance_gradient, estimator_gradient, estimator_sensitivity,
    finite_difference, max_relative_error, StepRule,
};
use topopt_core::DesignField;

const P: f64 = 4.0;
const F: f64 = 1e-2;
const GAMMA: f64 = 1e-3;

fn space(n: usize) -> FemSpace {
    let b = BoundarySpec::single(Side::Left, 0.5, 0.5);
    FemSpace::new(Arc::new(build_grid(n, &b).unwrap()), 1).unwrap()
}

/// Feasible design with well separated values (no ties between cells).
fn random_design(n: usize, seed: u64) -> DesignField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals: Vec<f64> = (0..n * n)
        .map(|i| 0.15 + 0.7 * (i as f64 + rng.random::<f64>() * 0.8) / (n * n) as f64)
        .collect();
    // shuffle
    for i in (1..vals.len()).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    DesignField::new(n, vals, GAMMA, 0.6).unwrap()
}

fn phi(s: &FemSpace, d: &DesignField) -> topopt_core::Result<f64> {
    Ok(compliance(&solve(&assemble(d, P, s, F)?)?))
}

fn e_apost(s: &FemSpace, d: &DesignField) -> topopt_core::Result<f64> {
    let sol = solve(&assemble(d, P, s, F)?)?;
    Ok(estimate(d, P, &sol, F)?.total)
}

#[test]
fn compliance_matches_finite_differences() {
    let s = space(4);
    for seed in 0..3 {
        let d = random_design(4, seed);
        let sol = solve(&assemble(&d, P, &s, F).unwrap()).unwrap();
        let g = compliance_gradient(&d, P, &sol).unwrap();
        let fd = finite_difference(|x| phi(&s, x), &d, StepRule::default()).unwrap();
        let err = max_relative_error(&g, &fd, 1e-12);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn estimator_matches_finite_differences() {
    let s = space(4);
    for seed in 0..3 {
        let d = random_design(4, seed);
        let sol = solve(&assemble(&d, P, &s, F).unwrap()).unwrap();
        let g = estimator_gradient(&d, P, &sol, F).unwrap();
        let fd = finite_difference(|x| e_apost(&s, x), &d, StepRule::default()).unwrap();
        let err = max_relative_error(&g, &fd, 1e-12);
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn dropping_the_adjoint_term_is_detected() {
    let s = space(4);
    let d = random_design(4, 7);
    let system = assemble(&d, P, &s, F).unwrap();
    let solver = LinearSolver::new(&system.matrix, &SolverOptions::default()).unwrap();
    let sol = solve(&system).unwrap();
    let sens = estimator_sensitivity(&d, P, &sol, F, &solver, &system.matrix).unwrap();
    assert!(sens.adjoint_residual <= 1e-10);
    let fd = finite_difference(|x| e_apost(&s, x), &d, StepRule::default()).unwrap();
    assert!(max_relative_error(&sens.total, &fd, 1e-12) < 1e-3);
    assert!(max_relative_error(&sens.explicit, &fd, 1e-12) > 1e-2);
}

#[test]
fn combined_matches_finite_differences_and_is_linear_in_c() {
    let s = space(4);
    let d = random_design(4, 11);
    let sol = solve(&assemble(&d, P, &s, F).unwrap()).unwrap();
    let g1 = combined_gradient(&d, P, &sol, F, 1.0).unwrap();
    let fd = finite_difference(
        |x| Ok(phi(&s, x)? + e_apost(&s, x)?),
        &d,
        StepRule::default(),
    )
    .unwrap();
    assert!(max_relative_error(&g1, &fd, 1e-12) < 1e-3);

    let g0 = combined_gradient(&d, P, &sol, F, 0.0).unwrap();
    let g2 = combined_gradient(&d, P, &sol, F, 2.0).unwrap();
    let gc = compliance_gradient(&d, P, &sol).unwrap();
    assert_eq!(g0.values, gc.values);
    for i in 0..16 {
        let lhs = g2.values[i] - g0.values[i];
        let rhs = 2.0 * (g1.values[i] - g0.values[i]);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-30));
    }
}

#[test]
fn gradient_is_mirror_symmetric_for_centred_sink() {
    let b = BoundarySpec::single(Side::Left, 0.5, 0.25);
    let s = FemSpace::new(Arc::new(build_grid(8, &b).unwrap()), 1).unwrap();
    let d = DesignField::uniform(8, 0.4, GAMMA, 0.4).unwrap();
    let sol = solve(&assemble(&d, P, &s, F).unwrap()).unwrap();
    for g in [
        compliance_gradient(&d, P, &sol).unwrap(),
        estimator_gradient(&d, P, &sol, F).unwrap(),
    ] {
        let scale = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for row in 0..8 {
            for col in 0..8 {
                let diff = (g.get(row, col) - g.get(7 - row, col)).abs();
                assert!(diff <= 1e-9 * scale, "({row},{col})");
            }
        }
    }
}
