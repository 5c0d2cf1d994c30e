#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topopt_core::fem::{assemble, compliance, solve_with, FemSolution, FemSpace, SolverOptions};
use topopt_core::{build_grid, BoundarySpec, DesignField, Side};

pub const GAMMA: f64 = 1e-3;
pub const F: f64 = 1e-2;

pub fn half_left() -> BoundarySpec {
    BoundarySpec::single(Side::Left, 0.5, 0.5)
}

pub fn space(n: usize, order: usize, boundary: &BoundarySpec) -> FemSpace {
    FemSpace::new(Arc::new(build_grid(n, boundary).unwrap()), order).unwrap()
}

/// Random feasible design with values spread over `[γ, 1]`.
pub fn random_design(n: usize, seed: u64) -> DesignField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..n * n).map(|_| rng.random_range(GAMMA..=1.0)).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    DesignField::new(n, vals, GAMMA, mean.max(GAMMA)).unwrap()
}

pub fn checkerboard(n: usize) -> DesignField {
    let vals = (0..n * n)
        .map(|e| if (e / n + e % n).is_multiple_of(2) { 1.0 } else { GAMMA })
        .collect();
    DesignField::new(n, vals, GAMMA, 0.5).unwrap()
}

pub fn solve_design(d: &DesignField, p: f64, s: &FemSpace, opts: &SolverOptions) -> FemSolution {
    solve_with(&assemble(d, p, s, F).unwrap(), opts).unwrap()
}

/// `|ℓ(u_h) − a(u_h, u_h)| / ℓ(u_h)`.
pub fn galerkin_defect(sol: &FemSolution) -> f64 {
    let l = compliance(sol);
    (l - sol.energy()).abs() / l.abs()
}
