//! Design sensitivities of the compliance and of the error estimator.
//!
//! Compliance is self-adjoint, so its gradient needs only the state. The estimator depends on
//! `k` both explicitly (through `κ_T`, `κ_E` and the flux jumps) and implicitly through `u_h`;
//! the implicit part is recovered from one adjoint solve with the primal stiffness matrix:
//!
//! ```text
//! dE/dk = ∂E/∂k − λᵀ (∂A/∂k) u_h,    A λ = ∂E/∂u_h
//! ```

use serde::{Deserialize, Serialize};

use crate::design::DesignField;
use crate::error::{Error, Result};
use crate::estimator::{edge_sample, interior_term};
use crate::fem::{assemble, FemSolution, LinearSolver, SolverOptions};
use crate::grid::{EdgeTag, ModelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Compliance,
    Estimator,
    /// `Φ_h + C E_apost`.
    Combined(f64),
    Custom,
}

/// Derivative of an objective with respect to each ground-cell conductivity.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub n: usize,
    pub values: Vec<f64>,
    pub objective: Objective,
}

impl GradientField {
    fn new(n: usize, values: Vec<f64>, objective: Objective) -> Self {
        GradientField { n, values, objective }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn model_of(design: &DesignField, solution: &FemSolution) -> Result<ModelGrid> {
    let model = ModelGrid::nested(design.n(), solution.space.grid().n())?;
    let expected = crate::fem::element_coefficients(design, solution.p, solution.space.grid())?;
    if expected.as_slice() != solution.coefficients.as_slice() {
        return Err(Error::GridMismatch(
            "solution was not computed for this design".into(),
        ));
    }
    Ok(model)
}

/// `dΦ_h/dk = −p k^{p−1} Σ_{e ⊂ cell} u_eᵀ K⁰ u_e`; never positive.
pub fn compliance_gradient(design: &DesignField, p: f64, solution: &FemSolution) -> Result<GradientField> {
    let model = model_of(design, solution)?;
    let space = &solution.space;
    let mut g = vec![0.0; design.n() * design.n()];
    for e in 0..space.grid().elements().len() {
        let ue = space.gather(e, &solution.u);
        g[model.cell_of_element(e)] -= space.basis().local_energy(&ue);
    }
    for (gi, k) in g.iter_mut().zip(design.values()) {
        *gi *= p * k.powf(p - 1.0);
    }
    Ok(GradientField::new(design.n(), g, Objective::Compliance))
}

/// Estimator gradient split into its parts.
#[derive(Debug, Clone)]
pub struct EstimatorSensitivity {
    /// `∂E/∂k` at fixed `u_h`.
    pub explicit: GradientField,
    /// Full derivative including the adjoint term.
    pub total: GradientField,
    /// `‖A λ − ∂E/∂u‖ / ‖∂E/∂u‖` of the adjoint solve.
    pub adjoint_residual: f64,
    pub adjoint_iterations: usize,
}

/// Partial derivatives of `E_apost` with respect to each element coefficient `κ_e` and to the
/// full DOF vector, at fixed `u`.
fn estimator_partials(solution: &FemSolution, f: f64) -> (Vec<f64>, Vec<f64>) {
    let space = &solution.space;
    let grid = space.grid();
    let basis = space.basis();
    let h = grid.h();
    let kappa = &solution.coefficients;
    let u = &solution.u;
    let mut d_kappa = vec![0.0; grid.elements().len()];
    let mut d_u = vec![0.0; space.ndof()];

    // interior residual terms
    for e in 0..grid.elements().len() {
        let ue = space.gather(e, u);
        let k = kappa[e];
        let term = interior_term(space, k, &ue, f);
        let mut cross = 0.0;
        let mut du_local = vec![0.0; basis.nloc()];
        for (q, w) in basis.interior_weights().iter().enumerate() {
            let lap_ref = basis.interior_laplacian(q);
            let lap: f64 = lap_ref.iter().zip(&ue).map(|(l, v)| l * v).sum::<f64>() / (h * h);
            let r = f + k * lap;
            cross += w * 2.0 * r * lap;
            for (a, l) in lap_ref.iter().enumerate() {
                du_local[a] += w * 2.0 * r * k * l / (h * h);
            }
        }
        let scale = h * h * h * h / k;
        d_kappa[e] += -term / k + scale * cross;
        for (d, v) in space.element_dofs(e).into_iter().zip(du_local) {
            d_u[d] += scale * v;
        }
    }

    // edge jump terms, each credited once per adjacent element
    for (i, ed) in grid.edges().iter().enumerate() {
        if ed.tag == EdgeTag::Dirichlet {
            continue;
        }
        let s = edge_sample(space, kappa, u, i).expect("non-Dirichlet edge");
        let mult = s.count as f64;
        let weights = basis.edge_weights();
        for t in 0..s.count {
            let (e, side) = s.adjacent[t];
            // Σ_q w_q J_q ∂J_q/∂κ_t
            let j_dj: f64 = (0..s.nq)
                .map(|q| weights[q] * s.jump[q] * s.sign * s.dn[t][q])
                .sum();
            d_kappa[e] += mult * h * (-s.integral / (s.kappa_edge * s.kappa_edge) + 2.0 * h * j_dj / s.kappa_edge);

            let dofs = space.element_dofs(e);
            for q in 0..s.nq {
                let dn_ref = basis.side_normal_derivative(side, q);
                let c = mult * (h / s.kappa_edge) * 2.0 * h * weights[q] * s.jump[q] * s.sign * kappa[e] / h;
                for (&d, dr) in dofs.iter().zip(dn_ref) {
                    d_u[d] += c * dr;
                }
            }
        }
    }
    (d_kappa, d_u)
}

/// Estimator gradient reusing a solver prepared for the primal stiffness matrix.
pub fn estimator_sensitivity(
    design: &DesignField,
    p: f64,
    solution: &FemSolution,
    f: f64,
    solver: &LinearSolver<'_>,
    matrix: &crate::fem::CsrMatrix,
) -> Result<EstimatorSensitivity> {
    let space = &solution.space;
    if space.order() != 1 {
        return Err(Error::Unsupported(
            "estimator gradients are only available for Q1 elements".into(),
        ));
    }
    let model = model_of(design, solution)?;
    let (d_kappa, d_u) = estimator_partials(solution, f);

    let rhs = space.restrict(&d_u);
    let (lambda, stats) = solver.solve(&rhs)?;
    let adjoint_residual = crate::fem::solver::residual(matrix, &lambda, &rhs);
    let lambda = space.expand(&lambda);

    let ncell = design.n() * design.n();
    let mut explicit = vec![0.0; ncell];
    let mut total = vec![0.0; ncell];
    for e in 0..space.grid().elements().len() {
        let cell = model.cell_of_element(e);
        let ue = space.gather(e, &solution.u);
        let le = space.gather(e, &lambda);
        explicit[cell] += d_kappa[e];
        total[cell] += d_kappa[e] - space.basis().local_bilinear(&le, &ue);
    }
    for ((ex, tot), k) in explicit.iter_mut().zip(total.iter_mut()).zip(design.values()) {
        let dk = p * k.powf(p - 1.0);
        *ex *= dk;
        *tot *= dk;
    }
    Ok(EstimatorSensitivity {
        explicit: GradientField::new(design.n(), explicit, Objective::Estimator),
        total: GradientField::new(design.n(), total, Objective::Estimator),
        adjoint_residual,
        adjoint_iterations: stats.iterations,
    })
}

/// `dE_apost/dk` via the adjoint method (Q1 only).
pub fn estimator_gradient(design: &DesignField, p: f64, solution: &FemSolution, f: f64) -> Result<GradientField> {
    let system = assemble(design, p, &solution.space, solution.f)?;
    let solver = LinearSolver::for_space(&system.matrix, &solution.space, &SolverOptions::default())?;
    Ok(estimator_sensitivity(design, p, solution, f, &solver, &system.matrix)?.total)
}

/// `d(Φ_h + C E_apost)/dk`.
pub fn combined_gradient(design: &DesignField, p: f64, solution: &FemSolution, f: f64, c: f64) -> Result<GradientField> {
    if c < 0.0 {
        return Err(Error::config("optimizer.c", format!("must be >= 0, got {c}")));
    }
    let gc = compliance_gradient(design, p, solution)?;
    if c == 0.0 {
        return Ok(GradientField::new(gc.n, gc.values, Objective::Combined(0.0)));
    }
    let ge = estimator_gradient(design, p, solution, f)?;
    Ok(combine(&gc, &ge, c))
}

pub fn combine(compliance: &GradientField, estimator: &GradientField, c: f64) -> GradientField {
    let values = compliance
        .values
        .iter()
        .zip(&estimator.values)
        .map(|(a, b)| a + c * b)
        .collect();
    GradientField::new(compliance.n, values, Objective::Combined(c))
}

/// Step selection for the finite-difference oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub relative: f64,
    pub absolute_min: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            relative: 1e-6,
            absolute_min: 1e-8,
        }
    }
}

/// Central differences of `objective` per cell, one-sided where a central step would leave `[γ, 1]`.
pub fn finite_difference<F>(objective: F, design: &DesignField, step: StepRule) -> Result<GradientField>
where
    F: FnMut(&DesignField) -> Result<f64>,
{
    let cells: Vec<usize> = (0..design.values().len()).collect();
    let grad = finite_difference_cells(objective, design, step, &cells)?;
    Ok(GradientField::new(design.n(), grad, Objective::Custom))
}

/// Finite differences for the listed cells only, in the order given.
pub fn finite_difference_cells<F>(mut objective: F, design: &DesignField, step: StepRule, cells: &[usize]) -> Result<Vec<f64>>
where
    F: FnMut(&DesignField) -> Result<f64>,
{
    let base = design.values().to_vec();
    let (lo, hi) = (design.gamma(), 1.0);
    let mut grad = Vec::with_capacity(cells.len());
    let mut center = None;
    for &i in cells {
        let k = base[i];
        let d = (step.relative * k).max(step.absolute_min);
        let eval = |v: f64, objective: &mut F| {
            let mut vals = base.clone();
            vals[i] = v;
            objective(&design.with_values(vals)?)
        };
        grad.push(if k - d >= lo && k + d <= hi {
            (eval(k + d, &mut objective)? - eval(k - d, &mut objective)?) / (2.0 * d)
        } else {
            let c = match center {
                Some(c) => c,
                None => {
                    let c = objective(design)?;
                    center = Some(c);
                    c
                }
            };
            if k + d <= hi {
                log::info!("cell {i}: k = {k} near lower bound, forward difference");
                (eval(k + d, &mut objective)? - c) / d
            } else {
                log::info!("cell {i}: k = {k} near upper bound, backward difference");
                (c - eval(k - d, &mut objective)?) / d
            }
        });
    }
    Ok(grad)
}

/// Largest per-cell relative error of `analytic` against `reference`, over cells with
/// `|reference| > floor`.
pub fn max_relative_error(analytic: &GradientField, reference: &GradientField, floor: f64) -> f64 {
    analytic
        .values
        .iter()
        .zip(&reference.values)
        .filter(|(_, r)| r.abs() > floor)
        .map(|(a, r)| (a - r).abs() / r.abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::{compliance, solve, FemSpace};
    use crate::grid::{build_grid, BoundarySpec, Side};

    fn setup(n: usize) -> FemSpace {
        let b = BoundarySpec::single(Side::Left, 0.5, 0.5);
        FemSpace::new(Arc::new(build_grid(n, &b).unwrap()), 1).unwrap()
    }

    #[test]
    fn quadratic_objective() {
        let d = DesignField::new(2, vec![0.2, 0.5, 0.7, 0.9], 1e-3, 0.6).unwrap();
        let g = finite_difference(
            |x| Ok(x.values().iter().map(|v| v * v).sum()),
            &d,
            StepRule::default(),
        )
        .unwrap();
        for (gi, k) in g.values.iter().zip(d.values()) {
            assert!((gi - 2.0 * k).abs() < 1e-8);
        }
    }

    #[test]
    fn one_sided_at_bounds() {
        let d = DesignField::new(2, vec![1e-3, 1.0, 0.5, 0.5], 1e-3, 0.6).unwrap();
        let g = finite_difference(
            |x| Ok(x.values().iter().map(|v| v * v * v).sum()),
            &d,
            StepRule::default(),
        )
        .unwrap();
        assert!((g.values[0] - 3e-6).abs() < 1e-8);
        assert!((g.values[1] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn zero_state_zero_gradient() {
        let s = setup(4);
        let d = DesignField::uniform(4, 0.4, 1e-3, 0.4).unwrap();
        let sol = solve(&assemble(&d, 4.0, &s, 0.0).unwrap()).unwrap();
        assert!(compliance_gradient(&d, 4.0, &sol).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(estimator_gradient(&d, 4.0, &sol, 0.0).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compliance_gradient_is_nonpositive() {
        let s = setup(8);
        let vals = (0..64).map(|i| 0.1 + 0.8 * ((i * 37 % 64) as f64 / 64.0)).collect();
        let d = DesignField::new(8, vals, 1e-3, 0.5).unwrap();
        let sol = solve(&assemble(&d, 3.0, &s, 1e-2).unwrap()).unwrap();
        let g = compliance_gradient(&d, 3.0, &sol).unwrap();
        assert!(g.values.iter().all(|&v| v <= 0.0));
        assert!(compliance(&sol) > 0.0);
    }

    #[test]
    fn q2_estimator_gradient_is_rejected() {
        let b = BoundarySpec::single(Side::Left, 0.5, 0.5);
        let s = FemSpace::new(Arc::new(build_grid(4, &b).unwrap()), 2).unwrap();
        let d = DesignField::uniform(4, 0.4, 1e-3, 0.4).unwrap();
        let sol = solve(&assemble(&d, 4.0, &s, 1e-2).unwrap()).unwrap();
        assert!(matches!(estimator_gradient(&d, 4.0, &sol, 1e-2), Err(Error::Unsupported(_))));
    }
}
