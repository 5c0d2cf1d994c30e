//! Design loop: state solve, estimator, adjoint gradient, filter and MMA update.

mod filter;
mod mma;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use filter::sensitivity_filter;
pub use mma::{mma_update, LinearConstraint, MmaParams, MmaState};

use crate::design::{qm_value, DesignField};
use crate::error::{Error, Result};
use crate::estimator::estimate_field;
use crate::fem::{assemble, compliance, solve_prepared, FemSpace, LinearSolver, SolverOptions};
use crate::grid::{build_grid, BoundarySpec, ModelGrid};
use crate::sensitivity::{combine, compliance_gradient, estimator_sensitivity, GradientField};

/// Physical problem and discretization shared by every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    /// Design cells per side (N).
    pub model_n: usize,
    /// Computational elements per design cell per side (r); `n = r N`.
    pub ratio: usize,
    pub boundary: BoundarySpec,
    /// Uniform heat source.
    pub f: f64,
    /// Lower conductivity bound.
    pub gamma: f64,
}

impl Problem {
    pub fn new(model_n: usize, ratio: usize, boundary: BoundarySpec) -> Self {
        Problem {
            model_n,
            ratio,
            boundary,
            f: 1e-2,
            gamma: 1e-3,
        }
    }

    pub fn model(&self) -> Result<ModelGrid> {
        ModelGrid::new(self.model_n, self.ratio)
    }

    pub fn space(&self, order: usize) -> Result<FemSpace> {
        let n = self.model()?.computational_n();
        let grid = build_grid(n, &self.boundary)?;
        FemSpace::new(Arc::new(grid), order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Weight of the error estimator in `Φ_h + C E_apost`.
    pub c: f64,
    /// SIMP penalization exponent.
    pub p: f64,
    /// Volume fraction bound.
    pub volume: f64,
    pub max_iters: usize,
    pub move_limit: f64,
    /// Stop once `max |Δk|` falls below this.
    pub change_tol: f64,
    /// Sensitivity filter radius in domain units, 0 disables it.
    pub filter_radius: f64,
    /// Lagrange element order, 1 or 2.
    pub order: usize,
    pub solver: SolverOptions,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            c: 1.0,
            p: 4.0,
            volume: 0.4,
            max_iters: 400,
            move_limit: 0.2,
            change_tol: 0.01,
            filter_radius: 0.0,
            order: 1,
            solver: SolverOptions::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::config("optimizer.c", "must be finite and non-negative"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::config("optimizer.p", "must be at least 1"));
        }
        if !(self.volume > 0.0 && self.volume <= 1.0) {
            return Err(Error::config("optimizer.volume", "must lie in (0, 1]"));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::config("optimizer.move_limit", "must lie in (0, 1]"));
        }
        if !(self.change_tol >= 0.0) {
            return Err(Error::config("optimizer.change_tol", "must be non-negative"));
        }
        if !(self.filter_radius >= 0.0 && self.filter_radius.is_finite()) {
            return Err(Error::config("optimizer.filter_radius", "must be non-negative"));
        }
        if self.order != 1 && self.order != 2 {
            return Err(Error::config("optimizer.order", "must be 1 or 2"));
        }
        if self.order == 2 && self.c > 0.0 {
            return Err(Error::Unsupported(
                "estimator gradients are only available for Q1 elements; use order 1 or c = 0".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the optimization history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub phi_h: f64,
    pub e_apost: f64,
    pub phi_c: f64,
    pub volume: f64,
    pub qm: f64,
    /// `max |Δk|` from the previous design, 0 for the first record.
    pub change: f64,
    /// Linear solver iterations spent on this record (primal plus adjoint).
    pub cg_iters: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub design: DesignField,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

impl OptimizationResult {
    pub fn last(&self) -> &IterationRecord {
        self.history.last().expect("history is never empty")
    }
}

/// State quantities for one design on one space.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub phi_h: f64,
    pub e_apost: f64,
    pub eta_sq: Vec<f64>,
    pub iterations: usize,
}

/// Solves the state problem and evaluates the estimator for `design`.
pub fn evaluate(design: &DesignField, p: f64, space: &FemSpace, f: f64, solver: &SolverOptions) -> Result<Evaluation> {
    let system = assemble(design, p, space, f)?;
    let lin = LinearSolver::for_space(&system.matrix, space, solver)?;
    let sol = solve_prepared(&system, &lin)?;
    let est = estimate_field(space, &sol.coefficients, &sol.u, f)?;
    Ok(Evaluation {
        phi_h: compliance(&sol),
        e_apost: est.total,
        eta_sq: est.eta_sq,
        iterations: sol.iterations,
    })
}

/// Runs the optimizer from the uniform design `k ≡ V`.
pub fn optimize(problem: &Problem, config: &OptimizerConfig) -> Result<OptimizationResult> {
    let start = DesignField::uniform(problem.model_n, config.volume, problem.gamma, config.volume)?;
    optimize_from(problem, config, start, |_, _| {})
}

/// Runs the optimizer from `start`, calling `observer` after every recorded iteration.
pub fn optimize_from<F>(problem: &Problem, config: &OptimizerConfig, start: DesignField, mut observer: F) -> Result<OptimizationResult>
where
    F: FnMut(&IterationRecord, &DesignField),
{
    config.validate()?;
    problem.boundary.validate()?;
    if start.n() != problem.model_n {
        return Err(Error::GridMismatch(format!(
            "start design has N = {}, problem has N = {}",
            start.n(),
            problem.model_n
        )));
    }
    problem.model()?;
    let space = problem.space(config.order)?;
    let ncell = problem.model_n * problem.model_n;
    let xmin = vec![problem.gamma; ncell];
    let xmax = vec![1.0; ncell];
    let dvol = vec![1.0 / (ncell as f64 * config.volume); ncell];
    let params = MmaParams {
        move_limit: config.move_limit,
        ..MmaParams::default()
    };
    let mut state = MmaState::new();
    let mut scale = None;
    let mut design = start;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut previous: Option<DesignField> = None;
    let mut converged = false;

    for iter in 0..=config.max_iters {
        let system = assemble(&design, config.p, &space, problem.f)?;
        let solver = LinearSolver::for_space(&system.matrix, &space, &config.solver)?;
        let sol = solve_prepared(&system, &solver)?;
        let phi_h = compliance(&sol);
        let est = estimate_field(&space, &sol.coefficients, &sol.u, problem.f)?;
        let change = previous.as_ref().map_or(0.0, |p| design.max_change(p));
        let mut record = IterationRecord {
            iter,
            phi_h,
            e_apost: est.total,
            phi_c: phi_h + config.c * est.total,
            volume: design.volume(),
            qm: qm_value(&design).unwrap_or(0.0),
            change,
            cg_iters: sol.iterations,
        };
        let stop = iter == config.max_iters || (iter > 0 && change < config.change_tol);
        if stop {
            converged = iter > 0 && change < config.change_tol;
            history.push(record);
            observer(&record, &design);
            break;
        }

        let mut gradient = compliance_gradient(&design, config.p, &sol)?;
        if config.c > 0.0 {
            let sens = estimator_sensitivity(&design, config.p, &sol, problem.f, &solver, &system.matrix)?;
            record.cg_iters += sens.adjoint_iterations;
            gradient = combine(&gradient, &sens.total, config.c);
        }
        history.push(record);
        observer(&record, &design);
        if !gradient.is_finite() {
            return Err(Error::InvalidDesign(format!("non-finite gradient at iteration {iter}")));
        }
        if config.filter_radius > 0.0 {
            gradient = sensitivity_filter(&design, &gradient, config.filter_radius);
        }

        let s = *scale.get_or_insert_with(|| {
            let f0 = record.phi_c.abs();
            if f0 > 0.0 { 1.0 / f0 } else { 1.0 }
        });
        let scaled: Vec<f64> = gradient.values.iter().map(|g| g * s).collect();
        let constraint = LinearConstraint {
            value: design.volume() / config.volume - 1.0,
            gradient: &dvol,
        };
        let next = mma_update(design.values(), &xmin, &xmax, &scaled, constraint, &mut state, &params)?;
        let next = next
            .into_iter()
            .map(|v| v.clamp(problem.gamma, 1.0))
            .collect();
        let next = design.with_values(next)?;
        previous = Some(std::mem::replace(&mut design, next));
        log::debug!(
            "iter {iter}: phi_h {:.6e} e_apost {:.6e} change {:.4}",
            record.phi_h,
            record.e_apost,
            record.change
        );
    }
    Ok(OptimizationResult {
        design,
        history,
        converged,
    })
}

/// One MMA step on a design with the volume constraint `mean(k) ≤ V`.
pub fn mma_step(design: &DesignField, gradient: &GradientField, state: &mut MmaState, params: &MmaParams) -> Result<DesignField> {
    if gradient.n != design.n() {
        return Err(Error::GridMismatch("gradient and design sizes differ".into()));
    }
    let ncell = design.n() * design.n();
    let v = design.volume_target();
    let dvol = vec![1.0 / (ncell as f64 * v); ncell];
    let next = mma_update(
        design.values(),
        &vec![design.gamma(); ncell],
        &vec![1.0; ncell],
        &gradient.values,
        LinearConstraint {
            value: design.volume() / v - 1.0,
            gradient: &dvol,
        },
        state,
        params,
    )?;
    design.with_values(next.into_iter().map(|x| x.clamp(design.gamma(), 1.0)).collect())
}
