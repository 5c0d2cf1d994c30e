//! Conforming Q1/Q2 finite elements for `-∇·(k^p ∇u) = f` with `u = 0` on Γ_u.

pub mod basis;
mod multigrid;
pub mod solver;
pub mod sparse;

use std::sync::{Arc, OnceLock};

use multigrid::Hierarchy;

use crate::design::DesignField;
use crate::error::{Error, Result};
use crate::grid::{ModelGrid, StructuredGrid};

pub use basis::{element_stiffness, ElementBasis};
pub use solver::{LinearSolver, SolveStats, SolverKind, SolverOptions};
pub use sparse::{CsrMatrix, CsrPattern};

const NONE: usize = usize::MAX;

#[derive(Debug)]
struct SpaceData {
    grid: Arc<StructuredGrid>,
    basis: ElementBasis,
    order: usize,
    /// DOFs per side of the DOF lattice, `order * n + 1`.
    side: usize,
    dirichlet: Vec<bool>,
    free_index: Vec<usize>,
    free_dofs: Vec<usize>,
    pattern: Arc<CsrPattern>,
    /// Per element, `nloc^2` positions into the reduced matrix values (`NONE` if eliminated).
    scatter: Vec<usize>,
    hierarchy: OnceLock<Option<Arc<Hierarchy>>>,
}

/// Lagrange space of order 1 or 2 on a structured grid. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct FemSpace {
    data: Arc<SpaceData>,
}

impl FemSpace {
    pub fn new(grid: Arc<StructuredGrid>, order: usize) -> Result<Self> {
        if order != 1 && order != 2 {
            return Err(Error::Unsupported(format!(
                "element order {order} (only 1 and 2 are available)"
            )));
        }
        let n = grid.n();
        let side = order * n + 1;
        let ndof = side * side;
        let step = 1.0 / (order * n) as f64;
        let dirichlet: Vec<bool> = (0..ndof)
            .map(|d| {
                let (i, j) = (d % side, d / side);
                grid.boundary()
                    .is_dirichlet_point(i as f64 * step, j as f64 * step)
            })
            .collect();
        let mut free_index = vec![NONE; ndof];
        let mut free_dofs = Vec::with_capacity(ndof);
        for d in 0..ndof {
            if !dirichlet[d] {
                free_index[d] = free_dofs.len();
                free_dofs.push(d);
            }
        }

        let basis = ElementBasis::new(order);
        let nloc = basis.nloc();
        let element_dofs = |e: usize| element_dofs_raw(n, order, side, e);

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); free_dofs.len()];
        for e in 0..n * n {
            let dofs = element_dofs(e);
            for &a in &dofs {
                let fa = free_index[a];
                if fa == NONE {
                    continue;
                }
                rows[fa].extend(dofs.iter().map(|&b| free_index[b]).filter(|&fb| fb != NONE));
            }
        }
        let pattern = Arc::new(CsrPattern::from_rows(rows));

        let mut scatter = Vec::with_capacity(n * n * nloc * nloc);
        for e in 0..n * n {
            let dofs = element_dofs(e);
            for &a in &dofs {
                for &b in &dofs {
                    let (fa, fb) = (free_index[a], free_index[b]);
                    scatter.push(if fa == NONE || fb == NONE {
                        NONE
                    } else {
                        pattern.position(fa, fb).expect("pattern covers element couplings")
                    });
                }
            }
        }

        Ok(FemSpace {
            data: Arc::new(SpaceData {
                grid,
                basis,
                order,
                side,
                dirichlet,
                free_index,
                free_dofs,
                pattern,
                scatter,
                hierarchy: OnceLock::new(),
            }),
        })
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.data.grid
    }

    pub fn grid_arc(&self) -> Arc<StructuredGrid> {
        self.data.grid.clone()
    }

    pub fn order(&self) -> usize {
        self.data.order
    }

    pub fn basis(&self) -> &ElementBasis {
        &self.data.basis
    }

    pub fn ndof(&self) -> usize {
        self.data.side * self.data.side
    }

    pub fn nfree(&self) -> usize {
        self.data.free_dofs.len()
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.data.dirichlet[dof]
    }

    pub fn dirichlet_dofs(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.ndof()).filter(|&d| self.data.dirichlet[d])
    }

    /// Reduced index of a global DOF, `None` if constrained.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        let f = self.data.free_index[dof];
        (f != NONE).then_some(f)
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.data.free_dofs
    }

    /// Coordinates of a global DOF.
    pub fn dof_coords(&self, dof: usize) -> [f64; 2] {
        let step = 1.0 / (self.data.order * self.grid().n()) as f64;
        [
            (dof % self.data.side) as f64 * step,
            (dof / self.data.side) as f64 * step,
        ]
    }

    /// Global DOFs of an element in local tensor order.
    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        element_dofs_raw(self.grid().n(), self.data.order, self.data.side, e)
    }

    pub fn gather(&self, e: usize, u: &[f64]) -> Vec<f64> {
        self.element_dofs(e).into_iter().map(|d| u[d]).collect()
    }

    /// Reduced vector → full vector with zeros on Γ_u.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.ndof()];
        for (f, &d) in self.data.free_dofs.iter().enumerate() {
            full[d] = reduced[f];
        }
        full
    }

    /// Full vector → reduced vector (constrained entries dropped).
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.data.free_dofs.iter().map(|&d| full[d]).collect()
    }

    /// Unreduced load vector `∫ f φ_i` for constant `f`.
    pub fn load_vector(&self, f: f64) -> Vec<f64> {
        let h = self.grid().h();
        let w = self.basis().load_weights();
        let mut b = vec![0.0; self.ndof()];
        for e in 0..self.grid().elements().len() {
            for (a, d) in self.element_dofs(e).into_iter().enumerate() {
                b[d] += f * h * h * w[a];
            }
        }
        b
    }

    /// Evaluates a finite element function at `(x, y)`.
    pub fn evaluate(&self, u: &[f64], x: f64, y: f64) -> f64 {
        let n = self.grid().n();
        let locate = |t: f64| {
            let s = t * n as f64;
            let c = (s.floor() as usize).min(n - 1);
            (c, s - c as f64)
        };
        let (col, xi) = locate(x);
        let (row, eta) = locate(y);
        let e = row * n + col;
        self.basis()
            .values_at(xi, eta)
            .iter()
            .zip(self.element_dofs(e))
            .map(|(v, d)| v * u[d])
            .sum()
    }

    /// Interpolates `u` from `coarse` into this space. Exact when the coarse space is nested
    /// in this one (same or finer grid, same or higher order).
    pub fn interpolate_from(&self, coarse: &FemSpace, u: &[f64]) -> Result<Vec<f64>> {
        let (nc, nf) = (coarse.grid().n(), self.grid().n());
        if nf % nc != 0 || self.order() < coarse.order() {
            return Err(Error::GridMismatch(format!(
                "space Q{} on n={nc} is not nested in Q{} on n={nf}",
                coarse.order(),
                self.order()
            )));
        }
        Ok((0..self.ndof())
            .map(|d| {
                let [x, y] = self.dof_coords(d);
                coarse.evaluate(u, x, y)
            })
            .collect())
    }

    pub(crate) fn scatter(&self, e: usize) -> &[usize] {
        let nloc = self.basis().nloc();
        &self.data.scatter[e * nloc * nloc..(e + 1) * nloc * nloc]
    }

    /// Coarse-level transfers for the multigrid preconditioner, built on first use.
    pub(crate) fn hierarchy(&self) -> Option<Arc<Hierarchy>> {
        self.data
            .hierarchy
            .get_or_init(|| Hierarchy::build(self).ok().flatten().map(Arc::new))
            .clone()
    }

    pub(crate) fn pattern(&self) -> Arc<CsrPattern> {
        self.data.pattern.clone()
    }

    /// `a(v, w) = Σ_e κ_e v_e^T K⁰ w_e` over full vectors.
    pub fn bilinear(&self, coefficients: &[f64], v: &[f64], w: &[f64]) -> f64 {
        (0..coefficients.len())
            .map(|e| {
                coefficients[e] * self.basis().local_bilinear(&self.gather(e, v), &self.gather(e, w))
            })
            .sum()
    }

    pub fn same_as(&self, other: &FemSpace) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
            || (self.order() == other.order()
                && self.grid().n() == other.grid().n()
                && self.grid().boundary() == other.grid().boundary())
    }
}

fn element_dofs_raw(n: usize, order: usize, side: usize, e: usize) -> Vec<usize> {
    let (row, col) = (e / n, e % n);
    let k = order + 1;
    (0..k * k)
        .map(|a| (order * row + a / k) * side + order * col + a % k)
        .collect()
}

/// Penalized conductivity `k^p` of each computational element.
pub fn element_coefficients(design: &DesignField, p: f64, grid: &StructuredGrid) -> Result<Vec<f64>> {
    let model = ModelGrid::nested(design.n(), grid.n())?;
    let cell_coef: Vec<f64> = design.values().iter().map(|k| k.powf(p)).collect();
    Ok((0..grid.elements().len())
        .map(|e| cell_coef[model.cell_of_element(e)])
        .collect())
}

/// Reduced linear system `A u = b` over the free DOFs.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub space: FemSpace,
    pub matrix: CsrMatrix,
    /// Reduced load.
    pub load: Vec<f64>,
    /// Unreduced load, used for `ℓ(u)`.
    pub load_full: Arc<Vec<f64>>,
    /// `k^p` per computational element.
    pub coefficients: Arc<Vec<f64>>,
    pub p: f64,
    pub f: f64,
}

/// Assembles `Σ_e k_{cell(e)}^p K⁰` and `∫ f φ` with Γ_u DOFs eliminated.
pub fn assemble(design: &DesignField, p: f64, space: &FemSpace, f: f64) -> Result<AssembledSystem> {
    if p < 1.0 {
        return Err(Error::InvalidDesign(format!("penalization {p} < 1")));
    }
    let coefficients = element_coefficients(design, p, space.grid())?;
    let k0 = space.basis().stiffness();
    let mut matrix = CsrMatrix::zeros(space.pattern());
    {
        let values = matrix.values_mut();
        for (e, &kappa) in coefficients.iter().enumerate() {
            for (pos, &k) in space.scatter(e).iter().zip(k0) {
                if *pos != NONE {
                    values[*pos] += kappa * k;
                }
            }
        }
    }
    let load_full = space.load_vector(f);
    let load = space.restrict(&load_full);
    Ok(AssembledSystem {
        space: space.clone(),
        matrix,
        load,
        load_full: Arc::new(load_full),
        coefficients: Arc::new(coefficients),
        p,
        f,
    })
}

/// Discrete temperature field `u_h` tied to the system it solves.
#[derive(Debug, Clone)]
pub struct FemSolution {
    pub space: FemSpace,
    /// Full DOF vector, exactly zero on Γ_u.
    pub u: Vec<f64>,
    pub load_full: Arc<Vec<f64>>,
    pub coefficients: Arc<Vec<f64>>,
    pub p: f64,
    pub f: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl FemSolution {
    pub fn reduced(&self) -> Vec<f64> {
        self.space.restrict(&self.u)
    }

    /// `a_k(u_h, u_h)`.
    pub fn energy(&self) -> f64 {
        self.space.bilinear(&self.coefficients, &self.u, &self.u)
    }
}

pub fn solve(system: &AssembledSystem) -> Result<FemSolution> {
    solve_with(system, &SolverOptions::default())
}

pub fn solve_with(system: &AssembledSystem, opts: &SolverOptions) -> Result<FemSolution> {
    let solver = LinearSolver::for_space(&system.matrix, &system.space, opts)?;
    solve_prepared(system, &solver)
}

/// Solves with an already prepared solver so an adjoint solve can reuse it.
pub fn solve_prepared(system: &AssembledSystem, solver: &LinearSolver<'_>) -> Result<FemSolution> {
    let (x, stats) = solver.solve(&system.load)?;
    Ok(FemSolution {
        space: system.space.clone(),
        u: system.space.expand(&x),
        load_full: system.load_full.clone(),
        coefficients: system.coefficients.clone(),
        p: system.p,
        f: system.f,
        residual: stats.residual,
        iterations: stats.iterations,
    })
}

/// Discrete compliance `Φ_h = ℓ(u_h) = b^T u`.
pub fn compliance(solution: &FemSolution) -> f64 {
    sparse::dot(&solution.load_full, &solution.u)
}
