//! Residual a posteriori error estimator for piecewise-constant coefficients.
//!
//! For each element `T` with coefficient `κ_T = k^p`:
//!
//! ```text
//! η_T² = h²/κ_T ‖f + ∇·κ∇u_h‖²_T + Σ_{E ⊂ ∂T \ Γ_u} h/κ_E ‖[κ∇u_h]_E‖²_E
//! ```
//!
//! with `κ_E` the sum of the coefficients of the elements sharing `E`. Interior edges appear in
//! the sums of both neighbours, so they are counted twice in the global total.

use crate::design::DesignField;
use crate::error::{Error, Result};
use crate::fem::{element_coefficients, FemSolution, FemSpace};
use crate::grid::{EdgeTag, Side};

/// Per-element estimator contributions and their totals.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBreakdown {
    pub eta_sq: Vec<f64>,
    /// `E_apost = Σ_T η_T²`.
    pub total: f64,
    pub interior_part: f64,
    /// Edge terms as they enter `total` (interior edges twice).
    pub jump_part: f64,
    /// Edge terms with every edge counted once; diagnostic only.
    pub jump_part_single: f64,
}

/// Flux jump data on one non-Dirichlet edge.
#[derive(Debug, Clone)]
pub(crate) struct EdgeSample {
    /// Adjacent elements and the side of each they touch; `count` entries are valid.
    pub adjacent: [(usize, Side); 2],
    pub count: usize,
    /// `+1` for interior edges, `-1` for Neumann edges.
    pub sign: f64,
    /// Physical outward normal derivative of `u_h` inside each adjacent element, per point.
    pub dn: [[f64; 3]; 2],
    pub jump: [f64; 3],
    pub nq: usize,
    pub kappa_edge: f64,
    /// `∫_E J²`.
    pub integral: f64,
}

pub(crate) fn edge_sample(
    space: &FemSpace,
    coefficients: &[f64],
    u: &[f64],
    edge: usize,
) -> Result<EdgeSample> {
    let grid = space.grid();
    let ed = grid.edges()[edge];
    if ed.tag == EdgeTag::Dirichlet {
        return Err(Error::DirichletEdge(edge));
    }
    let basis = space.basis();
    let h = grid.h();
    let nq = basis.edge_weights().len();
    let mut adjacent = [(0, Side::Bottom); 2];
    let mut dn = [[0.0; 3]; 2];
    let mut count = 0;
    for (e, side) in ed.adjacent() {
        adjacent[count] = (e, side);
        let ue = space.gather(e, u);
        for (q, slot) in dn[count].iter_mut().enumerate().take(nq) {
            let d = basis.side_normal_derivative(side, q);
            *slot = d.iter().zip(&ue).map(|(a, b)| a * b).sum::<f64>() / h;
        }
        count += 1;
    }
    let sign = if ed.tag == EdgeTag::Interior { 1.0 } else { -1.0 };
    let kappa_edge: f64 = adjacent[..count].iter().map(|&(e, _)| coefficients[e]).sum();
    let mut jump = [0.0; 3];
    let mut integral = 0.0;
    for q in 0..nq {
        jump[q] = sign
            * (0..count)
                .map(|t| coefficients[adjacent[t].0] * dn[t][q])
                .sum::<f64>();
        integral += h * basis.edge_weights()[q] * jump[q] * jump[q];
    }
    Ok(EdgeSample {
        adjacent,
        count,
        sign,
        dn,
        jump,
        nq,
        kappa_edge,
        integral,
    })
}

/// Samples of `[κ∇u_h]_E` at the edge quadrature points (ordered along the edge).
pub fn edge_jump(space: &FemSpace, coefficients: &[f64], u: &[f64], edge: usize) -> Result<Vec<f64>> {
    let s = edge_sample(space, coefficients, u, edge)?;
    Ok(s.jump[..s.nq].to_vec())
}

/// `h²/κ_T ‖f + κ_T Δu_h‖²_T` for one element.
pub(crate) fn interior_term(space: &FemSpace, kappa: f64, u_local: &[f64], f: f64) -> f64 {
    let basis = space.basis();
    let h = space.grid().h();
    let mut integral = 0.0;
    for (q, w) in basis.interior_weights().iter().enumerate() {
        let lap: f64 = basis
            .interior_laplacian(q)
            .iter()
            .zip(u_local)
            .map(|(l, v)| l * v)
            .sum::<f64>()
            / (h * h);
        let r = f + kappa * lap;
        integral += w * r * r;
    }
    h * h / kappa * integral * h * h
}

/// Estimator for an arbitrary field `u` in `space` with element coefficients `κ`.
pub fn estimate_field(space: &FemSpace, coefficients: &[f64], u: &[f64], f: f64) -> Result<ErrorBreakdown> {
    let grid = space.grid();
    if coefficients.len() != grid.elements().len() || u.len() != space.ndof() {
        return Err(Error::GridMismatch(format!(
            "estimator got {} coefficients and {} DOF values for a grid with {} elements and {} DOFs",
            coefficients.len(),
            u.len(),
            grid.elements().len(),
            space.ndof()
        )));
    }
    let h = grid.h();
    let mut eta_sq: Vec<f64> = (0..grid.elements().len())
        .map(|e| interior_term(space, coefficients[e], &space.gather(e, u), f))
        .collect();
    let interior_part: f64 = eta_sq.iter().sum();

    let mut jump_part = 0.0;
    let mut jump_part_single = 0.0;
    for (i, ed) in grid.edges().iter().enumerate() {
        if ed.tag == EdgeTag::Dirichlet {
            continue;
        }
        let s = edge_sample(space, coefficients, u, i)?;
        let c = h / s.kappa_edge * s.integral;
        for &(e, _) in &s.adjacent[..s.count] {
            eta_sq[e] += c;
            jump_part += c;
        }
        jump_part_single += c;
    }
    Ok(ErrorBreakdown {
        total: eta_sq.iter().sum(),
        eta_sq,
        interior_part,
        jump_part,
        jump_part_single,
    })
}

/// `E_apost(k; u_h)` using the penalized coefficient `k^p` of the solved equation.
pub fn estimate(design: &DesignField, p: f64, solution: &FemSolution, f: f64) -> Result<ErrorBreakdown> {
    let coefficients = element_coefficients(design, p, solution.space.grid())?;
    if coefficients.as_slice() != solution.coefficients.as_slice() {
        return Err(Error::GridMismatch(
            "solution was not computed for this design and penalization".into(),
        ));
    }
    estimate_field(&solution.space, &coefficients, &solution.u, f)
}
