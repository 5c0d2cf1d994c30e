//! Linear solvers for the reduced SPD stiffness systems.
//!
//! Row-major DOF numbering on a structured grid keeps the bandwidth at one grid row, so a band
//! Cholesky factorization is both exact and cheap on the model-size grids used inside the
//! optimization loop. Large verification grids use multigrid-preconditioned CG.

use serde::{Deserialize, Serialize};

use super::multigrid::Multigrid;
use super::sparse::{dot, norm, CsrMatrix};
use super::FemSpace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Band Cholesky when the band fits in `direct_limit` entries, multigrid CG otherwise.
    #[default]
    Auto,
    Direct,
    /// Jacobi-preconditioned CG.
    Cg,
    /// CG preconditioned by a geometric multigrid V-cycle (Q1 only, Jacobi otherwise).
    Multigrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Relative residual target `‖A u - b‖ / ‖b‖` for CG.
    pub rel_tol: f64,
    /// CG iteration cap is `iter_factor * sqrt(dofs)`.
    pub iter_factor: f64,
    /// Maximum number of stored band entries for the automatic direct path.
    pub direct_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kind: SolverKind::Auto,
            rel_tol: 1e-10,
            iter_factor: 50.0,
            direct_limit: 25_000_000,
        }
    }
}

/// Outcome of one right-hand side solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Lower-triangular band factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` stores `L[i][i - bw ..= i]`.
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        let bw = a.pattern().lower_bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        let p = a.pattern();
        for i in 0..n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                if j <= i {
                    data[i * w + (j + bw - i)] = a.values()[k];
                }
            }
        }
        for i in 0..n {
            let jlo = i.saturating_sub(bw);
            for j in jlo..=i {
                let klo = jlo.max(j.saturating_sub(bw));
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                let mut s = data[ri + j];
                let li = &data[ri + klo..ri + j];
                let lj = &data[rj + klo..rj + j];
                s -= li.iter().zip(lj).map(|(x, y)| x * y).sum::<f64>();
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    data[ri + i] = s.sqrt();
                } else {
                    data[ri + j] = s / data[rj + j];
                }
            }
        }
        Ok(BandCholesky { n, bw, data })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let jlo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let s: f64 = self.data[ri + jlo..ri + i]
                .iter()
                .zip(&y[jlo..i])
                .map(|(l, v)| l * v)
                .sum();
            y[i] = (y[i] - s) / self.data[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * w + bw - i;
            y[i] /= self.data[ri + i];
            let yi = y[i];
            let jlo = i.saturating_sub(bw);
            for (j, l) in (jlo..i).zip(&self.data[ri + jlo..ri + i]) {
                y[j] -= l * yi;
            }
        }
        y
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    pcg_with(a, b, rel_tol, max_iter, |r| {
        r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect()
    })
}

/// Preconditioned conjugate gradients with a symmetric positive definite preconditioner.
pub fn pcg_with<P>(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize, precond: P) -> Result<(Vec<f64>, SolveStats)>
where
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.mul_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / bnorm;
        if rel <= rel_tol {
            // report the true residual, not the recurrence; it cannot drop below roundoff
            let res = residual(a, &x, b);
            let floor = attainable_residual(a, &x, bnorm);
            if res <= rel_tol.max(floor) {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it,
                        residual: res,
                    },
                ));
            }
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverNotConverged {
        iterations: max_iter,
        residual: residual(a, &x, b),
    })
}

/// Roundoff level of a computed relative residual, `c ε ‖|A| |x|‖ / ‖b‖`.
fn attainable_residual(a: &CsrMatrix, x: &[f64], bnorm: f64) -> f64 {
    let p = a.pattern();
    let mut s = 0.0;
    let mut width = 0usize;
    for i in 0..p.nrows() {
        let (lo, hi) = (p.row_ptr[i], p.row_ptr[i + 1]);
        width = width.max(hi - lo);
        let t: f64 = (lo..hi).map(|k| (a.values()[k] * x[p.cols[k]]).abs()).sum();
        s += t * t;
    }
    width as f64 * f64::EPSILON * s.sqrt() / bnorm
}

/// `‖A x - b‖ / ‖b‖` (or `‖A x‖` when `b = 0`).
pub fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul(x);
    let r: f64 = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let bn = norm(b);
    if bn > 0.0 {
        r / bn
    } else {
        r
    }
}

enum Method<'a> {
    Direct(BandCholesky),
    Cg { max_iter: usize, rel_tol: f64 },
    Multigrid { mg: Multigrid<'a>, max_iter: usize, rel_tol: f64 },
}

/// A solver prepared for one matrix; primal and adjoint solves share it (and its factorization).
pub struct LinearSolver<'a> {
    matrix: &'a CsrMatrix,
    method: Method<'a>,
}

impl<'a> LinearSolver<'a> {
    /// Prepares a solver without geometric information (no multigrid).
    pub fn new(matrix: &'a CsrMatrix, opts: &SolverOptions) -> Result<Self> {
        Self::build(matrix, None, opts)
    }

    /// Prepares a solver for a matrix assembled on `space`, enabling the multigrid path.
    pub fn for_space(matrix: &'a CsrMatrix, space: &FemSpace, opts: &SolverOptions) -> Result<Self> {
        Self::build(matrix, Some(space), opts)
    }

    fn build(matrix: &'a CsrMatrix, space: Option<&FemSpace>, opts: &SolverOptions) -> Result<Self> {
        let n = matrix.nrows();
        let band_entries = n.saturating_mul(matrix.pattern().lower_bandwidth() + 1);
        let max_iter = ((opts.iter_factor * (n as f64).sqrt()).ceil() as usize).max(10);
        let rel_tol = opts.rel_tol;
        let hierarchy = || space.and_then(|s| s.hierarchy());
        let method = match opts.kind {
            SolverKind::Direct => Method::Direct(BandCholesky::factor(matrix)?),
            SolverKind::Cg => Method::Cg { max_iter, rel_tol },
            SolverKind::Multigrid => match hierarchy() {
                Some(h) => Method::Multigrid {
                    mg: Multigrid::new(h, matrix)?,
                    max_iter,
                    rel_tol,
                },
                None => Method::Cg { max_iter, rel_tol },
            },
            SolverKind::Auto => {
                if band_entries <= opts.direct_limit {
                    Method::Direct(BandCholesky::factor(matrix)?)
                } else if let Some(h) = hierarchy() {
                    Method::Multigrid {
                        mg: Multigrid::new(h, matrix)?,
                        max_iter,
                        rel_tol,
                    }
                } else {
                    Method::Cg { max_iter, rel_tol }
                }
            }
        };
        Ok(LinearSolver { matrix, method })
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.method, Method::Direct(_))
    }

    pub fn is_multigrid(&self) -> bool {
        matches!(self.method, Method::Multigrid { .. })
    }

    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        match &self.method {
            Method::Direct(chol) => {
                let x = chol.solve(b);
                let res = residual(self.matrix, &x, b);
                Ok((
                    x,
                    SolveStats {
                        iterations: 0,
                        residual: res,
                    },
                ))
            }
            Method::Cg { max_iter, rel_tol } => pcg(self.matrix, b, *rel_tol, *max_iter),
            Method::Multigrid { mg, max_iter, rel_tol } => {
                pcg_with(self.matrix, b, *rel_tol, *max_iter, |r| mg.apply(r))
            }
        }
    }
}
