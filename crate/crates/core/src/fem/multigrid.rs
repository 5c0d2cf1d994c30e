//! Geometric multigrid preconditioner for Q1 systems on nested grids.
//!
//! Coarse operators are Galerkin products `Pᵀ A P` with bilinear prolongation, so coefficient
//! jumps aligned with coarse element boundaries are represented exactly. Smoothing is
//! symmetric Gauss-Seidel and the coarsest level is factored directly.

use std::sync::Arc;

use super::solver::BandCholesky;
use super::sparse::{CsrMatrix, CsrPattern};
use super::FemSpace;
use crate::error::Result;
use crate::grid::build_grid;

/// Coarsening stops once a level has at most this many free DOFs.
const COARSE_DOFS: usize = 20_000;
const SWEEPS: usize = 2;

/// Fine-to-coarse transfer between two consecutive levels, stored by fine row.
#[derive(Debug)]
struct Transfer {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    w: Vec<f64>,
    ncoarse: usize,
    coarse_pattern: Arc<CsrPattern>,
}

impl Transfer {
    fn build(fine: &FemSpace, coarse: &FemSpace) -> Self {
        let nf = fine.grid().n();
        let sf = nf + 1;
        let sc = nf / 2 + 1;
        let mut ptr = vec![0];
        let mut idx = Vec::new();
        let mut w = Vec::new();
        let split = |i: usize| -> Vec<(usize, f64)> {
            if i.is_multiple_of(2) {
                vec![(i / 2, 1.0)]
            } else {
                vec![(i / 2, 0.5), (i / 2 + 1, 0.5)]
            }
        };
        for &d in fine.free_dofs() {
            let (i, j) = (d % sf, d / sf);
            for (ci, wx) in split(i) {
                for &(cj, wy) in &split(j) {
                    if let Some(c) = coarse.free_index(cj * sc + ci) {
                        idx.push(c);
                        w.push(wx * wy);
                    }
                }
            }
            ptr.push(idx.len());
        }
        Transfer {
            ptr,
            idx,
            w,
            ncoarse: coarse.nfree(),
            coarse_pattern: coarse.pattern(),
        }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.ptr[i]..self.ptr[i + 1];
        self.idx[r.clone()].iter().copied().zip(self.w[r].iter().copied())
    }

    /// `Pᵀ A P`.
    fn galerkin(&self, a: &CsrMatrix) -> CsrMatrix {
        let mut ac = CsrMatrix::zeros(self.coarse_pattern.clone());
        let pat = a.pattern();
        let cp = self.coarse_pattern.clone();
        let vals = ac.values_mut();
        for i in 0..pat.nrows() {
            for k in pat.row_ptr[i]..pat.row_ptr[i + 1] {
                let j = pat.cols[k];
                let aij = a.values()[k];
                for (ci, wi) in self.row(i) {
                    for (cj, wj) in self.row(j) {
                        let pos = cp.position(ci, cj).expect("Galerkin product stays in the coarse stencil");
                        vals[pos] += wi * aij * wj;
                    }
                }
            }
        }
        ac
    }

    fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncoarse];
        for (i, v) in fine.iter().enumerate() {
            for (c, w) in self.row(i) {
                out[c] += w * v;
            }
        }
        out
    }

    fn prolong_add(&self, coarse: &[f64], fine: &mut [f64]) {
        for (i, v) in fine.iter_mut().enumerate() {
            *v += self.row(i).map(|(c, w)| w * coarse[c]).sum::<f64>();
        }
    }
}

/// Matrix-independent part of the hierarchy, cached per space.
#[derive(Debug)]
pub(crate) struct Hierarchy {
    transfers: Vec<Transfer>,
}

impl Hierarchy {
    /// `None` when the space cannot be coarsened at least once.
    pub(crate) fn build(space: &FemSpace) -> Result<Option<Self>> {
        Self::build_until(space, COARSE_DOFS)
    }

    fn build_until(space: &FemSpace, coarse_dofs: usize) -> Result<Option<Self>> {
        if space.order() != 1 {
            return Ok(None);
        }
        let mut transfers = Vec::new();
        let mut fine = space.clone();
        loop {
            let n = fine.grid().n();
            if fine.nfree() <= coarse_dofs || !n.is_multiple_of(2) || n < 4 {
                break;
            }
            let boundary = fine.grid().boundary().clone();
            if boundary.check_snaps(n / 2).is_err() {
                break;
            }
            let coarse = FemSpace::new(Arc::new(build_grid(n / 2, &boundary)?), 1)?;
            transfers.push(Transfer::build(&fine, &coarse));
            fine = coarse;
        }
        Ok((!transfers.is_empty()).then_some(Hierarchy { transfers }))
    }
}

/// Multigrid V-cycle bound to one fine matrix.
pub(crate) struct Multigrid<'a> {
    hierarchy: Arc<Hierarchy>,
    fine: &'a CsrMatrix,
    coarse: Vec<CsrMatrix>,
    direct: BandCholesky,
}

impl<'a> Multigrid<'a> {
    pub(crate) fn new(hierarchy: Arc<Hierarchy>, fine: &'a CsrMatrix) -> Result<Self> {
        let mut coarse: Vec<CsrMatrix> = Vec::with_capacity(hierarchy.transfers.len());
        for t in &hierarchy.transfers {
            let a = coarse.last().unwrap_or(fine);
            let ac = t.galerkin(a);
            coarse.push(ac);
        }
        let direct = BandCholesky::factor(coarse.last().expect("at least one coarse level"))?;
        Ok(Multigrid {
            hierarchy,
            fine,
            coarse,
            direct,
        })
    }

    fn matrix(&self, level: usize) -> &CsrMatrix {
        if level == 0 {
            self.fine
        } else {
            &self.coarse[level - 1]
        }
    }

    /// Applies one V-cycle to `b` from a zero initial guess.
    pub(crate) fn apply(&self, b: &[f64]) -> Vec<f64> {
        self.cycle(0, b)
    }

    fn cycle(&self, level: usize, b: &[f64]) -> Vec<f64> {
        if level == self.hierarchy.transfers.len() {
            return self.direct.solve(b);
        }
        let a = self.matrix(level);
        let mut x = vec![0.0; b.len()];
        for _ in 0..SWEEPS {
            gauss_seidel(a, b, &mut x, false);
        }
        let ax = a.mul(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
        let t = &self.hierarchy.transfers[level];
        let xc = self.cycle(level + 1, &t.restrict(&r));
        t.prolong_add(&xc, &mut x);
        for _ in 0..SWEEPS {
            gauss_seidel(a, b, &mut x, true);
        }
        x
    }
}

fn gauss_seidel(a: &CsrMatrix, b: &[f64], x: &mut [f64], backward: bool) {
    let p = a.pattern();
    let vals = a.values();
    let mut step = |i: usize| {
        let mut s = b[i];
        let mut diag = 0.0;
        for k in p.row_ptr[i]..p.row_ptr[i + 1] {
            let j = p.cols[k];
            if j == i {
                diag = vals[k];
            } else {
                s -= vals[k] * x[j];
            }
        }
        x[i] = s / diag;
    };
    if backward {
        (0..b.len()).rev().for_each(&mut step);
    } else {
        (0..b.len()).for_each(&mut step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::grid::{BoundarySpec, Side};
    use crate::DesignField;

    #[test]
    fn galerkin_matches_rediscretization_for_aligned_coefficients() {
        let b = BoundarySpec::single(Side::Left, 0.5, 0.5);
        let fine = FemSpace::new(Arc::new(build_grid(8, &b).unwrap()), 1).unwrap();
        let coarse = FemSpace::new(Arc::new(build_grid(4, &b).unwrap()), 1).unwrap();
        let vals: Vec<f64> = (0..16).map(|i| 0.05 + 0.06 * i as f64).collect();
        let d = DesignField::new(4, vals, 1e-3, 0.5).unwrap();
        let af = assemble(&d, 3.0, &fine, 1.0).unwrap().matrix;
        let ac = assemble(&d, 3.0, &coarse, 1.0).unwrap().matrix;
        let g = Transfer::build(&fine, &coarse).galerkin(&af);
        for (x, y) in g.values().iter().zip(ac.values()) {
            assert!((x - y).abs() < 1e-14, "{x} vs {y}");
        }
    }

    #[test]
    fn preconditioned_cg_matches_direct_on_high_contrast() {
        use crate::fem::solver::{pcg_with, BandCholesky};
        let b = BoundarySpec::single(Side::Left, 0.5, 0.25);
        let space = FemSpace::new(Arc::new(build_grid(32, &b).unwrap()), 1).unwrap();
        let vals: Vec<f64> = (0..64)
            .map(|e| if (e / 8 + e % 8) % 2 == 0 { 0.9 } else { 1e-3 })
            .collect();
        let d = DesignField::new(8, vals, 1e-3, 0.5).unwrap();
        let sys = assemble(&d, 4.0, &space, 1e-2).unwrap();
        let h = Arc::new(Hierarchy::build_until(&space, 30).unwrap().unwrap());
        assert_eq!(h.transfers.len(), 2);
        let mg = Multigrid::new(h, &sys.matrix).unwrap();
        let (x, stats) = pcg_with(&sys.matrix, &sys.load, 1e-10, 500, |r| mg.apply(r)).unwrap();
        let exact = BandCholesky::factor(&sys.matrix).unwrap().solve(&sys.load);
        let err = x.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-7 * scale, "{err} vs {scale}");
        assert!(stats.iterations < 40, "{} iterations", stats.iterations);
    }
}
