//! Tensor-product Lagrange bases (Q1, Q2) on the reference square `[0, 1]^2`.
//!
//! Local DOF `a = ix + (order + 1) iy` sits at `(ix / order, iy / order)`. All elements of a
//! uniform grid are the same square, so every reference quantity below is precomputed once and
//! rescaled by powers of `h`.

use crate::grid::Side;

/// Gauss–Legendre points and weights mapped to `[0, 1]` (weights sum to 1).
pub fn gauss_01(points: usize) -> (Vec<f64>, Vec<f64>) {
    match points {
        1 => (vec![0.5], vec![1.0]),
        2 => {
            let d = 0.5 / 3f64.sqrt();
            (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
        }
        3 => {
            let d = 0.5 * (0.6f64).sqrt();
            (
                vec![0.5 - d, 0.5, 0.5 + d],
                vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            )
        }
        _ => panic!("unsupported Gauss rule with {points} points"),
    }
}

/// 1D Lagrange polynomial `i` of the given order on `[0, 1]`: value, first and second derivative.
pub fn lagrange_1d(order: usize, i: usize, t: f64) -> (f64, f64, f64) {
    match (order, i) {
        (1, 0) => (1.0 - t, -1.0, 0.0),
        (1, 1) => (t, 1.0, 0.0),
        (2, 0) => (2.0 * t * t - 3.0 * t + 1.0, 4.0 * t - 3.0, 4.0),
        (2, 1) => (4.0 * t * (1.0 - t), 4.0 - 8.0 * t, -8.0),
        (2, 2) => (2.0 * t * t - t, 4.0 * t - 1.0, 4.0),
        _ => panic!("no Lagrange basis function {i} of order {order}"),
    }
}

/// Precomputed reference-element data for one polynomial order.
#[derive(Debug, Clone)]
pub struct ElementBasis {
    order: usize,
    /// Unit-conductivity stiffness `∫ ∇N_a · ∇N_b`; independent of `h` in 2D.
    stiffness: Vec<f64>,
    /// `∫_ref N_a`; multiply by `h^2` for the physical element.
    load: Vec<f64>,
    /// Interior quadrature: weights and reference Laplacians per point.
    interior_weights: Vec<f64>,
    interior_laplacian: Vec<Vec<f64>>,
    /// Edge quadrature weights on `[0, 1]`.
    edge_weights: Vec<f64>,
    edge_points: Vec<f64>,
    /// Reference outward normal derivative per side, quadrature point and local DOF.
    side_dn: [Vec<Vec<f64>>; 4],
}

impl ElementBasis {
    pub fn new(order: usize) -> Self {
        assert!(order == 1 || order == 2, "only Q1 and Q2 are supported");
        let k = order + 1;
        let nloc = k * k;
        let (pts, wts) = gauss_01(k);

        let eval = |a: usize, x: f64, y: f64| {
            let (ix, iy) = (a % k, a / k);
            let (vx, dx, ddx) = lagrange_1d(order, ix, x);
            let (vy, dy, ddy) = lagrange_1d(order, iy, y);
            (vx * vy, [dx * vy, vx * dy], ddx * vy + vx * ddy)
        };

        let mut stiffness = vec![0.0; nloc * nloc];
        let mut load = vec![0.0; nloc];
        let mut interior_weights = Vec::new();
        let mut interior_laplacian = Vec::new();
        for (qy, &y) in pts.iter().enumerate() {
            for (qx, &x) in pts.iter().enumerate() {
                let w = wts[qx] * wts[qy];
                let vals: Vec<_> = (0..nloc).map(|a| eval(a, x, y)).collect();
                for a in 0..nloc {
                    load[a] += w * vals[a].0;
                    for b in 0..nloc {
                        let (ga, gb) = (vals[a].1, vals[b].1);
                        stiffness[a * nloc + b] += w * (ga[0] * gb[0] + ga[1] * gb[1]);
                    }
                }
                interior_weights.push(w);
                interior_laplacian.push(vals.iter().map(|v| v.2).collect());
            }
        }

        let side_dn = Side::ALL.map(|side| {
            let nrm = side.normal();
            pts.iter()
                .map(|&s| {
                    let (x, y) = match side {
                        Side::Bottom => (s, 0.0),
                        Side::Top => (s, 1.0),
                        Side::Left => (0.0, s),
                        Side::Right => (1.0, s),
                    };
                    (0..nloc)
                        .map(|a| {
                            let g = eval(a, x, y).1;
                            g[0] * nrm[0] + g[1] * nrm[1]
                        })
                        .collect()
                })
                .collect()
        });

        ElementBasis {
            order,
            stiffness,
            load,
            interior_weights,
            interior_laplacian,
            edge_weights: wts.clone(),
            edge_points: pts,
            side_dn,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Local DOFs per element.
    pub fn nloc(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    /// Row-major `nloc x nloc` unit-conductivity stiffness.
    pub fn stiffness(&self) -> &[f64] {
        &self.stiffness
    }

    pub fn load_weights(&self) -> &[f64] {
        &self.load
    }

    pub fn interior_weights(&self) -> &[f64] {
        &self.interior_weights
    }

    /// Reference Laplacian of each local basis function at interior quadrature point `q`.
    pub fn interior_laplacian(&self, q: usize) -> &[f64] {
        &self.interior_laplacian[q]
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    pub fn edge_points(&self) -> &[f64] {
        &self.edge_points
    }

    /// Reference outward normal derivative of each basis function at edge quadrature point `q`
    /// of `side`. Points are ordered by increasing global coordinate along the edge.
    pub fn side_normal_derivative(&self, side: Side, q: usize) -> &[f64] {
        let idx = Side::ALL.iter().position(|&s| s == side).unwrap();
        &self.side_dn[idx][q]
    }

    /// Value of every local basis function at reference point `(x, y)`.
    pub fn values_at(&self, x: f64, y: f64) -> Vec<f64> {
        let k = self.order + 1;
        (0..self.nloc())
            .map(|a| lagrange_1d(self.order, a % k, x).0 * lagrange_1d(self.order, a / k, y).0)
            .collect()
    }

    /// `u^T K u` for local values `u`.
    pub fn local_energy(&self, u: &[f64]) -> f64 {
        let nloc = self.nloc();
        let mut e = 0.0;
        for a in 0..nloc {
            let row = &self.stiffness[a * nloc..(a + 1) * nloc];
            e += u[a] * row.iter().zip(u).map(|(k, v)| k * v).sum::<f64>();
        }
        e
    }

    /// `v^T K u` for local values.
    pub fn local_bilinear(&self, v: &[f64], u: &[f64]) -> f64 {
        let nloc = self.nloc();
        let mut e = 0.0;
        for a in 0..nloc {
            let row = &self.stiffness[a * nloc..(a + 1) * nloc];
            e += v[a] * row.iter().zip(u).map(|(k, w)| k * w).sum::<f64>();
        }
        e
    }
}

/// Unit-conductivity element stiffness scaled by `conductivity`.
pub fn element_stiffness(order: usize, conductivity: f64) -> Vec<f64> {
    ElementBasis::new(order)
        .stiffness()
        .iter()
        .map(|k| conductivity * k)
        .collect()
}
