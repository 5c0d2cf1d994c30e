//! Piecewise-constant conductivity designs on the model grid and the quasi-monotonicity
//! characteristic function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conductivity `k` per ground cell, stored row-major from the bottom-left cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignField {
    n: usize,
    values: Vec<f64>,
    gamma: f64,
    volume_target: f64,
}

impl DesignField {
    pub fn new(n: usize, values: Vec<f64>, gamma: f64, volume_target: f64) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::InvalidDesign(format!(
                "expected {n}x{n} values, got {}",
                values.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidDesign(format!("gamma {gamma} outside (0, 1)")));
        }
        if !(volume_target > 0.0 && volume_target <= 1.0) {
            return Err(Error::InvalidDesign(format!(
                "volume target {volume_target} outside (0, 1]"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign(format!("non-finite value at cell {i}")));
        }
        Ok(DesignField {
            n,
            values,
            gamma,
            volume_target,
        })
    }

    pub fn uniform(n: usize, value: f64, gamma: f64, volume_target: f64) -> Result<Self> {
        Self::new(n, vec![value; n * n], gamma, volume_target)
    }

    /// Ground cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn volume_target(&self) -> f64 {
        self.volume_target
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n, values, self.gamma, self.volume_target)
    }

    /// `∫_Ω k`, which on the unit square is the mean cell value.
    pub fn volume(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_box_feasible(&self, tol: f64) -> bool {
        self.values
            .iter()
            .all(|&k| k >= self.gamma - tol && k <= 1.0 + tol)
    }

    /// Box and (inequality) volume feasibility.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.is_box_feasible(tol) && self.volume() <= self.volume_target + tol
    }

    /// Largest absolute cell-wise difference to another design of the same size.
    pub fn max_change(&self, other: &DesignField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Clamps every cell into `[γ, 1]`.
pub fn project_to_box(field: &DesignField) -> DesignField {
    let mut out = field.clone();
    let g = field.gamma;
    for v in out.values.iter_mut() {
        *v = v.clamp(g, 1.0);
    }
    out
}

/// Excess of the path `a → b → c` over the direct step `a → c`; zero iff `b` lies between `a` and `c`.
#[inline]
fn m(a: f64, b: f64, c: f64) -> f64 {
    // clamp away round-off below zero
    ((b - a).abs() + (c - b).abs() - (c - a).abs()).max(0.0)
}

/// Which product of path terms to use for the local quasi-monotonicity indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QmVariant {
    /// Monotone-path tests between both diagonal pairs around the node.
    #[default]
    Corrected,
    /// The literal `m(a,b,c) m(a,c,d) m(b,a,c) m(b,d,c)`, which vanishes on checkerboards.
    Printed,
}

/// Local indicator for the four cells around an interior node.
///
/// `a = k(i, j)`, `b = k(i+1, j)`, `c = k(i, j+1)`, `d = k(i+1, j+1)`, so `(a, d)` and
/// `(b, c)` are the diagonal pairs. Each factor tests whether one diagonal pair is joined by a
/// monotone path through one of the other two cells; the product is non-zero only when neither
/// pair can be joined either way, i.e. at a hinge.
pub fn qm_local(a: f64, b: f64, c: f64, d: f64) -> f64 {
    m(a, b, d) * m(a, c, d) * m(b, a, c) * m(b, d, c)
}

pub fn qm_local_printed(a: f64, b: f64, c: f64, d: f64) -> f64 {
    m(a, b, c) * m(a, c, d) * m(b, a, c) * m(b, d, c)
}

pub fn qm_local_with(variant: QmVariant, a: f64, b: f64, c: f64, d: f64) -> f64 {
    match variant {
        QmVariant::Corrected => qm_local(a, b, c, d),
        QmVariant::Printed => qm_local_printed(a, b, c, d),
    }
}

/// QM(k): sum of the local indicator over all `(N-1)^2` interior nodes of the model grid.
pub fn qm_value(field: &DesignField) -> Result<f64> {
    qm_value_with(field, QmVariant::Corrected)
}

pub fn qm_value_with(field: &DesignField, variant: QmVariant) -> Result<f64> {
    let n = field.n;
    if n < 2 {
        return Err(Error::InvalidDesign(format!(
            "QM needs at least a 2x2 model grid, got {n}x{n}"
        )));
    }
    let mut total = 0.0;
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            total += qm_local_with(
                variant,
                field.get(j, i),
                field.get(j, i + 1),
                field.get(j + 1, i),
                field.get(j + 1, i + 1),
            );
        }
    }
    Ok(total)
}
