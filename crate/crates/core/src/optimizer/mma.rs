//! Method of Moving Asymptotes for box constraints plus one linear inequality constraint.
//!
//! The objective is replaced by the usual separable convex approximation
//! `Σ p_j/(U_j − x_j) + q_j/(x_j − L_j)`. The volume constraint is linear, so it enters the
//! subproblem exactly and the single multiplier is found by bisection on the dual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmaParams {
    /// Largest step per iteration as a fraction of `x_max − x_min`.
    pub move_limit: f64,
    pub asy_init: f64,
    pub asy_incr: f64,
    pub asy_decr: f64,
    pub albefa: f64,
    pub raa0: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        MmaParams {
            move_limit: 0.2,
            asy_init: 0.5,
            asy_incr: 1.2,
            asy_decr: 0.7,
            albefa: 0.1,
            raa0: 1e-5,
        }
    }
}

/// Asymptotes and iterate history carried between MMA steps.
#[derive(Debug, Clone, Default)]
pub struct MmaState {
    pub iteration: usize,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
}

impl MmaState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Linear inequality `value + Σ grad_j (x_j − x0_j) ≤ 0`, stated at the current point.
#[derive(Debug, Clone, Copy)]
pub struct LinearConstraint<'a> {
    pub value: f64,
    pub gradient: &'a [f64],
}

/// Minimizes `p/(U − x) + q/(x − L) + c x` over `[lo, hi]`; the derivative is increasing.
fn argmin_1d(p: f64, q: f64, low: f64, upp: f64, c: f64, lo: f64, hi: f64) -> f64 {
    let d = |x: f64| p / ((upp - x) * (upp - x)) - q / ((x - low) * (x - low)) + c;
    if d(lo) >= 0.0 {
        return lo;
    }
    if d(hi) <= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    // closed form when c = 0
    let mut x = if c == 0.0 {
        let (sp, sq) = (p.sqrt(), q.sqrt());
        ((low * sp + upp * sq) / (sp + sq)).clamp(lo, hi)
    } else {
        0.5 * (a + b)
    };
    for _ in 0..100 {
        let dx = d(x);
        if dx == 0.0 {
            return x;
        }
        if dx > 0.0 {
            b = x;
        } else {
            a = x;
        }
        let ux = upp - x;
        let xl = x - low;
        let dd = 2.0 * p / (ux * ux * ux) + 2.0 * q / (xl * xl * xl);
        let newton = x - dx / dd;
        x = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if b - a <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

struct Subproblem {
    p: Vec<f64>,
    q: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl Subproblem {
    fn primal(&self, lambda: f64, a: &[f64]) -> Vec<f64> {
        (0..self.p.len())
            .map(|j| {
                argmin_1d(
                    self.p[j],
                    self.q[j],
                    self.low[j],
                    self.upp[j],
                    lambda * a[j],
                    self.alpha[j],
                    self.beta[j],
                )
            })
            .collect()
    }
}

fn constraint_at(c: &LinearConstraint<'_>, x0: &[f64], x: &[f64]) -> f64 {
    c.value
        + c.gradient
            .iter()
            .zip(x.iter().zip(x0))
            .map(|(g, (x, x0))| g * (x - x0))
            .sum::<f64>()
}

/// One MMA iteration on raw variables `x` with bounds `[xmin, xmax]`.
///
/// Returns the new iterate; `state` is updated in place. Fails if even the most
/// constraint-friendly corner of the move box violates the linear constraint.
pub fn mma_update(
    x: &[f64],
    xmin: &[f64],
    xmax: &[f64],
    gradient: &[f64],
    constraint: LinearConstraint<'_>,
    state: &mut MmaState,
    params: &MmaParams,
) -> Result<Vec<f64>> {
    let n = x.len();
    state.iteration += 1;
    let range: Vec<f64> = (0..n).map(|j| (xmax[j] - xmin[j]).max(1e-5)).collect();

    if state.iteration <= 2 || state.low.len() != n {
        state.low = (0..n).map(|j| x[j] - params.asy_init * range[j]).collect();
        state.upp = (0..n).map(|j| x[j] + params.asy_init * range[j]).collect();
    } else {
        for j in 0..n {
            let zzz = (x[j] - state.xold1[j]) * (state.xold1[j] - state.xold2[j]);
            let factor = if zzz > 0.0 {
                params.asy_incr
            } else if zzz < 0.0 {
                params.asy_decr
            } else {
                1.0
            };
            let low = x[j] - factor * (state.xold1[j] - state.low[j]);
            let upp = x[j] + factor * (state.upp[j] - state.xold1[j]);
            state.low[j] = low.clamp(x[j] - 10.0 * range[j], x[j] - 0.01 * range[j]);
            state.upp[j] = upp.clamp(x[j] + 0.01 * range[j], x[j] + 10.0 * range[j]);
        }
    }

    let build = |move_limit: f64| {
        let mut sub = Subproblem {
            p: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            low: state.low.clone(),
            upp: state.upp.clone(),
            alpha: Vec::with_capacity(n),
            beta: Vec::with_capacity(n),
        };
        for j in 0..n {
            let (low, upp) = (state.low[j], state.upp[j]);
            sub.alpha.push(
                xmin[j]
                    .max(low + params.albefa * (x[j] - low))
                    .max(x[j] - move_limit * range[j]),
            );
            sub.beta.push(
                xmax[j]
                    .min(upp - params.albefa * (upp - x[j]))
                    .min(x[j] + move_limit * range[j]),
            );
            let g = gradient[j];
            let (gp, gm) = (g.max(0.0), (-g).max(0.0));
            let pq = 0.001 * (gp + gm) + params.raa0 / range[j];
            sub.p.push((gp + pq) * (upp - x[j]).powi(2));
            sub.q.push((gm + pq) * (x[j] - low).powi(2));
        }
        sub
    };

    let a = constraint.gradient;
    let most_feasible = |sub: &Subproblem| -> Vec<f64> {
        (0..n)
            .map(|j| if a[j] >= 0.0 { sub.alpha[j] } else { sub.beta[j] })
            .collect()
    };

    let mut sub = build(params.move_limit);
    if constraint_at(&constraint, x, &most_feasible(&sub)) > 0.0 {
        // retry once with the move limit lifted to the whole box
        log::warn!("MMA subproblem infeasible with move limit {}, retrying", params.move_limit);
        sub = build(1.0);
        let best = constraint_at(&constraint, x, &most_feasible(&sub));
        if best > 0.0 {
            return Err(Error::InfeasibleSubproblem(format!(
                "smallest reachable constraint value is {best:.3e}"
            )));
        }
    }

    let g_of = |lambda: f64| {
        let xs = sub.primal(lambda, a);
        let g = constraint_at(&constraint, x, &xs);
        (xs, g)
    };

    let (x0, g0) = g_of(0.0);
    let xnew = if g0 <= 0.0 {
        x0
    } else {
        let mut lo = 0.0;
        let mut hi = 1.0;
        let (mut xhi, mut ghi) = g_of(hi);
        let mut grow = 0;
        while ghi > 0.0 {
            lo = hi;
            hi *= 2.0;
            (xhi, ghi) = g_of(hi);
            grow += 1;
            if grow > 2000 {
                return Err(Error::InfeasibleSubproblem("dual bracket not found".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (xm, gm) = g_of(mid);
            if gm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                xhi = xm;
                ghi = gm;
            }
        }
        let _ = ghi;
        xhi
    };

    state.xold2 = std::mem::replace(&mut state.xold1, x.to_vec());
    if state.xold2.is_empty() {
        state.xold2 = x.to_vec();
    }
    Ok(xnew)
}
