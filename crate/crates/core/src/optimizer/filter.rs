use crate::design::DesignField;
use crate::sensitivity::GradientField;

/// Classical density-weighted sensitivity filter:
/// `ĝ_e = Σ_j w_j k_j g_j / (k_e Σ_j w_j)` with `w_j = max(0, r − dist(e, j))`.
///
/// `radius` is measured in domain units between cell centres; anything below one cell
/// width leaves the gradient untouched.
pub fn sensitivity_filter(design: &DesignField, gradient: &GradientField, radius: f64) -> GradientField {
    let n = design.n();
    let cell = 1.0 / n as f64;
    if radius < cell {
        return gradient.clone();
    }
    let reach = (radius / cell).ceil() as isize;
    let k = design.values();
    let g = &gradient.values;
    let mut out = vec![0.0; n * n];
    for row in 0..n as isize {
        for col in 0..n as isize {
            let mut num = 0.0;
            let mut den = 0.0;
            for r2 in (row - reach).max(0)..=(row + reach).min(n as isize - 1) {
                for c2 in (col - reach).max(0)..=(col + reach).min(n as isize - 1) {
                    let dist = cell * (((r2 - row).pow(2) + (c2 - col).pow(2)) as f64).sqrt();
                    let w = (radius - dist).max(0.0);
                    if w > 0.0 {
                        let j = (r2 * n as isize + c2) as usize;
                        num += w * k[j] * g[j];
                        den += w;
                    }
                }
            }
            let e = (row * n as isize + col) as usize;
            out[e] = num / (k[e] * den);
        }
    }
    GradientField {
        n,
        values: out,
        objective: gradient.objective,
    }
}
