use std::sync::Arc;

/// Compressed sparse row structure with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrPattern {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
}

impl CsrPattern {
    /// Builds the pattern from unsorted per-row column lists.
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        CsrPattern { row_ptr, cols }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Storage position of `(row, col)`, if present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.cols[lo..hi].binary_search(&col).ok().map(|p| lo + p)
    }

    /// Largest `row - col` over stored entries.
    pub fn lower_bandwidth(&self) -> usize {
        (0..self.nrows())
            .filter(|&r| self.row_ptr[r + 1] > self.row_ptr[r])
            .map(|r| r.saturating_sub(self.cols[self.row_ptr[r]]))
            .max()
            .unwrap_or(0)
    }
}

/// Square sparse matrix sharing its pattern with every other matrix assembled on the same space.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let nnz = pattern.nnz();
        CsrMatrix {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn pattern(&self) -> &CsrPattern {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern
            .position(row, col)
            .map(|p| self.values[p])
            .unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (p.row_ptr[i], p.row_ptr[i + 1]);
            let mut s = 0.0;
            for k in lo..hi {
                s += self.values[k] * x[p.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_into(x, &mut y);
        y
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let p = &self.pattern;
        let max = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..self.nrows() {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        if max > 0.0 {
            worst / max
        } else {
            0.0
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
