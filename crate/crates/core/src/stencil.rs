//! One-dimensional banded operators applied along one axis of an `n^3` array.

/// Row `r` holds up to three `(column, coefficient)` entries.
#[derive(Clone, Debug)]
pub struct AxisOp {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl AxisOp {
    /// Centred first derivative, second-order one-sided rows at both ends, so
    /// the operator is exact on quadratics.
    pub fn derivative(n: usize, h: f64) -> Self {
        assert!(n >= 3);
        let mut rows = Vec::with_capacity(n);
        rows.push(vec![(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)]);
        for r in 1..n - 1 {
            rows.push(vec![(r - 1, -0.5 / h), (r + 1, 0.5 / h)]);
        }
        rows.push(vec![(n - 3, 0.5 / h), (n - 2, -2.0 / h), (n - 1, 1.5 / h)]);
        AxisOp { n, rows }
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scaled(&self, left: &[f64], right: &[f64]) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| row.iter().map(|&(c, a)| (c, left[r] * a * right[c])).collect())
            .collect();
        AxisOp { n: self.n, rows }
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, a) in row {
                rows[c].push((r, a));
            }
        }
        AxisOp { n: self.n, rows }
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, a) in row {
                m[r * self.n + c] += a;
            }
        }
        m
    }

    #[inline]
    fn line(n: usize, axis: usize, outer: usize) -> (usize, usize) {
        match axis {
            0 => (outer, n * n),
            1 => ((outer / n) * n * n + outer % n, n),
            _ => (outer * n, 1),
        }
    }

    /// `dst = op` applied along `axis` of `src`.
    pub fn apply(&self, axis: usize, src: &[f64], dst: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(src.len(), n * n * n);
        for outer in 0..n * n {
            let (base, s) = Self::line(n, axis, outer);
            for (r, row) in self.rows.iter().enumerate() {
                let mut acc = 0.0;
                for &(c, a) in row {
                    acc += a * src[base + c * s];
                }
                dst[base + r * s] = acc;
            }
        }
    }

    /// `dst += op` applied along `axis` of `src`.
    pub fn apply_add(&self, axis: usize, src: &[f64], dst: &mut [f64]) {
        let n = self.n;
        for outer in 0..n * n {
            let (base, s) = Self::line(n, axis, outer);
            for (r, row) in self.rows.iter().enumerate() {
                let mut acc = 0.0;
                for &(c, a) in row {
                    acc += a * src[base + c * s];
                }
                dst[base + r * s] += acc;
            }
        }
    }
}

/// Centred gradient of an `n^3` array.
pub fn gradient(d: &AxisOp, u: &[f64]) -> [Vec<f64>; 3] {
    let mut out = [vec![0.0; u.len()], vec![0.0; u.len()], vec![0.0; u.len()]];
    for (a, o) in out.iter_mut().enumerate() {
        d.apply(a, u, o);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_exact_on_quadratics() {
        let n = 8;
        let h = 0.5;
        let d = AxisOp::derivative(n, h);
        let x: Vec<f64> = (0..n).map(|i| i as f64 * h - 1.3).collect();
        let m = d.dense();
        for r in 0..n {
            let dq: f64 = (0..n).map(|c| m[r * n + c] * (3.0 * x[c] * x[c] - x[c] + 2.0)).sum();
            assert!((dq - (6.0 * x[r] - 1.0)).abs() < 1e-12);
        }
        let t = d.transpose().dense();
        for r in 0..n {
            for c in 0..n {
                assert_eq!(t[r * n + c], m[c * n + r]);
            }
        }
    }

    #[test]
    fn apply_along_each_axis() {
        let n = 5;
        let d = AxisOp::derivative(n, 1.0);
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let mut u = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    u[idx(i, j, k)] = (2 * i + 3 * j + 5 * k) as f64;
                }
            }
        }
        let g = gradient(&d, &u);
        for (a, slope) in [2.0, 3.0, 5.0].iter().enumerate() {
            assert!(g[a].iter().all(|x| (x - slope).abs() < 1e-12));
        }
    }
}
