//! Packed symmetric 3x3 matrices, stored as `[xx, yy, zz, xy, xz, yz]`.

use nalgebra::{Matrix3, SymmetricEigen};

pub type Sym3 = [f64; 6];

pub const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

#[inline]
pub fn slot(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        (1, 2) => 5,
        _ => panic!("index out of range"),
    }
}

#[inline]
pub fn get(s: &Sym3, i: usize, j: usize) -> f64 {
    s[slot(i, j)]
}

#[inline]
pub fn matvec(s: &Sym3, v: &[f64; 3]) -> [f64; 3] {
    [
        s[0] * v[0] + s[3] * v[1] + s[4] * v[2],
        s[3] * v[0] + s[1] * v[1] + s[5] * v[2],
        s[4] * v[0] + s[5] * v[1] + s[2] * v[2],
    ]
}

#[inline]
pub fn quad(s: &Sym3, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let sb = matvec(s, b);
    a[0] * sb[0] + a[1] * sb[1] + a[2] * sb[2]
}

pub fn identity(scale: f64) -> Sym3 {
    [scale, scale, scale, 0.0, 0.0, 0.0]
}

pub fn to_matrix(s: &Sym3) -> Matrix3<f64> {
    Matrix3::new(s[0], s[3], s[4], s[3], s[1], s[5], s[4], s[5], s[2])
}

/// Packs the symmetric part of `m`.
pub fn from_matrix(m: &Matrix3<f64>) -> Sym3 {
    [
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        0.5 * (m[(0, 1)] + m[(1, 0)]),
        0.5 * (m[(0, 2)] + m[(2, 0)]),
        0.5 * (m[(1, 2)] + m[(2, 1)]),
    ]
}

/// Eigenvalues in ascending order.
pub fn eigenvalues(s: &Sym3) -> [f64; 3] {
    let mut e: Vec<f64> = SymmetricEigen::new(to_matrix(s)).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    [e[0], e[1], e[2]]
}

pub fn max_abs_diff(a: &Sym3, b: &Sym3) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &Sym3) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_round_trip() {
        let s: Sym3 = [1.0, 2.0, 3.0, 0.5, -0.25, 0.125];
        let m = to_matrix(&s);
        assert_eq!(from_matrix(&m), s);
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            assert_eq!(slot(i, j), k);
            assert_eq!(slot(j, i), k);
            assert_eq!(get(&s, j, i), m[(i, j)]);
        }
        let v = [0.3, -1.0, 2.0];
        let mv = m * nalgebra::Vector3::from(v);
        let p = matvec(&s, &v);
        for i in 0..3 {
            assert!((mv[i] - p[i]).abs() < 1e-15);
        }
        let e = eigenvalues(&identity(2.0));
        assert_eq!(e, [2.0, 2.0, 2.0]);
    }
}
