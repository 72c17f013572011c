//! Landau kernel, lattice convolution engine and the Maxwellian diffusion
//! coefficients.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{check_finite, Result, VplError};
use crate::exec::Exec;
use crate::fft::Fft3;
use crate::grid::{DistributionField, VelocityGrid};
use crate::lattice::{coulomb_h4_coefficients, epstein_zeta, Shift};
use crate::stencil::{gradient, AxisOp};
use crate::sym::{self, Sym3};

/// `(I - w w / |w|^2) |w|^{gamma+2}`; caller guarantees `w != 0`.
#[inline]
pub fn phi_nonzero(w: &[f64; 3], gamma: f64) -> Sym3 {
    let r2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let r = r2.sqrt();
    let p = if gamma == -3.0 { 1.0 / r } else { r.powf(gamma + 2.0) };
    let s = p / r2;
    [
        p - s * w[0] * w[0],
        p - s * w[1] * w[1],
        p - s * w[2] * w[2],
        -s * w[0] * w[1],
        -s * w[0] * w[2],
        -s * w[1] * w[2],
    ]
}

pub fn phi_kernel(w: &[f64; 3], gamma: f64) -> Result<Sym3> {
    if !w.iter().all(|x| x.is_finite()) {
        return Err(VplError::InvalidInput("non-finite offset".into()));
    }
    if w.iter().all(|&x| x == 0.0) {
        return Err(VplError::InvalidInput("kernel is singular at w = 0; use a table origin rule".into()));
    }
    Ok(phi_nonzero(w, gamma))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OriginRule {
    /// The `w = 0` entry is the zero matrix.
    Zero,
    /// The `w = 0` entry cancels the leading lattice-sum defect of the
    /// singular kernel, so a smooth density is integrated to `O(h^{gamma+7})`.
    #[default]
    Corrected,
}

/// Kernel tabulated on the offsets of the doubled (zero-padded) lattice, with
/// the FFT spectra used by the convolution engine.
///
/// A shifted table holds `Phi((o + 1/2) h)` and evaluates convolutions at the
/// cell corners `v + h/2 (1, 1, 1)`; the corner with index `n/2 - 1` on every
/// axis is `v = 0`.
pub struct KernelTable {
    pub gamma: f64,
    pub origin_rule: OriginRule,
    pub n_axis: usize,
    pub spacing: f64,
    pub v_max: f64,
    pub shifted: bool,
    /// Scalar `c` of the identity matrix stored at `w = 0`.
    pub origin_scalar: f64,
    /// For shifted tables: coefficient of `u(corner) I` added to the output.
    pub corner_correction: f64,
    h4: Option<(f64, f64, f64)>,
    p: usize,
    spectra: [Vec<Complex64>; 6],
    fft: Fft3,
}

impl std::fmt::Debug for KernelTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelTable")
            .field("gamma", &self.gamma)
            .field("origin_rule", &self.origin_rule)
            .field("n_axis", &self.n_axis)
            .field("shifted", &self.shifted)
            .finish()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (-3.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(VplError::InvalidInput(format!("gamma must lie in [-3, 1], got {gamma}")))
    }
}

impl KernelTable {
    pub fn new(grid: &VelocityGrid, gamma: f64, origin_rule: OriginRule) -> Result<Self> {
        Self::build(grid, gamma, origin_rule, false)
    }

    pub fn new_shifted(grid: &VelocityGrid, gamma: f64, origin_rule: OriginRule) -> Result<Self> {
        Self::build(grid, gamma, origin_rule, true)
    }

    fn build(grid: &VelocityGrid, gamma: f64, origin_rule: OriginRule, shifted: bool) -> Result<Self> {
        check_gamma(gamma)?;
        let n = grid.n_axis;
        let h = grid.spacing;
        let s = -(gamma + 2.0) / 2.0;
        let (origin_scalar, corner_correction) = match (origin_rule, shifted) {
            (OriginRule::Zero, _) => (0.0, 0.0),
            (OriginRule::Corrected, false) => (-(2.0 / 3.0) * epstein_zeta(s, Shift::Integer) * h.powf(gamma + 2.0), 0.0),
            (OriginRule::Corrected, true) => (0.0, -(2.0 / 3.0) * epstein_zeta(s, Shift::Half) * h.powf(gamma + 5.0)),
        };
        let h4 = (origin_rule == OriginRule::Corrected && !shifted && gamma == -3.0).then(coulomb_h4_coefficients);
        let p = 2 * n;
        let mut table = KernelTable {
            gamma,
            origin_rule,
            n_axis: n,
            spacing: h,
            v_max: grid.v_max,
            shifted,
            origin_scalar,
            corner_correction,
            h4,
            p,
            spectra: Default::default(),
            fft: Fft3::new(p),
        };
        let w3 = h * h * h;
        let mut bufs: [Vec<Complex64>; 6] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); p * p * p]);
        let off = |a: usize| -> Option<i64> {
            if a < n {
                Some(a as i64)
            } else if a > n {
                Some(a as i64 - p as i64)
            } else {
                None
            }
        };
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    let (Some(oa), Some(ob), Some(oc)) = (off(a), off(b), off(c)) else { continue };
                    let m = table.offset_value([oa, ob, oc]);
                    let slot = (a * p + b) * p + c;
                    for (q, buf) in bufs.iter_mut().enumerate() {
                        buf[slot] = Complex64::new(w3 * m[q], 0.0);
                    }
                }
            }
        }
        for buf in bufs.iter_mut() {
            table.fft.process(buf, false);
        }
        table.spectra = bufs;
        Ok(table)
    }

    /// Unweighted kernel at lattice offset `o` (plus the half shift if any).
    pub fn offset_value(&self, o: [i64; 3]) -> Sym3 {
        let sh = if self.shifted { 0.5 } else { 0.0 };
        let w = [(o[0] as f64 + sh) * self.spacing, (o[1] as f64 + sh) * self.spacing, (o[2] as f64 + sh) * self.spacing];
        if !self.shifted && o == [0, 0, 0] {
            sym::identity(self.origin_scalar)
        } else {
            phi_nonzero(&w, self.gamma)
        }
    }

    fn pad(&self, u: &[f64]) -> Vec<Complex64> {
        let (n, p) = (self.n_axis, self.p);
        let mut buf = vec![Complex64::new(0.0, 0.0); p * p * p];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    buf[(i * p + j) * p + k] = Complex64::new(u[(i * n + j) * n + k], 0.0);
                }
            }
        }
        buf
    }

    fn unpad(&self, buf: &[Complex64], mut put: impl FnMut(usize, Complex64)) {
        let (n, p) = (self.n_axis, self.p);
        let scale = 1.0 / (p * p * p) as f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    put((i * n + j) * n + k, buf[(i * p + j) * p + k] * scale);
                }
            }
        }
    }

    /// Raw lattice convolution `sum_b h^3 T(a - b) u_b` per node.
    pub fn conv_scalar(&self, u: &[f64]) -> Vec<Sym3> {
        let nv = self.n_axis.pow(3);
        assert_eq!(u.len(), nv);
        let mut hat = self.pad(u);
        self.fft.process(&mut hat, false);
        let mut out = vec![[0.0; 6]; nv];
        let i = Complex64::new(0.0, 1.0);
        for (qa, qb) in [(0, 1), (2, 3), (4, 5)] {
            let mut x: Vec<Complex64> =
                hat.iter().zip(&self.spectra[qa]).zip(&self.spectra[qb]).map(|((u, a), b)| u * a + i * (u * b)).collect();
            self.fft.process(&mut x, true);
            self.unpad(&x, |idx, z| {
                out[idx][qa] = z.re;
                out[idx][qb] = z.im;
            });
        }
        if self.shifted && self.corner_correction != 0.0 {
            self.add_corner_correction(u, &mut out);
        }
        out
    }

    fn add_corner_correction(&self, u: &[f64], out: &mut [Sym3]) {
        // Tensor cubic midpoint interpolation of u at the corner.
        const W: [(i64, f64); 4] = [(-1, -1.0 / 16.0), (0, 9.0 / 16.0), (1, 9.0 / 16.0), (2, -1.0 / 16.0)];
        let n = self.n_axis as i64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut acc = 0.0;
                    for &(di, wi) in &W {
                        for &(dj, wj) in &W {
                            for &(dk, wk) in &W {
                                let (a, b, c) = (i + di, j + dj, k + dk);
                                if (0..n).contains(&a) && (0..n).contains(&b) && (0..n).contains(&c) {
                                    acc += wi * wj * wk * u[((a * n + b) * n + c) as usize];
                                }
                            }
                        }
                    }
                    let add = self.corner_correction * acc;
                    let e = &mut out[((i * n + j) * n + k) as usize];
                    e[0] += add;
                    e[1] += add;
                    e[2] += add;
                }
            }
        }
    }

    /// `(sum_j T^{ij} * u_j)_i` per node.
    pub fn conv_vector(&self, u: [&[f64]; 3]) -> [Vec<f64>; 3] {
        let nv = self.n_axis.pow(3);
        let hats: Vec<Vec<Complex64>> = u
            .iter()
            .map(|c| {
                let mut b = self.pad(c);
                self.fft.process(&mut b, false);
                b
            })
            .collect();
        let s = |i: usize, j: usize| &self.spectra[sym::slot(i, j)];
        let row = |i: usize, k: usize| s(i, 0)[k] * hats[0][k] + s(i, 1)[k] * hats[1][k] + s(i, 2)[k] * hats[2][k];
        let im = Complex64::new(0.0, 1.0);
        let len = hats[0].len();
        let mut x01: Vec<Complex64> = (0..len).map(|k| row(0, k) + im * row(1, k)).collect();
        let mut x2: Vec<Complex64> = (0..len).map(|k| row(2, k)).collect();
        self.fft.process(&mut x01, true);
        self.fft.process(&mut x2, true);
        let mut out = [vec![0.0; nv], vec![0.0; nv], vec![0.0; nv]];
        self.unpad(&x01, |idx, z| {
            out[0][idx] = z.re;
            out[1][idx] = z.im;
        });
        self.unpad(&x2, |idx, z| out[2][idx] = z.re);
        if self.shifted && self.corner_correction != 0.0 {
            // The corner rule is isotropic, so it acts componentwise.
            for c in 0..3 {
                let mut tmp = vec![[0.0; 6]; nv];
                self.add_corner_correction(u[c], &mut tmp);
                for (o, t) in out[c].iter_mut().zip(&tmp) {
                    *o += t[0];
                }
            }
        }
        out
    }

    /// Direct `O(N^2)` evaluation of `conv_scalar`; the test oracle.
    pub fn conv_scalar_direct(&self, u: &[f64]) -> Vec<Sym3> {
        let n = self.n_axis as i64;
        let w3 = self.spacing.powi(3);
        let idx = |i: i64, j: i64, k: i64| ((i * n + j) * n + k) as usize;
        let mut out = vec![[0.0; 6]; u.len()];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut acc = [0.0; 6];
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                let ub = u[idx(i, j, k)];
                                if ub == 0.0 {
                                    continue;
                                }
                                let t = self.offset_value([a - i, b - j, c - k]);
                                for q in 0..6 {
                                    acc[q] += w3 * t[q] * ub;
                                }
                            }
                        }
                    }
                    out[idx(a, b, c)] = acc;
                }
            }
        }
        if self.shifted && self.corner_correction != 0.0 {
            self.add_corner_correction(u, &mut out);
        }
        out
    }

    /// Direct `O(N^2)` evaluation of `conv_vector`.
    pub fn conv_vector_direct(&self, u: [&[f64]; 3]) -> [Vec<f64>; 3] {
        let mut out = [vec![0.0; u[0].len()], vec![0.0; u[0].len()], vec![0.0; u[0].len()]];
        for j in 0..3 {
            let c = self.conv_scalar_direct(u[j]);
            for i in 0..3 {
                let q = sym::slot(i, j);
                for (o, m) in out[i].iter_mut().zip(&c) {
                    *o += m[q];
                }
            }
        }
        out
    }

    /// Lattice sum `sum_b h^3 Phi(v - v_b) u_b` at an arbitrary point; a node
    /// coincident with `v` contributes through the origin scalar.
    pub fn direct_at(&self, grid: &VelocityGrid, u: &[f64], v: &[f64; 3]) -> Sym3 {
        let w3 = grid.cell_volume();
        let tol = 1e-12 * grid.spacing;
        let mut acc = [0.0; 6];
        for (vb, ub) in grid.nodes.iter().zip(u) {
            let w = [v[0] - vb[0], v[1] - vb[1], v[2] - vb[2]];
            let t = if w.iter().all(|x| x.abs() < tol) { sym::identity(self.origin_scalar) } else { phi_nonzero(&w, self.gamma) };
            for q in 0..6 {
                acc[q] += w3 * t[q] * ub;
            }
        }
        acc
    }

    /// `Phi * u` reported as a diffusion matrix field: the lattice convolution
    /// plus, for the Coulomb table with the corrected origin, the `h^4` term
    /// of the lattice defect (Hessian of `u` by fourth-order differences).
    pub fn sigma_conv(&self, u: &[f64]) -> Result<Vec<Sym3>> {
        check_finite(u)?;
        let mut out = self.conv_scalar(u);
        if let Some((z1, alpha, beta)) = self.h4 {
            let hess = hessian4(u, self.n_axis, self.spacing);
            let h4 = self.spacing.powi(4);
            for (o, hm) in out.iter_mut().zip(&hess) {
                let tr = hm[0] + hm[1] + hm[2];
                for (q, &(i, j)) in sym::PAIRS.iter().enumerate() {
                    let mut c = -2.0 * alpha * hm[q];
                    if i == j {
                        c += (z1 / 3.0 - alpha) * tr - beta * hm[q];
                    }
                    o[q] -= 0.5 * h4 * c;
                }
            }
        }
        Ok(out)
    }
}

/// Fourth-order finite-difference Hessian; values beyond the grid are zero.
pub fn hessian4(u: &[f64], n: usize, h: f64) -> Vec<Sym3> {
    let at = |i: i64, j: i64, k: i64| -> f64 {
        let r = 0..n as i64;
        if r.contains(&i) && r.contains(&j) && r.contains(&k) {
            u[((i as usize * n) + j as usize) * n + k as usize]
        } else {
            0.0
        }
    };
    let d1 = [(-2i64, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)];
    let d2 = [(-2i64, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0)];
    let mut out = vec![[0.0; 6]; n * n * n];
    let h2 = h * h;
    for i in 0..n as i64 {
        for j in 0..n as i64 {
            for k in 0..n as i64 {
                let p = [i, j, k];
                let shift = |a: usize, s: i64, b: usize, t: i64| {
                    let mut q = p;
                    q[a] += s;
                    q[b] += t;
                    at(q[0], q[1], q[2])
                };
                let e = &mut out[((i as usize * n) + j as usize) * n + k as usize];
                for (q, &(a, b)) in sym::PAIRS.iter().enumerate() {
                    let mut acc = 0.0;
                    if a == b {
                        for &(s, c) in &d2 {
                            acc += c * shift(a, s, b, 0);
                        }
                    } else {
                        for &(s, c) in &d1 {
                            for &(t, d) in &d1 {
                                acc += c * d * shift(a, s, b, t);
                            }
                        }
                    }
                    e[q] = acc / h2;
                }
            }
        }
    }
    out
}

/// Closed-form principal values of `sigma(v)` for the Maxwellian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPair {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `v = 0`: the direction is undefined and both values are isotropic.
    pub degenerate: bool,
}

/// `e^{-(v^2 + r^2)}` times `int_{-1}^{1} (1 - c^2) e^{a c} dc`, `a = 2 v r`,
/// and the same for `int (1 + c^2)/2 e^{a c} dc`, evaluated without overflow.
fn angular_weights(v: f64, r: f64) -> (f64, f64) {
    let a = 2.0 * v * r;
    if a < 1e-2 {
        let e = (-(v * v + r * r)).exp();
        let a2 = a * a;
        let ang1 = 4.0 / 3.0 + 2.0 * a2 / 15.0 + a2 * a2 / 210.0 + a2 * a2 * a2 / 11340.0;
        let i0 = 2.0 * (1.0 + a2 / 6.0 + a2 * a2 / 120.0 + a2 * a2 * a2 / 5040.0);
        return (e * ang1, e * (i0 - 0.5 * ang1));
    }
    // e^{-(v^2+r^2)} cosh a = (e^{-(r-v)^2} + e^{-(r+v)^2}) / 2, likewise sinh.
    let em = (-(r - v) * (r - v)).exp();
    let ep = (-(r + v) * (r + v)).exp();
    let ch = 0.5 * (em + ep);
    let sh = 0.5 * (em - ep);
    let ang1 = 4.0 * (a * ch - sh) / (a * a * a);
    let i0 = 2.0 * sh / a;
    (ang1, i0 - 0.5 * ang1)
}

pub fn eigenvalue_formulas(v: &[f64; 3], gamma: f64) -> Result<EigenPair> {
    check_gamma(gamma)?;
    let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    // Composite Simpson in r; the integrand is smooth and Gaussian in r - |v|.
    let r_end = vn + 9.0;
    let m = 6000usize;
    let dr = r_end / m as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for q in 0..=m {
        let r = q as f64 * dr;
        let wq = if q == 0 || q == m { 1.0 } else if q % 2 == 1 { 4.0 } else { 2.0 };
        let rp = if r == 0.0 { 0.0 } else { r.powf(gamma + 4.0) };
        let (a1, a2) = angular_weights(vn, r);
        s1 += wq * rp * a1;
        s2 += wq * rp * a2;
    }
    let f = 2.0 * PI * dr / 3.0;
    Ok(EigenPair { lambda1: f * s1, lambda2: f * s2, degenerate: vn == 0.0 })
}

/// Maxwellian coefficients on the velocity lattice.
#[derive(Clone, Debug)]
pub struct MaxwellianCoefficients {
    /// Lattice `sigma = T * mu` (the table's origin rule applies).
    pub sigma: Vec<Sym3>,
    /// `sigma^i = T^{ij} * (v_j mu)`.
    pub sigma_i: Vec<[f64; 3]>,
}

impl MaxwellianCoefficients {
    pub fn new(table: &KernelTable, grid: &VelocityGrid) -> Self {
        let sigma = table.conv_scalar(&grid.mu);
        let vm: Vec<Vec<f64>> = (0..3).map(|c| grid.nodes.iter().zip(&grid.mu).map(|(v, m)| v[c] * m).collect()).collect();
        let s = table.conv_vector([&vm[0], &vm[1], &vm[2]]);
        let sigma_i = (0..grid.len()).map(|k| [s[0][k], s[1][k], s[2][k]]).collect();
        MaxwellianCoefficients { sigma, sigma_i }
    }
}

/// Collision coefficients of a state: `sigma_G = Phi * (mu + sqrt(mu) g)` and
/// `a_g^i = -Phi^{ij} * (v_j sqrt(mu) g + sqrt(mu) d_j g)` per (cell, node).
#[derive(Clone, Debug)]
pub struct DiffusionField {
    pub sigma: Vec<Sym3>,
    pub drift: Vec<[f64; 3]>,
    pub source_g: String,
    pub n_v: usize,
}

impl DiffusionField {
    pub fn cell_sigma(&self, c: usize) -> &[Sym3] {
        &self.sigma[c * self.n_v..(c + 1) * self.n_v]
    }

    pub fn cell_drift(&self, c: usize) -> &[[f64; 3]] {
        &self.drift[c * self.n_v..(c + 1) * self.n_v]
    }

    /// Smallest eigenvalue over all nodes and cells.
    pub fn min_eigenvalue(&self) -> f64 {
        self.sigma.iter().map(|s| sym::eigenvalues(s)[0]).fold(f64::INFINITY, f64::min)
    }

    /// Fitted `(c1, c2)` with `c1 <v>^{-3} <= eig <= c2 <v>^{-1}`.
    pub fn pinching_constants(&self, grid: &VelocityGrid) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (idx, s) in self.sigma.iter().enumerate() {
            let v = &grid.nodes[idx % self.n_v];
            let b = crate::grid::bracket(v);
            let e = sym::eigenvalues(s);
            lo = lo.min(e[0] * b * b * b);
            hi = hi.max(e[2] * b);
        }
        (lo, hi)
    }
}

/// Coefficients for one cell's `g`; `sigma` is the Maxwellian lattice sigma.
pub fn cell_coefficients(table: &KernelTable, grid: &VelocityGrid, sigma: &[Sym3], d: &AxisOp, g: &[f64]) -> (Vec<Sym3>, Vec<[f64; 3]>) {
    let sg: Vec<f64> = g.iter().zip(&grid.sqrt_mu).map(|(a, b)| a * b).collect();
    let pert = table.conv_scalar(&sg);
    let sig = sigma.iter().zip(&pert).map(|(a, b)| std::array::from_fn(|q| a[q] + b[q])).collect();
    let dg = gradient(d, g);
    let src: Vec<Vec<f64>> = (0..3)
        .map(|j| (0..grid.len()).map(|k| grid.nodes[k][j] * sg[k] + grid.sqrt_mu[k] * dg[j][k]).collect())
        .collect();
    let a = table.conv_vector([&src[0], &src[1], &src[2]]);
    let drift = (0..grid.len()).map(|k| [-a[0][k], -a[1][k], -a[2][k]]).collect();
    (sig, drift)
}

pub fn build_sigma_g(
    table: &KernelTable,
    grid: &VelocityGrid,
    maxwellian: &MaxwellianCoefficients,
    g: &DistributionField,
    exec: Exec,
) -> Result<DiffusionField> {
    g.check_finite()?;
    let d = AxisOp::derivative(grid.n_axis, grid.spacing);
    let per_cell = exec.map(g.n_cells, |c| cell_coefficients(table, grid, &maxwellian.sigma, &d, g.cell(c)));
    let mut sigma = Vec::with_capacity(g.values.len());
    let mut drift = Vec::with_capacity(g.values.len());
    for (s, a) in per_cell {
        sigma.extend(s);
        drift.extend(a);
    }
    let field = DiffusionField { sigma, drift, source_g: format!("g(t={})", g.time), n_v: grid.len() };
    let m = field.min_eigenvalue();
    if m < 0.0 {
        return Err(VplError::Numerical(format!(
            "sigma_G has a negative eigenvalue {m:e}; g is too large or the grid too coarse"
        )));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        let a = phi_kernel(&[1.0, 0.0, 0.0], -3.0).unwrap();
        assert_eq!(a, [0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let b = phi_kernel(&[0.0, 2.0, 0.0], -3.0).unwrap();
        assert_eq!(b, [0.5, 0.0, 0.5, 0.0, 0.0, 0.0]);
        assert!(phi_kernel(&[0.0; 3], -3.0).is_err());
    }

    #[test]
    fn fft_matches_direct_on_small_grid() {
        let grid = VelocityGrid::new(4.0, 8).unwrap();
        for shifted in [false, true] {
            let t = if shifted {
                KernelTable::new_shifted(&grid, -3.0, OriginRule::Corrected).unwrap()
            } else {
                KernelTable::new(&grid, -3.0, OriginRule::Corrected).unwrap()
            };
            let u = grid.from_fn(|v| (-(v[0] - 0.3).powi(2) - v[1] * v[1] - 0.5 * v[2] * v[2]).exp() * (1.0 + v[1]));
            let a = t.conv_scalar(&u);
            let b = t.conv_scalar_direct(&u);
            let scale = b.iter().map(sym::max_abs).fold(0.0, f64::max);
            let err = a.iter().zip(&b).map(|(x, y)| sym::max_abs_diff(x, y)).fold(0.0, f64::max);
            assert!(err <= 1e-10 * scale, "shifted={shifted}: {err} vs {scale}");
        }
    }

    #[test]
    fn sigma_i_equals_sigma_v() {
        let grid = VelocityGrid::new(5.0, 12).unwrap();
        let t = KernelTable::new(&grid, -3.0, OriginRule::Corrected).unwrap();
        let m = MaxwellianCoefficients::new(&t, &grid);
        for k in 0..grid.len() {
            let sv = sym::matvec(&m.sigma[k], &grid.nodes[k]);
            for c in 0..3 {
                assert!((sv[c] - m.sigma_i[k][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_formula_at_origin() {
        let e = eigenvalue_formulas(&[0.0; 3], -3.0).unwrap();
        assert!(e.degenerate);
        assert!((e.lambda1 - 4.0 * PI / 3.0).abs() < 1e-8);
        assert!((e.lambda2 - 4.0 * PI / 3.0).abs() < 1e-8);
        let f = eigenvalue_formulas(&[1e-9, 0.0, 0.0], -3.0).unwrap();
        assert!(!f.degenerate && (f.lambda1 - e.lambda1).abs() < 1e-8);
    }

    #[test]
    fn zero_g_gives_maxwellian_coefficients() {
        let grid = VelocityGrid::new(4.0, 8).unwrap();
        let mesh = crate::grid::SpatialMesh::slab(1.0, 2).unwrap();
        let t = KernelTable::new(&grid, -3.0, OriginRule::Corrected).unwrap();
        let m = MaxwellianCoefficients::new(&t, &grid);
        let g = DistributionField::zeros(&mesh, &grid);
        let d = build_sigma_g(&t, &grid, &m, &g, Exec::Sequential).unwrap();
        assert_eq!(d.cell_sigma(1), &m.sigma[..]);
        assert!(d.drift.iter().all(|a| a.iter().all(|x| *x == 0.0)));
    }
}
