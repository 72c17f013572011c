//! Linearized Landau operators on one cell's velocity profile.
//!
//! With `G_a = sqrt(mu) D_a mu^{-1/2}` (so `G_a f ~ (d_a + v_a) f`), the
//! operators are assembled as
//!
//! * `A f = -G^T (sigma G f)`
//! * `K f =  G^T (sqrt(mu) [T * (sqrt(mu) G f)])`
//! * `L f =  G^T N G f`, `N = sigma - sqrt(mu) T * sqrt(mu)`
//!
//! where `T` is the kernel table and `sigma = T * mu`. `N` is positive
//! semidefinite on the lattice and annihilates constant vectors and `v`, and
//! `D` is exact on quadratics, so the five collision invariants are an exact
//! discrete null space of `L` and `L` is symmetric and nonnegative.

use nalgebra::DMatrix;
use std::sync::Arc;

use crate::error::Result;
use crate::exec::Exec;
use crate::grid::{ksum, DistributionField, SpatialMesh, VelocityGrid};
use crate::landau::{KernelTable, MaxwellianCoefficients, OriginRule};
use crate::stencil::{gradient, AxisOp};
use crate::sym::{self, Sym3};

/// Orthonormal basis of `span{sqrt(mu), v_i sqrt(mu), |v|^2 sqrt(mu)}` under the
/// discrete `L^2_v` product, with the triangular change of basis to the raw set.
#[derive(Clone, Debug)]
pub struct CollisionInvariantBasis {
    pub e: [Vec<f64>; 5],
    pub gram: [[f64; 5]; 5],
    /// `e_i = sum_j m[i][j] r_j` with `r = (1, v_1, v_2, v_3, |v|^2) sqrt(mu)`.
    pub m: [[f64; 5]; 5],
}

impl CollisionInvariantBasis {
    pub fn new(grid: &VelocityGrid) -> Self {
        let raw: [Vec<f64>; 5] = [
            grid.sqrt_mu.clone(),
            grid.times_sqrt_mu(|v| v[0]),
            grid.times_sqrt_mu(|v| v[1]),
            grid.times_sqrt_mu(|v| v[2]),
            grid.times_sqrt_mu(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]),
        ];
        let mut e: [Vec<f64>; 5] = Default::default();
        let mut m = [[0.0; 5]; 5];
        for i in 0..5 {
            let mut u = raw[i].clone();
            let mut row = [0.0; 5];
            row[i] = 1.0;
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for j in 0..i {
                    let p = grid.dot_v(&u, &e[j]);
                    for (x, y) in u.iter_mut().zip(&e[j]) {
                        *x -= p * y;
                    }
                    for q in 0..5 {
                        row[q] -= p * m[j][q];
                    }
                }
            }
            let nrm = grid.dot_v(&u, &u).sqrt();
            u.iter_mut().for_each(|x| *x /= nrm);
            row.iter_mut().for_each(|x| *x /= nrm);
            e[i] = u;
            m[i] = row;
        }
        let mut gram = [[0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                gram[i][j] = grid.dot_v(&e[i], &e[j]);
            }
        }
        CollisionInvariantBasis { e, gram, m }
    }
}

/// Macroscopic coefficients: `Pf = (a + v.b + |v|^2 c) sqrt(mu)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroMoments {
    pub a: Vec<f64>,
    pub b: Vec<[f64; 3]>,
    pub c: Vec<f64>,
}

/// Coefficients of `Gamma[g, .]` that depend on `g` only.
#[derive(Clone, Debug)]
pub struct GammaCoefficients {
    /// `T * (sqrt(mu) g)`.
    pub a: Vec<Sym3>,
    /// `T^{ij} * D_j (sqrt(mu) g)`.
    pub b: [Vec<f64>; 3],
}

pub struct CollisionOperators {
    pub grid: Arc<VelocityGrid>,
    pub table: Arc<KernelTable>,
    pub maxwellian: MaxwellianCoefficients,
    pub basis: CollisionInvariantBasis,
    pub d: AxisOp,
    d_t: AxisOp,
    g: AxisOp,
    g_t: AxisOp,
}

impl CollisionOperators {
    pub fn new(grid: Arc<VelocityGrid>, gamma: f64, origin_rule: OriginRule) -> Result<Self> {
        let table = Arc::new(KernelTable::new(&grid, gamma, origin_rule)?);
        Ok(Self::with_table(grid, table))
    }

    pub fn with_table(grid: Arc<VelocityGrid>, table: Arc<KernelTable>) -> Self {
        let maxwellian = MaxwellianCoefficients::new(&table, &grid);
        let basis = CollisionInvariantBasis::new(&grid);
        let d = AxisOp::derivative(grid.n_axis, grid.spacing);
        let inv: Vec<f64> = grid.axis_sqrt_mu.iter().map(|x| 1.0 / x).collect();
        let g = d.scaled(&grid.axis_sqrt_mu, &inv);
        let d_t = d.transpose();
        let g_t = g.transpose();
        CollisionOperators { grid, table, maxwellian, basis, d, d_t, g, g_t }
    }

    #[inline]
    pub fn n_v(&self) -> usize {
        self.grid.len()
    }

    /// `(G_1 f, G_2 f, G_3 f)`.
    pub fn apply_g(&self, f: &[f64]) -> [Vec<f64>; 3] {
        gradient(&self.g, f)
    }

    /// `sum_a G_a^T y_a`.
    pub fn apply_g_t(&self, y: &[Vec<f64>; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_v()];
        for (a, ya) in y.iter().enumerate() {
            self.g_t.apply_add(a, ya, &mut out);
        }
        out
    }

    /// `sum_a D_a^T y_a`.
    pub fn apply_d_t(&self, y: &[Vec<f64>; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_v()];
        for (a, ya) in y.iter().enumerate() {
            self.d_t.apply_add(a, ya, &mut out);
        }
        out
    }

    fn sigma_times(sigma: &[Sym3], y: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
        let n = sigma.len();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for k in 0..n {
            let r = sym::matvec(&sigma[k], &[y[0][k], y[1][k], y[2][k]]);
            for a in 0..3 {
                out[a][k] = r[a];
            }
        }
        out
    }

    fn kernel_part(&self, y: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
        let s = &self.grid.sqrt_mu;
        let w: Vec<Vec<f64>> = y.iter().map(|c| c.iter().zip(s).map(|(a, b)| a * b).collect()).collect();
        let mut c = self.table.conv_vector([&w[0], &w[1], &w[2]]);
        for comp in c.iter_mut() {
            comp.iter_mut().zip(s).for_each(|(a, b)| *a *= b);
        }
        c
    }

    pub fn apply_a(&self, f: &[f64]) -> Vec<f64> {
        let y = Self::sigma_times(&self.maxwellian.sigma, &self.apply_g(f));
        let mut out = self.apply_g_t(&y);
        out.iter_mut().for_each(|x| *x = -*x);
        out
    }

    pub fn apply_k(&self, f: &[f64]) -> Vec<f64> {
        self.apply_g_t(&self.kernel_part(&self.apply_g(f)))
    }

    pub fn apply_l(&self, f: &[f64]) -> Vec<f64> {
        let gf = self.apply_g(f);
        let mut y = Self::sigma_times(&self.maxwellian.sigma, &gf);
        let k = self.kernel_part(&gf);
        for a in 0..3 {
            y[a].iter_mut().zip(&k[a]).for_each(|(x, z)| *x -= z);
        }
        self.apply_g_t(&y)
    }

    /// `<L f, f>` without forming `L f`: `(G f)^T N (G f)` on the lattice.
    pub fn l_form(&self, f: &[f64]) -> f64 {
        let lf = self.apply_l(f);
        self.grid.dot_v(&lf, f)
    }

    pub fn gamma_coefficients(&self, g: &[f64]) -> GammaCoefficients {
        let sg: Vec<f64> = g.iter().zip(&self.grid.sqrt_mu).map(|(a, b)| a * b).collect();
        let a = self.table.conv_scalar(&sg);
        let mut dg = self.fitted_gradient(g);
        for d in dg.iter_mut() {
            d.iter_mut().zip(&self.grid.sqrt_mu).for_each(|(x, s)| *x *= s);
        }
        let b = self.table.conv_vector([&dg[0], &dg[1], &dg[2]]);
        GammaCoefficients { a, b }
    }

    /// `mu^{-1/2} grad(sqrt(mu) f)` as `G f - 2 v f`. Both halves of `Gamma`
    /// share it, which keeps the discrete momentum and energy balance.
    fn fitted_gradient(&self, f: &[f64]) -> [Vec<f64>; 3] {
        let nodes = &self.grid.nodes;
        let mut df = self.apply_g(f);
        for (a, d) in df.iter_mut().enumerate() {
            for k in 0..f.len() {
                d[k] -= 2.0 * nodes[k][a] * f[k];
            }
        }
        df
    }

    /// `Gamma[g, f] = mu^{-1/2} Q_h[sqrt(mu) g, sqrt(mu) f]` written as
    /// `-G^T (a (G f - 2 v f) - f b)`. Routing the derivative of `sqrt(mu) f`
    /// through `G` keeps it accurate relative to `mu` in the tails.
    pub fn apply_gamma_with(&self, coeffs: &GammaCoefficients, f: &[f64]) -> Vec<f64> {
        let df = self.fitted_gradient(f);
        let mut y = Self::sigma_times(&coeffs.a, &df);
        for a in 0..3 {
            for k in 0..f.len() {
                y[a][k] -= f[k] * coeffs.b[a][k];
            }
        }
        self.apply_g_t(&y).into_iter().map(|x| -x).collect()
    }

    pub fn apply_gamma(&self, g: &[f64], f: &[f64]) -> Vec<f64> {
        self.apply_gamma_with(&self.gamma_coefficients(g), f)
    }

    /// `(Pf, [a, b1, b2, b3, c])` for one profile.
    pub fn project_p_cell(&self, f: &[f64]) -> (Vec<f64>, [f64; 5]) {
        let e = &self.basis.e;
        let p: Vec<f64> = (0..5).map(|i| self.grid.dot_v(f, &e[i])).collect();
        let mut pf = vec![0.0; f.len()];
        for i in 0..5 {
            for (x, y) in pf.iter_mut().zip(&e[i]) {
                *x += p[i] * y;
            }
        }
        let mut coef = [0.0; 5];
        for j in 0..5 {
            coef[j] = (0..5).map(|i| p[i] * self.basis.m[i][j]).sum();
        }
        (pf, coef)
    }

    pub fn project_p(&self, f: &DistributionField, exec: Exec) -> (DistributionField, MacroMoments) {
        let parts = exec.map(f.n_cells, |c| self.project_p_cell(f.cell(c)));
        let mut out = f.clone();
        let mut mm = MacroMoments { a: Vec::new(), b: Vec::new(), c: Vec::new() };
        for (c, (pf, co)) in parts.into_iter().enumerate() {
            out.cell_mut(c).copy_from_slice(&pf);
            mm.a.push(co[0]);
            mm.b.push([co[1], co[2], co[3]]);
            mm.c.push(co[4]);
        }
        (out, mm)
    }

    /// `sum_v <v>^{2 theta} [sigma^{ij} D_i f D_j g + sigma^{ij} v_i v_j f g] h^3`
    /// with the Maxwellian lattice sigma.
    pub fn sigma_inner_cell(&self, f: &[f64], g: &[f64], theta: f64) -> f64 {
        let w = self.grid.weight(2.0 * theta);
        let df = gradient(&self.d, f);
        let dg = if std::ptr::eq(f, g) { df.clone() } else { gradient(&self.d, g) };
        let terms = (0..f.len()).map(|k| {
            let s = &self.maxwellian.sigma[k];
            let v = &self.grid.nodes[k];
            let a = [df[0][k], df[1][k], df[2][k]];
            let b = [dg[0][k], dg[1][k], dg[2][k]];
            w[k] * (sym::quad(s, &a, &b) + sym::quad(s, v, v) * f[k] * g[k])
        });
        ksum(terms) * self.grid.cell_volume()
    }

    pub fn sigma_inner(&self, f: &DistributionField, g: &DistributionField, mesh: &SpatialMesh, theta: f64, exec: Exec) -> f64 {
        let per = exec.map(f.n_cells, |c| mesh.volumes[c] * self.sigma_inner_cell(f.cell(c), g.cell(c), theta));
        ksum(per)
    }

    pub fn apply_field(&self, f: &DistributionField, exec: Exec, op: impl Fn(&Self, &[f64]) -> Vec<f64> + Sync + Send) -> DistributionField {
        let parts = exec.map(f.n_cells, |c| op(self, f.cell(c)));
        let mut out = f.clone();
        for (c, p) in parts.into_iter().enumerate() {
            out.cell_mut(c).copy_from_slice(&p);
        }
        out
    }

    pub fn rearranged(&self, g: &[f64]) -> RearrangedCoefficients<'_> {
        RearrangedCoefficients::new(self, g)
    }

    /// Dense `(A, K, L)` assembled entry by entry from direct kernel sums.
    /// Intended for small grids only.
    pub fn dense_operators(&self) -> DenseOperators {
        let nv = self.n_v();
        let grid = &self.grid;
        let gmats: Vec<DMatrix<f64>> = (0..3).map(|a| axis_dense(&self.g, a, grid.n_axis)).collect();
        let sigma = self.table.conv_scalar_direct(&grid.mu);
        let s = &grid.sqrt_mu;
        let w3 = grid.cell_volume();
        let mut a_mat = DMatrix::zeros(nv, nv);
        let mut k_mat = DMatrix::zeros(nv, nv);
        for i in 0..3 {
            for j in 0..3 {
                let q = sym::slot(i, j);
                let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(nv, sigma.iter().map(|m| m[q])));
                let mut kij = DMatrix::zeros(nv, nv);
                for a in 0..nv {
                    let (ai, aj, ak) = grid.unindex(a);
                    for b in 0..nv {
                        let (bi, bj, bk) = grid.unindex(b);
                        let t = self.table.offset_value([ai as i64 - bi as i64, aj as i64 - bj as i64, ak as i64 - bk as i64]);
                        kij[(a, b)] = s[a] * w3 * t[q] * s[b];
                    }
                }
                a_mat -= gmats[i].transpose() * diag * &gmats[j];
                k_mat += gmats[i].transpose() * kij * &gmats[j];
            }
        }
        let l_mat = -(&a_mat) - &k_mat;
        DenseOperators { a: a_mat, k: k_mat, l: l_mat }
    }
}

fn axis_dense(op: &AxisOp, axis: usize, n: usize) -> DMatrix<f64> {
    let nv = n * n * n;
    let mut m = DMatrix::zeros(nv, nv);
    let mut e = vec![0.0; nv];
    let mut col = vec![0.0; nv];
    for b in 0..nv {
        e[b] = 1.0;
        op.apply(axis, &e, &mut col);
        for a in 0..nv {
            m[(a, b)] = col[a];
        }
        e[b] = 0.0;
    }
    m
}

pub struct DenseOperators {
    pub a: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

/// Kinetic Fokker-Planck splitting of `-L f + Gamma[g, f]` into
/// `div(sigma_G grad f) + a_g . grad f + Kbar_g f`.
///
/// The first two pieces use the plain centred `D`; `Kbar_g` is the discrete
/// remainder, so the three pieces reproduce the operator exactly. In the
/// continuum limit the remainder carries no velocity derivatives.
pub struct RearrangedCoefficients<'a> {
    ops: &'a CollisionOperators,
    pub sigma_g: Vec<Sym3>,
    pub a_g: Vec<[f64; 3]>,
    gamma: GammaCoefficients,
}

impl<'a> RearrangedCoefficients<'a> {
    fn new(ops: &'a CollisionOperators, g: &[f64]) -> Self {
        let (sigma_g, a_g) = crate::landau::cell_coefficients(&ops.table, &ops.grid, &ops.maxwellian.sigma, &ops.d, g);
        RearrangedCoefficients { ops, sigma_g, a_g, gamma: ops.gamma_coefficients(g) }
    }

    /// Conservative `div(sigma_G grad f)`.
    pub fn diffusion(&self, f: &[f64]) -> Vec<f64> {
        let df = gradient(&self.ops.d, f);
        let y = CollisionOperators::sigma_times(&self.sigma_g, &df);
        self.ops.apply_d_t(&y).into_iter().map(|x| -x).collect()
    }

    pub fn drift(&self, f: &[f64]) -> Vec<f64> {
        let df = gradient(&self.ops.d, f);
        (0..f.len()).map(|k| self.a_g[k][0] * df[0][k] + self.a_g[k][1] * df[1][k] + self.a_g[k][2] * df[2][k]).collect()
    }

    pub fn kbar(&self, f: &[f64]) -> Vec<f64> {
        let mut out = self.ops.apply_gamma_with(&self.gamma, f);
        let lf = self.ops.apply_l(f);
        let (dif, dr) = (self.diffusion(f), self.drift(f));
        for k in 0..f.len() {
            out[k] -= lf[k] + dif[k] + dr[k];
        }
        out
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let (a, b, c) = (self.diffusion(f), self.drift(f), self.kbar(f));
        (0..f.len()).map(|k| a[k] + b[k] + c[k]).collect()
    }

    /// Smallest eigenvalue of `sigma_G`.
    pub fn min_eigenvalue(&self) -> f64 {
        self.sigma_g.iter().map(|s| sym::eigenvalues(s)[0]).fold(f64::INFINITY, f64::min)
    }
}

/// Random smooth test profiles `sqrt(mu) (p(v) + sum of Gaussian bumps)` with
/// `p` quadratic. Keeping `f / sqrt(mu)` smooth and bounded keeps the profile
/// resolved by the derivative stencils out to `v_max`.
pub fn random_smooth_profile(grid: &VelocityGrid, rng: &mut impl rand::Rng) -> Vec<f64> {
    let bumps: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let c = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            (c, rng.gen_range(0.6..1.5), rng.gen_range(-1.0..1.0))
        })
        .collect();
    let p: [f64; 10] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    grid.nodes
        .iter()
        .zip(&grid.sqrt_mu)
        .map(|(v, s)| {
            let mut val = 0.0;
            for (c, w, a) in &bumps {
                let r2 = (v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2);
                val += a * (-r2 / (w * w)).exp();
            }
            let poly = p[0] + p[1] * v[0] + p[2] * v[1] + p[3] * v[2] + p[4] * v[0] * v[1] + p[5] * v[1] * v[2] + p[6] * v[0] * v[2]
                + p[7] * v[0] * v[0] + p[8] * v[1] * v[1] + p[9] * v[2] * v[2];
            (val + poly) * s
        })
        .collect()
}

/// `<v>^theta`-weighted `L^2_v` norm of one profile.
pub fn weighted_l2_cell(grid: &VelocityGrid, f: &[f64], theta: f64) -> f64 {
    let w = grid.weight(2.0 * theta);
    (ksum(f.iter().zip(w.iter()).map(|(x, y)| x * x * y)) * grid.cell_volume()).sqrt()
}

