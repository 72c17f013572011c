//! Wall geometry: implicit domains, specular reflection, rotational symmetry,
//! and boundary-flattening charts with their mirror extension.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Result, VplError};
use crate::sym::{self, Sym3};

pub type Vec3 = [f64; 3];

#[inline]
fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// `Omega = { zeta < 0 }`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum ImplicitDomain {
    Ball { center: Vec3, radius: f64 },
    /// `zeta = x1 (x1 - L)`.
    Slab { length: f64 },
    /// Infinite cylinder about the `x3` axis.
    Cylinder { radius: f64 },
    /// `|x_i| < half_i`; `zeta = max_i (|x_i| - half_i)` (Lipschitz only).
    AxisBox { half: Vec3 },
    /// Planar disk in `(x1, x2)`.
    Disk { radius: f64 },
}

impl ImplicitDomain {
    pub fn zeta(&self, x: &Vec3) -> f64 {
        match self {
            ImplicitDomain::Ball { center, radius } => {
                let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                dot(&d, &d) - radius * radius
            }
            ImplicitDomain::Slab { length } => x[0] * (x[0] - length),
            ImplicitDomain::Cylinder { radius } | ImplicitDomain::Disk { radius } => x[0] * x[0] + x[1] * x[1] - radius * radius,
            ImplicitDomain::AxisBox { half } => (0..3).map(|i| x[i].abs() - half[i]).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn grad_zeta(&self, x: &Vec3) -> Vec3 {
        match self {
            ImplicitDomain::Ball { center, .. } => [2.0 * (x[0] - center[0]), 2.0 * (x[1] - center[1]), 2.0 * (x[2] - center[2])],
            ImplicitDomain::Slab { length } => [2.0 * x[0] - length, 0.0, 0.0],
            ImplicitDomain::Cylinder { .. } | ImplicitDomain::Disk { .. } => [2.0 * x[0], 2.0 * x[1], 0.0],
            ImplicitDomain::AxisBox { half } => {
                let i = (0..3).max_by(|&a, &b| (x[a].abs() - half[a]).total_cmp(&(x[b].abs() - half[b]))).unwrap();
                let mut g = [0.0; 3];
                g[i] = x[i].signum();
                g
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            ImplicitDomain::Ball { center, radius } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            ImplicitDomain::Slab { length } => ([0.0, -1.0, -1.0], [*length, 1.0, 1.0]),
            ImplicitDomain::Cylinder { radius } => ([-radius, -radius, -1.0], [*radius, *radius, 1.0]),
            ImplicitDomain::Disk { radius } => ([-radius, -radius, 0.0], [*radius, *radius, 0.0]),
            ImplicitDomain::AxisBox { half } => ([-half[0], -half[1], -half[2]], *half),
        }
    }

    /// Distance to the wall from an interior point (signed positive inside).
    pub fn wall_distance(&self, x: &Vec3) -> f64 {
        match self {
            ImplicitDomain::Ball { center, radius } => radius - norm(&[x[0] - center[0], x[1] - center[1], x[2] - center[2]]),
            ImplicitDomain::Slab { length } => x[0].min(length - x[0]),
            ImplicitDomain::Cylinder { radius } | ImplicitDomain::Disk { radius } => radius - (x[0] * x[0] + x[1] * x[1]).sqrt(),
            ImplicitDomain::AxisBox { half } => (0..3).map(|i| half[i] - x[i].abs()).fold(f64::INFINITY, f64::min),
        }
    }

    /// Unit normal of the nearest wall, extended into the interior.
    fn tube_direction(&self, x: &Vec3) -> Vec3 {
        let g = match self {
            ImplicitDomain::Slab { length } => [if x[0] < 0.5 * length { -1.0 } else { 1.0 }, 0.0, 0.0],
            ImplicitDomain::AxisBox { half } => {
                let i = (0..3).min_by(|&a, &b| (half[a] - x[a].abs()).total_cmp(&(half[b] - x[b].abs()))).unwrap();
                let mut g = [0.0; 3];
                g[i] = if x[i] < 0.0 { -1.0 } else { 1.0 };
                g
            }
            _ => self.grad_zeta(x),
        };
        let n = norm(&g);
        if n > 0.0 {
            [g[0] / n, g[1] / n, g[2] / n]
        } else {
            [0.0, 0.0, 1.0]
        }
    }

    /// Random points on the wall.
    pub fn sample_boundary(&self, count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        let unit = |rng: &mut dyn rand::RngCore| loop {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let r = norm(&p);
            if r > 1e-3 && r <= 1.0 {
                return [p[0] / r, p[1] / r, p[2] / r];
            }
        };
        (0..count)
            .map(|_| match self {
                ImplicitDomain::Ball { center, radius } => {
                    let u = unit(rng);
                    [center[0] + radius * u[0], center[1] + radius * u[1], center[2] + radius * u[2]]
                }
                ImplicitDomain::Slab { length } => {
                    let x = if rng.gen_bool(0.5) { 0.0 } else { *length };
                    [x, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
                }
                ImplicitDomain::Cylinder { radius } | ImplicitDomain::Disk { radius } => {
                    let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let z = if matches!(self, ImplicitDomain::Disk { .. }) { 0.0 } else { rng.gen_range(-1.0..1.0) };
                    [radius * t.cos(), radius * t.sin(), z]
                }
                ImplicitDomain::AxisBox { half } => {
                    // Points on a face, biased towards its corners.
                    let i = rng.gen_range(0..3);
                    let mut p = [0.0; 3];
                    for j in 0..3 {
                        let s: f64 = rng.gen_range(0.5..1.0);
                        p[j] = if rng.gen_bool(0.5) { s * half[j] } else { -s * half[j] };
                    }
                    p[i] = if rng.gen_bool(0.5) { half[i] } else { -half[i] };
                    p
                }
            })
            .collect()
    }
}

pub const TOL_BOUNDARY: f64 = 1e-10;

/// `grad(zeta) / |grad(zeta)|` at a wall point.
pub fn outward_normal(domain: &ImplicitDomain, x: &Vec3) -> Result<Vec3> {
    let scale = domain.bounding_box().1.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if domain.zeta(x).abs() > TOL_BOUNDARY * scale * scale {
        return Err(VplError::InvalidInput(format!("point {x:?} is not on the boundary")));
    }
    let g = domain.grad_zeta(x);
    let n = norm(&g);
    if n < 1e-12 {
        return Err(VplError::InvalidInput("grad zeta vanishes on the boundary".into()));
    }
    Ok([g[0] / n, g[1] / n, g[2] / n])
}

/// `R_x v = v - 2 (n.v) n`.
pub fn specular_reflect(n: &Vec3, v: &Vec3) -> Vec3 {
    let d = dot(n, v);
    [v[0] - 2.0 * d * n[0], v[1] - 2.0 * d * n[1], v[2] - 2.0 * d * n[2]]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaClass {
    Outgoing,
    Incoming,
    Grazing,
}

/// Default grazing band relative to `|v|`.
pub const TOL_GRAZING: f64 = 1e-12;

pub fn classify_gamma(n: &Vec3, v: &Vec3) -> GammaClass {
    let d = dot(n, v);
    if d.abs() <= TOL_GRAZING * norm(v) {
        GammaClass::Grazing
    } else if d > 0.0 {
        GammaClass::Outgoing
    } else {
        GammaClass::Incoming
    }
}

/// `max |((x - x0) x omega) . n_x|` over sampled wall points.
pub fn rotational_symmetry_residual(domain: &ImplicitDomain, x0: &Vec3, omega: &Vec3, samples: usize, rng: &mut impl Rng) -> Result<f64> {
    if norm(omega) == 0.0 {
        return Err(VplError::InvalidInput("omega must be nonzero".into()));
    }
    let mut worst = 0.0f64;
    for x in domain.sample_boundary(samples, rng) {
        let n = outward_normal(domain, &x)?;
        let r = [x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]];
        worst = worst.max(dot(&cross(&r, omega), &n).abs());
    }
    Ok(worst)
}

/// Graph `x3 = rho(x1, x2)` of a wall patch, with analytic derivatives.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum Chart {
    Flat,
    /// `rho = a y1^2 + b y2^2`.
    Paraboloid { a: f64, b: f64 },
    /// Lower cap of a sphere of radius `R` touching the origin:
    /// `rho = sqrt(R^2 - y1^2 - y2^2) - R`.
    SphereCap { radius: f64 },
    /// `rho = sum c y1^i y2^j` for entries `[i, j, c]`.
    Polynomial { coefficients: Vec<[f64; 3]> },
}

/// `rho` and its partials up to third order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RhoDerivs {
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
    pub r11: f64,
    pub r12: f64,
    pub r22: f64,
    pub r111: f64,
    pub r112: f64,
    pub r122: f64,
    pub r222: f64,
}

fn falling(p: i32, k: i32) -> f64 {
    (0..k).map(|m| (p - m) as f64).product()
}

impl Chart {
    pub fn derivs(&self, y1: f64, y2: f64) -> RhoDerivs {
        match self {
            Chart::Flat => RhoDerivs::default(),
            Chart::Paraboloid { a, b } => RhoDerivs {
                r: a * y1 * y1 + b * y2 * y2,
                r1: 2.0 * a * y1,
                r2: 2.0 * b * y2,
                r11: 2.0 * a,
                r22: 2.0 * b,
                ..Default::default()
            },
            Chart::SphereCap { radius } => {
                let r2 = radius * radius;
                let q = r2 - y1 * y1 - y2 * y2;
                let s = q.sqrt();
                let s3 = s * q;
                let s5 = s3 * q;
                RhoDerivs {
                    r: s - radius,
                    r1: -y1 / s,
                    r2: -y2 / s,
                    r11: -(r2 - y2 * y2) / s3,
                    r12: -y1 * y2 / s3,
                    r22: -(r2 - y1 * y1) / s3,
                    r111: -3.0 * y1 * (r2 - y2 * y2) / s5,
                    r112: -y2 * (r2 + 2.0 * y1 * y1 - y2 * y2) / s5,
                    r122: -y1 * (r2 + 2.0 * y2 * y2 - y1 * y1) / s5,
                    r222: -3.0 * y2 * (r2 - y1 * y1) / s5,
                }
            }
            Chart::Polynomial { coefficients } => {
                let mut d = RhoDerivs::default();
                for &[i, j, c] in coefficients {
                    let (i, j) = (i as i32, j as i32);
                    let term = |a: i32, b: i32| {
                        if a > i || b > j {
                            0.0
                        } else {
                            c * falling(i, a) * falling(j, b) * y1.powi(i - a) * y2.powi(j - b)
                        }
                    };
                    d.r += term(0, 0);
                    d.r1 += term(1, 0);
                    d.r2 += term(0, 1);
                    d.r11 += term(2, 0);
                    d.r12 += term(1, 1);
                    d.r22 += term(0, 2);
                    d.r111 += term(3, 0);
                    d.r112 += term(2, 1);
                    d.r122 += term(1, 2);
                    d.r222 += term(0, 3);
                }
                d
            }
        }
    }

    /// The wall as an implicit function `zeta = x3 - rho(x1, x2)` (domain below).
    pub fn zeta(&self, x: &Vec3) -> f64 {
        x[2] - self.derivs(x[0], x[1]).r
    }

    /// Unnormalized normal `d1 eta x d2 eta = (-rho1, -rho2, 1)`.
    pub fn normal(&self, y1: f64, y2: f64) -> Vec3 {
        let d = self.derivs(y1, y2);
        let n = [-d.r1, -d.r2, 1.0];
        let l = norm(&n);
        [n[0] / l, n[1] / l, n[2] / l]
    }
}

/// Everything the flattening map produces at one point `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlattenMaps {
    pub x: Vec3,
    pub a_inv: Matrix3<f64>,
    pub a: Matrix3<f64>,
    pub c: Matrix3<f64>,
    pub det_a_inv: f64,
}

/// `det(A^{-1})` by the expanded quadratic in `y3`.
pub fn det_a_inv(d: &RhoDerivs, y3: f64) -> f64 {
    y3 * y3 * (d.r11 * d.r22 - d.r12 * d.r12)
        + y3 * (2.0 * d.r1 * d.r2 * d.r12 - d.r2 * d.r2 * d.r11 - d.r1 * d.r1 * d.r22 - d.r11 - d.r22)
        + (d.r1 * d.r1 + d.r2 * d.r2 + 1.0)
}

pub fn jac_a_inv(d: &RhoDerivs, y3: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - y3 * d.r11, -y3 * d.r12, -d.r1,
        -y3 * d.r12, 1.0 - y3 * d.r22, -d.r2,
        d.r1, d.r2, 1.0,
    )
}

/// `A = adj(A^{-1}) / det(A^{-1})` entry by entry.
pub fn jac_a(d: &RhoDerivs, y3: f64) -> Matrix3<f64> {
    let (r1, r2, r11, r12, r22) = (d.r1, d.r2, d.r11, d.r12, d.r22);
    let adj = Matrix3::new(
        (1.0 + r2 * r2) - y3 * r22,
        -r1 * r2 + y3 * r12,
        r1 + y3 * (r2 * r12 - r1 * r22),
        -r1 * r2 + y3 * r12,
        (1.0 + r1 * r1) - y3 * r11,
        r2 + y3 * (r1 * r12 - r2 * r11),
        -r1 + y3 * (r1 * r22 - r2 * r12),
        -r2 + y3 * (r2 * r11 - r1 * r12),
        1.0 - y3 * (r11 + r22) + y3 * y3 * (r11 * r22 - r12 * r12),
    );
    adj / det_a_inv(d, y3)
}

/// `C = A^{-T} A^{-1}` entry by entry.
pub fn mat_c(d: &RhoDerivs, y3: f64) -> Matrix3<f64> {
    let (r1, r2, r11, r12, r22) = (d.r1, d.r2, d.r11, d.r12, d.r22);
    let c11 = y3 * y3 * (r11 * r11 + r12 * r12) - 2.0 * y3 * r11 + (r1 * r1 + 1.0);
    let c12 = y3 * y3 * r12 * (r11 + r22) - 2.0 * y3 * r12 + r1 * r2;
    let c13 = y3 * (r1 * r11 + r2 * r12);
    let c22 = y3 * y3 * (r12 * r12 + r22 * r22) - 2.0 * y3 * r22 + (r2 * r2 + 1.0);
    let c23 = y3 * (r1 * r12 + r2 * r22);
    let c33 = r1 * r1 + r2 * r2 + 1.0;
    Matrix3::new(c11, c12, c13, c12, c22, c23, c13, c23, c33)
}

/// `B = dv/dy` for `v = A^{-1}(y) w`.
pub fn mat_b(d: &RhoDerivs, y3: f64, w: &Vec3) -> Matrix3<f64> {
    let [w1, w2, w3] = *w;
    Matrix3::new(
        -y3 * d.r111 * w1 - y3 * d.r112 * w2 - d.r11 * w3,
        -y3 * d.r112 * w1 - y3 * d.r122 * w2 - d.r12 * w3,
        -d.r11 * w1 - d.r12 * w2,
        -y3 * d.r112 * w1 - y3 * d.r122 * w2 - d.r12 * w3,
        -y3 * d.r122 * w1 - y3 * d.r222 * w2 - d.r22 * w3,
        -d.r12 * w1 - d.r22 * w2,
        d.r11 * w1 + d.r12 * w2,
        d.r12 * w1 + d.r22 * w2,
        0.0,
    )
}

/// `psi^{-1}(y) = (y1 - y3 rho1, y2 - y3 rho2, rho + y3)`.
pub fn psi_inv(chart: &Chart, y: &Vec3) -> Vec3 {
    let d = chart.derivs(y[0], y[1]);
    [y[0] - y[2] * d.r1, y[1] - y[2] * d.r2, d.r + y[2]]
}

pub fn flatten_maps(chart: &Chart, y: &Vec3) -> Result<FlattenMaps> {
    let d = chart.derivs(y[0], y[1]);
    let det = det_a_inv(&d, y[2]);
    if !(det > 0.0) {
        return Err(VplError::DegenerateChart(det));
    }
    Ok(FlattenMaps { x: psi_inv(chart, y), a_inv: jac_a_inv(&d, y[2]), a: jac_a(&d, y[2]), c: mat_c(&d, y[2]), det_a_inv: det })
}

pub const R_FLIP: [f64; 3] = [1.0, 1.0, -1.0];

#[inline]
pub fn flip(v: &Vec3) -> Vec3 {
    [v[0], v[1], -v[2]]
}

/// `|A^{-1}(R w) - R_x (A^{-1} w)|` at `(y1, y2, 0)`.
pub fn specular_commute_residual(chart: &Chart, y1: f64, y2: f64, w: &Vec3) -> f64 {
    specular_commute_residual_at(chart, &[y1, y2, 0.0], w)
}

/// Same residual at a general `y` (only claimed to vanish on `y3 = 0`).
pub fn specular_commute_residual_at(chart: &Chart, y: &Vec3, w: &Vec3) -> f64 {
    let d = chart.derivs(y[0], y[1]);
    let ai = jac_a_inv(&d, y[2]);
    let lhs = ai * Vector3::from(flip(w));
    let v = ai * Vector3::from(*w);
    let rhs = specular_reflect(&chart.normal(y[0], y[1]), &[v[0], v[1], v[2]]);
    ((lhs[0] - rhs[0]).powi(2) + (lhs[1] - rhs[1]).powi(2) + (lhs[2] - rhs[2]).powi(2)).sqrt()
}

/// Largest `t` such that `det A^{-1}(y1, y2, s) > 0` for all `|s| < t` at the
/// given samples: an estimate of the usable tube half-width.
pub fn tube_half_width(chart: &Chart, samples: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for &(y1, y2) in samples {
        let d = chart.derivs(y1, y2);
        let a = d.r11 * d.r22 - d.r12 * d.r12;
        let b = 2.0 * d.r1 * d.r2 * d.r12 - d.r2 * d.r2 * d.r11 - d.r1 * d.r1 * d.r22 - d.r11 - d.r22;
        let c = d.r1 * d.r1 + d.r2 * d.r2 + 1.0;
        let roots: Vec<f64> = if a.abs() < 1e-300 {
            if b != 0.0 { vec![-c / b] } else { vec![] }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                vec![]
            } else {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                vec![q / a, c / q]
            }
        };
        for r in roots {
            best = best.min(r.abs());
        }
    }
    best
}

/// Extension of a lower-half-space field by `f(y, w) = f(R y, R w)` above.
pub struct MirrorExtension<F: Fn(&Vec3, &Vec3) -> f64> {
    lower: F,
}

impl<F: Fn(&Vec3, &Vec3) -> f64> MirrorExtension<F> {
    /// Checks the specular condition `f(y, w) = f(y, R w)` on `y3 = 0` at the
    /// given `(y1, y2, w)` samples.
    pub fn new(lower: F, samples: &[(f64, f64, Vec3)], tol: f64) -> Result<Self> {
        let mut worst = 0.0f64;
        for (y1, y2, w) in samples {
            let y = [*y1, *y2, 0.0];
            worst = worst.max((lower(&y, w) - lower(&y, &flip(w))).abs());
        }
        if worst > tol {
            return Err(VplError::InvalidInput(format!("specular mismatch {worst:e} exceeds {tol:e}")));
        }
        Ok(MirrorExtension { lower })
    }

    pub fn eval(&self, y: &Vec3, w: &Vec3) -> f64 {
        if y[2] <= 0.0 {
            (self.lower)(y, w)
        } else {
            (self.lower)(&flip(y), &flip(w))
        }
    }

    /// Jump at `y3 = 0` between the lower value and the upper limit
    /// extrapolated linearly from the nodes `dy` and `2 dy` above.
    pub fn interface_jump(&self, samples: &[(f64, f64, Vec3)], dy: f64) -> f64 {
        let mut worst = 0.0f64;
        for (y1, y2, w) in samples {
            let below = self.eval(&[*y1, *y2, 0.0], w);
            let above = 2.0 * self.eval(&[*y1, *y2, dy], w) - self.eval(&[*y1, *y2, 2.0 * dy], w);
            worst = worst.max((below - above).abs());
        }
        worst
    }
}

/// Transformed diffusion matrix `A sigma A^T` below the interface and
/// `R A(Ry) sigma(Ry, Rw) A(Ry)^T R` above. `sigma_phys(x, v)` is the
/// physical-space coefficient.
pub fn transformed_diffusion(chart: &Chart, sigma_phys: &dyn Fn(&Vec3, &Vec3) -> Sym3, y: &Vec3, w: &Vec3) -> Result<Matrix3<f64>> {
    let below = |y: &Vec3, w: &Vec3| -> Result<Matrix3<f64>> {
        let m = flatten_maps(chart, y)?;
        let v = m.a_inv * Vector3::from(*w);
        let s = sym::to_matrix(&sigma_phys(&m.x, &[v[0], v[1], v[2]]));
        Ok(m.a * s * m.a.transpose())
    };
    if y[2] <= 0.0 {
        below(y, w)
    } else {
        let r = Matrix3::from_diagonal(&Vector3::from(R_FLIP));
        Ok(r * below(&flip(y), &flip(w))? * r)
    }
}

/// `|AA(y3 = 0-) - AA(y3 = 0+)|_max` at `(y1, y2, w)`.
pub fn diffusion_interface_gap(chart: &Chart, sigma_phys: &dyn Fn(&Vec3, &Vec3) -> Sym3, y1: f64, y2: f64, w: &Vec3) -> Result<f64> {
    let lo = transformed_diffusion(chart, sigma_phys, &[y1, y2, 0.0], w)?;
    // Upper branch evaluated at y3 = 0 exactly (its one-sided limit).
    let r = Matrix3::from_diagonal(&Vector3::from(R_FLIP));
    let m = flatten_maps(chart, &[y1, y2, 0.0])?;
    let v = m.a_inv * Vector3::from(flip(w));
    let s = sym::to_matrix(&sigma_phys(&m.x, &[v[0], v[1], v[2]]));
    let hi = r * (m.a * s * m.a.transpose()) * r;
    Ok((lo - hi).amax())
}

/// Drift `AA B w + A a - A E` below and its mirror above.
#[allow(clippy::type_complexity)]
pub fn transformed_drift(
    chart: &Chart,
    drift_phys: &dyn Fn(&Vec3, &Vec3) -> Vec3,
    e_phys: &dyn Fn(&Vec3) -> Vec3,
    y: &Vec3,
    w: &Vec3,
) -> Result<Vec3> {
    let below = |y: &Vec3, w: &Vec3| -> Result<Vector3<f64>> {
        let m = flatten_maps(chart, y)?;
        let d = chart.derivs(y[0], y[1]);
        let b = mat_b(&d, y[2], w);
        let v = m.a_inv * Vector3::from(*w);
        let vv = [v[0], v[1], v[2]];
        let a = Vector3::from(drift_phys(&m.x, &vv));
        let e = Vector3::from(e_phys(&m.x));
        Ok(m.a * b * Vector3::from(*w) + m.a * a - m.a * e)
    };
    let out = if y[2] <= 0.0 {
        below(y, w)?
    } else {
        let r = below(&flip(y), &flip(w))?;
        Vector3::new(r[0], r[1], -r[2])
    };
    Ok([out[0], out[1], out[2]])
}

/// Zeroth-order multiplier `(A^{-1} w) . E_g` of the transformed equation
/// (mirrored above the interface).
pub fn transformed_multiplier(chart: &Chart, e_phys: &dyn Fn(&Vec3) -> Vec3, y: &Vec3, w: &Vec3) -> Result<f64> {
    let (y, w) = if y[2] <= 0.0 { (*y, *w) } else { (flip(y), flip(w)) };
    let m = flatten_maps(chart, &y)?;
    let v = m.a_inv * Vector3::from(w);
    let e = e_phys(&m.x);
    Ok(v[0] * e[0] + v[1] * e[1] + v[2] * e[2])
}

/// Partition of unity adapted to a wall: `chi_0` lives in the interior, the
/// remaining weights tile the boundary tube `{dist < delta}` by six angular
/// patches about the coordinate directions.
pub struct Partition {
    pub domain: ImplicitDomain,
    pub delta: f64,
}

/// `C^2` step: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

const PATCHES: [Vec3; 6] = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];

impl Partition {
    pub fn new(domain: ImplicitDomain, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(VplError::InvalidInput("delta must be positive".into()));
        }
        Ok(Partition { domain, delta })
    }

    /// `chi~`: 1 within `delta/2` of the wall, 0 beyond `delta`.
    pub fn cutoff(&self, x: &Vec3) -> f64 {
        let d = self.domain.wall_distance(x);
        smootherstep((self.delta - d) / (0.5 * self.delta))
    }

    /// `[chi_0, chi_1, ..., chi_6]`.
    pub fn weights(&self, x: &Vec3) -> Result<[f64; 7]> {
        let t = self.cutoff(x);
        let n = self.domain.tube_direction(x);
        // Cubic bumps around each axis direction; every unit vector has a
        // component above 1/sqrt(3) > 1/2, so the sum never vanishes.
        let b: Vec<f64> = PATCHES.iter().map(|c| (dot(&n, c) - 0.5).max(0.0).powi(3)).collect();
        let total: f64 = b.iter().sum();
        if total <= 0.0 {
            return Err(VplError::Numerical("partition coverage gap".into()));
        }
        let mut w = [0.0; 7];
        w[0] = 1.0 - t;
        for k in 0..6 {
            w[k + 1] = t * b[k] / total;
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(VplError::Numerical(format!("partition sums to {s}")));
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normals_and_reflection() {
        let ball = ImplicitDomain::Ball { center: [0.0; 3], radius: 1.0 };
        assert_eq!(outward_normal(&ball, &[1.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0]);
        let slab = ImplicitDomain::Slab { length: 2.0 };
        assert_eq!(outward_normal(&slab, &[0.0, 0.3, 0.1]).unwrap(), [-1.0, 0.0, 0.0]);
        assert!(outward_normal(&ball, &[0.5, 0.0, 0.0]).is_err());
        let n = [0.0, 0.0, 1.0];
        assert_eq!(specular_reflect(&n, &[1.0, 2.0, 3.0]), [1.0, 2.0, -3.0]);
        assert_eq!(classify_gamma(&n, &[0.0, 0.0, 1.0]), GammaClass::Outgoing);
        assert_eq!(classify_gamma(&n, &[1.0, 0.0, 0.0]), GammaClass::Grazing);
        assert_eq!(classify_gamma(&n, &[0.0, 0.0, -2.0]), GammaClass::Incoming);
    }

    #[test]
    fn flatten_examples() {
        let flat = flatten_maps(&Chart::Flat, &[0.3, -0.2, -0.1]).unwrap();
        assert_eq!(flat.x, [0.3, -0.2, -0.1]);
        assert_eq!(flat.a_inv, Matrix3::identity());
        assert_eq!(flat.c, Matrix3::identity());
        assert_eq!(mat_b(&RhoDerivs::default(), -0.1, &[1.0, 2.0, 3.0]), Matrix3::zeros());
        let par = Chart::Polynomial { coefficients: vec![[2.0, 0.0, 1.0]] };
        let m = flatten_maps(&par, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.a_inv, Matrix3::new(1.0, 0.0, -2.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0));
    }

    #[test]
    fn degenerate_chart_is_rejected() {
        let saddle = Chart::Paraboloid { a: 1.0, b: -1.0 };
        // det = 1 - 4 y3^2 at the origin.
        assert!(matches!(flatten_maps(&saddle, &[0.0, 0.0, 0.6]), Err(VplError::DegenerateChart(_))));
        assert!((tube_half_width(&saddle, &[(0.0, 0.0)]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn partition_sums_to_one() {
        let p = Partition::new(ImplicitDomain::Ball { center: [0.0; 3], radius: 1.0 }, 0.2).unwrap();
        let w = p.weights(&[0.0, 0.95, 0.0]).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let w = p.weights(&[0.0, 0.0, 0.5]).unwrap();
        assert_eq!(w[0], 1.0);
    }
}
