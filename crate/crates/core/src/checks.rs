//! Invariant suites behind `vpl check`. Each check carries the measured value
//! and the bound it was held to.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::diagnostics::{decay_fit, interpolation_constant, quasi_distance, KineticPoint};
use crate::error::{Result, VplError};
use crate::field::{BcKind, PoissonSolver};
use crate::geometry::{flatten_maps, jac_a_inv, specular_commute_residual, Chart, MirrorExtension};
use crate::grid::{SpatialMesh, VelocityGrid};
use crate::landau::{eigenvalue_formulas, KernelTable, OriginRule};
use crate::operators::{random_smooth_profile, CollisionOperators};
use crate::sym;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub kind: Bound,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, kind: Bound::AtMost, passed: value <= bound }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, kind: Bound::AtLeast, passed: value >= bound }
    }

    pub fn line(&self) -> String {
        let op = match self.kind {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {:<32} {:>12.4e} {op} {:.1e}", self.name, self.value, self.bound)
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CheckReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const SUITES: [&str; 5] = ["kernel", "operators", "geometry", "field", "norms"];

pub fn run_suite(name: &str, seed: u64) -> Result<CheckReport> {
    let checks = match name {
        "kernel" => kernel_suite()?,
        "operators" => operators_suite(seed)?,
        "geometry" => geometry_suite(seed)?,
        "field" => field_suite()?,
        "norms" => norms_suite(seed)?,
        _ => return Err(VplError::InvalidInput(format!("unknown suite {name:?}; expected one of {}", SUITES.join(", ")))),
    };
    Ok(CheckReport { suite: name.into(), checks })
}

/// Relative error of the lattice `sigma(0)` against `4 pi / 3`.
pub fn sigma_origin_error(v_max: f64, n_axis: usize) -> Result<f64> {
    let grid = VelocityGrid::new(v_max, n_axis)?;
    let t = KernelTable::new_shifted(&grid, -3.0, OriginRule::Corrected)?;
    let s = t.conv_scalar(&grid.mu);
    let c = n_axis / 2 - 1;
    let want = 4.0 * PI / 3.0;
    let m = s[grid.index(c, c, c)];
    let ev = sym::eigenvalues(&m);
    Ok(ev.iter().map(|e| (e - want).abs()).fold(0.0, f64::max) / want)
}

/// `(max |Phi(w) w|, max eigenvalue error against {0, 1/|w|, 1/|w|})` over
/// every nonzero offset of the table.
pub fn kernel_algebra(v_max: f64, n_axis: usize) -> Result<(f64, f64)> {
    let grid = VelocityGrid::new(v_max, n_axis)?;
    let t = KernelTable::new(&grid, -3.0, OriginRule::Corrected)?;
    let n = grid.n_axis as i64;
    let (mut null, mut eig) = (0.0f64, 0.0f64);
    for a in -(n - 1)..n {
        for b in -(n - 1)..n {
            for c in -(n - 1)..n {
                if (a, b, c) == (0, 0, 0) {
                    continue;
                }
                let w = [a as f64 * grid.spacing, b as f64 * grid.spacing, c as f64 * grid.spacing];
                let m = t.offset_value([a, b, c]);
                let pw = sym::matvec(&m, &w);
                null = null.max(pw.iter().fold(0.0f64, |x, y| x.max(y.abs())));
                let r = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
                let e = sym::eigenvalues(&m);
                eig = eig.max(e[0].abs()).max((e[1] - 1.0 / r).abs()).max((e[2] - 1.0 / r).abs());
            }
        }
    }
    Ok((null, eig))
}

fn kernel_suite() -> Result<Vec<Check>> {
    let (null, eig) = kernel_algebra(6.0, 16)?;
    let e16 = sigma_origin_error(6.0, 16)?;
    let e32 = sigma_origin_error(6.0, 32)?;
    Ok(vec![
        Check::at_most("phi(w) w over offsets", null, 1e-13),
        Check::at_most("phi eigenvalues {0, 1/|w|, 1/|w|}", eig, 1e-12),
        Check::at_most("sigma(0) vs 4pi/3 (n=32)", e32, 1e-3),
        Check::at_least("sigma(0) error ratio 16 -> 32", e16 / e32, 3.5),
    ])
}

fn operators_suite(seed: u64) -> Result<Vec<Check>> {
    let grid = Arc::new(VelocityGrid::new(5.0, 12)?);
    let ops = CollisionOperators::new(grid.clone(), -3.0, OriginRule::Corrected)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = |f: &[f64]| grid.dot_v(f, f).sqrt();
    let null = ops.basis.e.iter().map(|e| norm(&ops.apply_l(e)) / norm(e)).fold(0.0, f64::max);
    let (mut semi, mut orth, mut bil, mut idem, mut split) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let f = random_smooth_profile(&grid, &mut rng);
        let mut g = random_smooth_profile(&grid, &mut rng);
        semi = semi.min(ops.l_form(&f) / grid.dot_v(&f, &f));
        let gm = ops.apply_gamma(&g, &f);
        orth = orth.max(grid.dot_v(&grid.sqrt_mu, &gm).abs() / (norm(&g) * norm(&f)));
        let g2: Vec<f64> = g.iter().map(|x| 2.0 * x).collect();
        let f3: Vec<f64> = f.iter().map(|x| 3.0 * x).collect();
        let gm6 = ops.apply_gamma(&g2, &f3);
        let scale = gm.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        bil = bil.max(gm6.iter().zip(&gm).map(|(a, b)| (a - 6.0 * b).abs()).fold(0.0, f64::max) / (6.0 * scale));
        let (pf, _) = ops.project_p_cell(&f);
        let (ppf, _) = ops.project_p_cell(&pf);
        idem = idem.max(pf.iter().zip(&ppf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / norm(&f));
        g.iter_mut().for_each(|x| *x *= 1e-2);
        let r = ops.rearranged(&g);
        let lhs = r.apply(&f);
        let lf = ops.apply_l(&f);
        let gm = ops.apply_gamma(&g, &f);
        let rhs: Vec<f64> = lf.iter().zip(&gm).map(|(a, b)| b - a).collect();
        let d: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        split = split.max(norm(&d) / norm(&rhs));
    }
    let profiles: Vec<Vec<f64>> = (0..10).map(|_| random_smooth_profile(&grid, &mut rng)).collect();
    let (_, delta) = coercivity_samples(&ops, &profiles);
    Ok(vec![
        Check::at_most("L e_i / e_i (five invariants)", null, 1e-10),
        Check::at_least("sampled coercivity delta", delta, f64::MIN_POSITIVE),
        Check::at_least("<Lf,f>/|f|^2 over samples", semi, -1e-8),
        Check::at_most("<sqrt mu, Gamma[g,f]> / |g||f|", orth, 1e-8),
        Check::at_most("Gamma[2g,3f] - 6 Gamma[g,f]", bil, 1e-12),
        Check::at_most("P(Pf) - Pf", idem, 1e-12),
        Check::at_most("Fokker-Planck split residual", split, 1e-10),
    ])
}

/// `|L e_i| / |e_i|` for the five invariants, for the lattice `L` and for
/// the variant whose diffusion part uses the closed-form `sigma(v)` instead
/// of the lattice convolution. The lattice values sit at roundoff; the
/// second column carries the quadrature error of `sigma` and its order.
pub fn null_space_residuals(v_max: f64, n_axis: usize) -> Result<[(f64, f64); 5]> {
    let grid = Arc::new(VelocityGrid::new(v_max, n_axis)?);
    let ops = CollisionOperators::new(grid.clone(), -3.0, OriginRule::Corrected)?;
    let mut by_radius = std::collections::HashMap::new();
    let mut delta = Vec::with_capacity(grid.len());
    for (k, v) in grid.nodes.iter().enumerate() {
        let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let ep = match by_radius.get(&r2.to_bits()) {
            Some(e) => *e,
            None => {
                let e = eigenvalue_formulas(v, -3.0)?;
                by_radius.insert(r2.to_bits(), e);
                e
            }
        };
        let u = v.map(|x| x / r2.sqrt());
        let mut exact = sym::identity(ep.lambda2);
        for i in 0..3 {
            for j in i..3 {
                exact[sym::slot(i, j)] += (ep.lambda1 - ep.lambda2) * u[i] * u[j];
            }
        }
        let lat = &ops.maxwellian.sigma[k];
        delta.push(std::array::from_fn::<f64, 6, _>(|q| exact[q] - lat[q]));
    }
    let norm = |f: &[f64]| grid.dot_v(f, f).sqrt();
    Ok(std::array::from_fn(|i| {
        let e = &ops.basis.e[i];
        let le = ops.apply_l(e);
        let ge = ops.apply_g(e);
        let mut y = [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]];
        for k in 0..grid.len() {
            let r = sym::matvec(&delta[k], &[ge[0][k], ge[1][k], ge[2][k]]);
            for a in 0..3 {
                y[a][k] = r[a];
            }
        }
        let corr = ops.apply_g_t(&y);
        let hybrid: Vec<f64> = le.iter().zip(&corr).map(|(a, b)| a + b).collect();
        (norm(&le) / norm(e), norm(&hybrid) / norm(e))
    }))
}

/// `(min <Lf,f>/|f|^2, min <Lf,f>/|(I-P)f|^2_sigma)` over `profiles`. The
/// second is the sampled coercivity constant.
pub fn coercivity_samples(ops: &CollisionOperators, profiles: &[Vec<f64>]) -> (f64, f64) {
    let grid = &ops.grid;
    let (mut semi, mut delta) = (f64::INFINITY, f64::INFINITY);
    for f in profiles {
        let lf = ops.l_form(f);
        semi = semi.min(lf / grid.dot_v(f, f));
        let (pf, _) = ops.project_p_cell(f);
        let micro: Vec<f64> = f.iter().zip(&pf).map(|(a, b)| a - b).collect();
        delta = delta.min(lf / ops.sigma_inner_cell(&micro, &micro, 0.0));
    }
    (semi, delta)
}

/// Worst commutative-diagram residual at random boundary points of `chart`.
pub fn commute_residual(chart: &Chart, samples: usize, rng: &mut impl Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (y1, y2) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let w = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        worst = worst.max(specular_commute_residual(chart, y1, y2, &w));
    }
    worst
}

pub fn geometry_charts() -> [(&'static str, Chart); 3] {
    [
        ("flat", Chart::Flat),
        ("paraboloid", Chart::Paraboloid { a: 0.7, b: -0.3 }),
        ("sphere-cap", Chart::SphereCap { radius: 2.0 }),
    ]
}

/// `(|A A^{-1} - I|, |C - A^{-T} A^{-1}|)` maxima at random tube points.
pub fn jacobian_residuals(chart: &Chart, samples: usize, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let (mut inv, mut c) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let y = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)];
        let m = flatten_maps(chart, &y)?;
        inv = inv.max((m.a * m.a_inv - Matrix3::identity()).abs().max());
        let d = chart.derivs(y[0], y[1]);
        let ai = jac_a_inv(&d, y[2]);
        c = c.max((m.c - ai.transpose() * ai).abs().max());
    }
    Ok((inv, c))
}

fn geometry_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, chart) in geometry_charts() {
        out.push(Check::at_most(&format!("commutative diagram ({name})"), commute_residual(&chart, 1000, &mut rng), 1e-12));
        let (inv, c) = jacobian_residuals(&chart, 200, &mut rng)?;
        out.push(Check::at_most(&format!("A A^-1 - I ({name})"), inv, 1e-12));
        out.push(Check::at_most(&format!("C formula ({name})"), c, 1e-12));
    }
    let lower = |y: &[f64; 3], w: &[f64; 3]| (y[0] + 0.5 * y[2]).sin() * (-(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])).exp() * (1.0 + y[2] * y[2]);
    let samples: Vec<(f64, f64, [f64; 3])> = (0..200)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]))
        .collect();
    let ext = MirrorExtension::new(lower, &samples, 1e-12)?;
    let (j1, j2) = (ext.interface_jump(&samples, 1e-2), ext.interface_jump(&samples, 5e-3));
    out.push(Check::at_most("mirror jump (dy = 5e-3)", j2, 1e-3));
    out.push(Check::at_least("mirror jump ratio under halving", j1 / j2.max(f64::MIN_POSITIVE), 1.8));
    Ok(out)
}

/// Max-norm potential error of `-phi'' = rho` on `[0, 1]` for the
/// manufactured pairs `sin(pi x)` (Dirichlet) and `cos(pi x)` (Neumann).
pub fn manufactured_error(bc: BcKind, n_cells: usize) -> Result<f64> {
    let mesh = SpatialMesh::slab(1.0, n_cells)?;
    let exact = |x: f64| match bc {
        BcKind::Dirichlet => (PI * x).sin(),
        BcKind::Neumann => (PI * x).cos(),
    };
    let rho: Vec<f64> = mesh.cell_centers.iter().map(|c| PI * PI * exact(c[0])).collect();
    let pf = PoissonSolver::new(&mesh, bc)?.solve(&rho, 0.0)?;
    Ok(mesh.cell_centers.iter().zip(&pf.phi).map(|(c, p)| (p - exact(c[0])).abs()).fold(0.0, f64::max))
}

/// `|oint E.n - int rho|` relative to `int |rho|` for a Dirichlet slab.
pub fn green_identity_residual(n_cells: usize) -> Result<f64> {
    let mesh = SpatialMesh::slab(1.0, n_cells)?;
    let rho: Vec<f64> = mesh.cell_centers.iter().map(|c| 1.0 + (3.0 * c[0]).sin()).collect();
    let solver = PoissonSolver::new(&mesh, BcKind::Dirichlet)?;
    let pf = solver.solve(&rho, 0.0)?;
    let charge: f64 = rho.iter().zip(&mesh.volumes).map(|(r, v)| r * v).sum();
    let scale: f64 = rho.iter().zip(&mesh.volumes).map(|(r, v)| r.abs() * v).sum();
    Ok((solver.boundary_flux(&pf) - charge).abs() / scale)
}

fn field_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (bc, name) in [(BcKind::Dirichlet, "dirichlet"), (BcKind::Neumann, "neumann")] {
        let (a, b) = (manufactured_error(bc, 32)?, manufactured_error(bc, 64)?);
        let order = (a / b).log2();
        out.push(Check::at_least(&format!("manufactured order ({name}) lo"), order, 1.9));
        out.push(Check::at_most(&format!("manufactured order ({name}) hi"), order, 2.1));
    }
    out.push(Check::at_most("Green identity residual", green_identity_residual(40)?, 1e-10));
    Ok(out)
}

fn norms_suite(seed: u64) -> Result<Vec<Check>> {
    let p = |t: f64, x: [f64; 3], v: [f64; 3]| KineticPoint { t, x, v };
    let z = p(0.3, [0.1, 0.2, -0.4], [0.5, -1.0, 2.0]);
    let e1 = quasi_distance(&z, &z);
    let e2 = (quasi_distance(&p(1.0, [0.4, 0.0, 0.0], [0.0; 3]), &p(0.0, [0.4, 0.0, 0.0], [0.0; 3])) - 1.0).abs();
    let v = [0.3, 0.1, -0.2];
    let e3 = (quasi_distance(&p(0.0, [0.008, 0.0, 0.0], v), &p(0.0, [0.0; 3], v)) - 0.2).abs();
    let t: Vec<f64> = (0..=200).map(|i| 0.05 * i as f64).collect();
    let w: Vec<f64> = t.iter().map(|t| (1.0 + t / 3.0).powi(-6)).collect();
    let fit = decay_fit(&t, &w)?;
    let mut consts = Vec::new();
    for n in [16usize, 24] {
        let grid = VelocityGrid::new(6.0, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profiles: Vec<Vec<f64>> = (0..8).map(|_| random_smooth_profile(&grid, &mut rng)).collect();
        consts.push(interpolation_constant(&grid, &profiles, 2.0));
    }
    Ok(vec![
        Check::at_most("quasi-distance d(z, z)", e1, 0.0),
        Check::at_most("quasi-distance time example", e2, 1e-15),
        Check::at_most("quasi-distance 0.008^(1/3)", e3, 1e-15),
        Check::at_most("decay fit k on (1+t/3)^-6", (fit.k - 3.0).abs() / 3.0, 0.05),
        Check::at_most("interpolation constant drift", (consts[1] / consts[0] - 1.0).abs(), 0.2),
    ])
}
