//! Functionals evaluated on states and trajectories: conservation, entropy,
//! energy and dissipation, macro-micro ratios, kinetic norms and decay fits.
//!
//! Sampled quantities (Hoelder seminorm, quasi-triangle constant) are lower
//! bounds over the pairs visited, not certified suprema.

use rand::Rng;

use crate::error::{Result, VplError};
use crate::exec::Exec;
use crate::field::{PoissonSolver, PotentialField};
use crate::geometry::{rotational_symmetry_residual, ImplicitDomain};
use crate::grid::{ksum, DistributionField, MeshKind, SpatialMesh, VelocityGrid};
use crate::operators::CollisionOperators;
use crate::stencil::{gradient, AxisOp};

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub step: u64,
    pub mass: f64,
    pub kinetic_energy_pert: f64,
    pub field_energy: f64,
    pub flux: f64,
    pub angular_momentum: Option<f64>,
    /// `H = int int F ln F`; `None` when `F` is not positive everywhere.
    pub entropy: Option<f64>,
    /// `H - H[mu]`, evaluated without cancellation.
    pub entropy_excess: Option<f64>,
    pub min_full: f64,
    pub thetas: Vec<f64>,
    pub w_theta: Vec<f64>,
    pub v_theta: Vec<f64>,
    pub instant: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub total: Vec<f64>,
    pub macro_norm: f64,
    pub micro_norm: f64,
    pub sup_norms: Vec<f64>,
}

impl DiagnosticsRecord {
    pub fn total_energy(&self) -> f64 {
        self.kinetic_energy_pert + self.field_energy
    }
}

/// What a record needs besides the state.
pub struct DiagContext<'a> {
    pub ops: &'a CollisionOperators,
    pub mesh: &'a SpatialMesh,
    pub poisson: &'a PoissonSolver,
    pub thetas: &'a [f64],
    pub exec: Exec,
    /// `(x0, omega)` of a rotation the domain is invariant under.
    pub rotation: Option<([f64; 3], [f64; 3])>,
}

/// The implicit domain matching a mesh, for symmetry checks.
pub fn mesh_domain(mesh: &SpatialMesh) -> ImplicitDomain {
    match mesh.kind {
        MeshKind::Slab { length } => ImplicitDomain::Slab { length },
        MeshKind::Disk { radius } => ImplicitDomain::Disk { radius },
    }
}

/// A rotation the mesh's domain admits, validated by the symmetry residual.
pub fn admissible_rotation(mesh: &SpatialMesh, rng: &mut impl Rng) -> Option<([f64; 3], [f64; 3])> {
    let (x0, omega) = match mesh.kind {
        MeshKind::Slab { .. } => ([0.0; 3], [1.0, 0.0, 0.0]),
        MeshKind::Disk { .. } => ([0.0; 3], [0.0, 0.0, 1.0]),
    };
    let r = rotational_symmetry_residual(&mesh_domain(mesh), &x0, &omega, 64, rng).ok()?;
    (r <= 1e-10).then_some((x0, omega))
}

fn moment(grid: &VelocityGrid, f: &DistributionField, mesh: &SpatialMesh, w: impl Fn(usize, &[f64; 3]) -> f64) -> f64 {
    ksum((0..f.n_cells).map(|c| {
        let cell = f.cell(c);
        mesh.volumes[c] * ksum((0..cell.len()).map(|k| w(c, &grid.nodes[k]) * grid.sqrt_mu[k] * cell[k])) * grid.cell_volume()
    }))
}

/// `int int F ln F` and its excess over the Maxwellian, or `None` if some
/// `F <= 0`.
pub fn entropy(grid: &VelocityGrid, mesh: &SpatialMesh, f: &DistributionField) -> Option<(f64, f64)> {
    let h3 = grid.cell_volume();
    let mut excess = Vec::with_capacity(f.n_cells);
    for c in 0..f.n_cells {
        let cell = f.cell(c);
        let mut terms = Vec::with_capacity(cell.len());
        for k in 0..cell.len() {
            let mu = grid.mu[k];
            let d = grid.sqrt_mu[k] * cell[k];
            let full = mu + d;
            if !(full > 0.0) {
                return None;
            }
            // F ln F - mu ln mu = d ln mu + F ln(1 + d / mu).
            let ln_mu = -crate::sym::quad(&crate::sym::identity(1.0), &grid.nodes[k], &grid.nodes[k]);
            terms.push(d * ln_mu + full * (d / mu).ln_1p());
        }
        excess.push(mesh.volumes[c] * ksum(terms) * h3);
    }
    let excess = ksum(excess);
    let eq = ksum((0..grid.len()).map(|k| {
        let v = &grid.nodes[k];
        -grid.mu[k] * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    })) * h3
        * mesh.measure();
    Some((eq + excess, excess))
}

/// `||f||^2_{2, theta}`.
pub fn l2_weighted_sq(grid: &VelocityGrid, mesh: &SpatialMesh, f: &DistributionField, theta: f64) -> f64 {
    let w = grid.weight(2.0 * theta);
    ksum((0..f.n_cells).map(|c| mesh.volumes[c] * ksum(f.cell(c).iter().zip(w.iter()).map(|(x, w)| w * x * x)) * grid.cell_volume()))
}

fn check_half_integer(theta: f64) -> Result<usize> {
    let two = 2.0 * theta;
    if !(theta >= 0.0) || (two - two.round()).abs() > 1e-12 {
        return Err(VplError::InvalidInput(format!("theta must be a non-negative multiple of 1/2, got {theta}")));
    }
    Ok(two.round() as usize)
}

/// `(I_theta, D_theta)` for one `theta`, given `||E||^2`.
pub fn energy_functionals(ops: &CollisionOperators, mesh: &SpatialMesh, f: &DistributionField, field_energy: f64, theta: f64, exec: Exec) -> (f64, f64) {
    let i = l2_weighted_sq(&ops.grid, mesh, f, theta) + field_energy;
    let d = ops.sigma_inner(f, f, mesh, theta, exec) + field_energy;
    (i, d)
}

/// `(W_theta, V_theta)`: sums over `theta' = 0, 1/2, ..., theta`.
pub fn hierarchy(ops: &CollisionOperators, mesh: &SpatialMesh, f: &DistributionField, field_energy: f64, theta: f64, exec: Exec) -> Result<(f64, f64)> {
    let m = check_half_integer(theta)?;
    let mut w = field_energy;
    let mut v = field_energy;
    for k in 0..=m {
        let th = 0.5 * k as f64;
        w += l2_weighted_sq(&ops.grid, mesh, f, th);
        v += ops.sigma_inner(f, f, mesh, th, exec);
    }
    Ok((w, v))
}

/// One record; `total` is left at `instant` (accumulation is done by
/// [`EnergyAccumulator`]).
pub fn conservation_report(ctx: &DiagContext<'_>, f: &DistributionField, pf: &PotentialField, step: u64) -> Result<DiagnosticsRecord> {
    let grid = &ctx.ops.grid;
    let mesh = ctx.mesh;
    let mass = moment(grid, f, mesh, |_, _| 1.0);
    let kinetic = moment(grid, f, mesh, |_, v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    let field_energy = ctx.poisson.field_energy(pf);
    let flux = ctx.poisson.boundary_flux(pf);
    let angular_momentum = ctx.rotation.map(|(x0, om)| {
        moment(grid, f, mesh, |c, v| {
            let x = mesh.cell_centers[c];
            let r = [x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]];
            let rw = [r[1] * om[2] - r[2] * om[1], r[2] * om[0] - r[0] * om[2], r[0] * om[1] - r[1] * om[0]];
            rw[0] * v[0] + rw[1] * v[1] + rw[2] * v[2]
        })
    });
    let ent = entropy(grid, mesh, f);
    let (pfield, _) = ctx.ops.project_p(f, ctx.exec);
    let mut micro = f.clone();
    micro.values.iter_mut().zip(&pfield.values).for_each(|(a, b)| *a -= b);
    let macro_norm = ctx.ops.sigma_inner(&pfield, &pfield, mesh, 0.0, ctx.exec).max(0.0).sqrt();
    let micro_norm = ctx.ops.sigma_inner(&micro, &micro, mesh, 0.0, ctx.exec).max(0.0).sqrt();
    let mut rec = DiagnosticsRecord {
        t: f.time,
        step,
        mass,
        kinetic_energy_pert: kinetic,
        field_energy,
        flux,
        angular_momentum,
        entropy: ent.map(|e| e.0),
        entropy_excess: ent.map(|e| e.1),
        min_full: f.min_full(grid),
        thetas: ctx.thetas.to_vec(),
        macro_norm,
        micro_norm,
        ..Default::default()
    };
    for &th in ctx.thetas {
        let (w, v) = hierarchy(ctx.ops, mesh, f, field_energy, th, ctx.exec)?;
        let (i, d) = energy_functionals(ctx.ops, mesh, f, field_energy, th, ctx.exec);
        rec.w_theta.push(w);
        rec.v_theta.push(v);
        rec.instant.push(i);
        rec.dissipation.push(d);
        rec.total.push(i);
        rec.sup_norms.push(crate::grid::weighted_lp_norm(f, mesh, grid, f64::INFINITY, th)?);
    }
    Ok(rec)
}

/// Trapezoidal accumulation of `int_0^t D_theta` on the diagnostics cadence.
#[derive(Clone, Debug, Default)]
pub struct EnergyAccumulator {
    last: Option<(f64, Vec<f64>)>,
    integral: Vec<f64>,
}

impl EnergyAccumulator {
    pub fn push(&mut self, rec: &mut DiagnosticsRecord) {
        if self.integral.len() != rec.dissipation.len() {
            self.integral = vec![0.0; rec.dissipation.len()];
        }
        if let Some((t0, d0)) = &self.last {
            let dt = rec.t - t0;
            for (acc, (a, b)) in self.integral.iter_mut().zip(d0.iter().zip(&rec.dissipation)) {
                *acc += 0.5 * dt * (a + b);
            }
        }
        for (k, acc) in self.integral.iter().enumerate() {
            rec.total[k] = rec.instant[k] + acc;
        }
        self.last = Some((rec.t, rec.dissipation.clone()));
    }
}

pub const CSV_FIXED: [&str; 14] = [
    "t",
    "step",
    "mass",
    "kinetic_energy_pert",
    "field_energy",
    "total_energy",
    "flux",
    "angular_momentum",
    "entropy",
    "entropy_excess",
    "entropy_flag",
    "min_F",
    "macro_norm",
    "micro_norm",
];

/// Column names: the fixed block, then per `theta` the six weighted columns.
pub fn csv_header(thetas: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = CSV_FIXED.iter().map(|s| s.to_string()).collect();
    for th in thetas {
        for name in ["W_theta", "V_theta", "I_theta", "D_theta", "E_theta", "sup_norm"] {
            h.push(format!("{name}_{th}"));
        }
    }
    h
}

/// Shortest round-trip scientific form.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn csv_row(rec: &DiagnosticsRecord) -> Vec<String> {
    let mut r = vec![
        rec.t.to_string(),
        rec.step.to_string(),
        num(rec.mass),
        num(rec.kinetic_energy_pert),
        num(rec.field_energy),
        num(rec.total_energy()),
        num(rec.flux),
        opt(rec.angular_momentum),
        opt(rec.entropy),
        opt(rec.entropy_excess),
        if rec.entropy.is_some() { "ok".into() } else { "nonpositive_F".into() },
        num(rec.min_full),
        num(rec.macro_norm),
        num(rec.micro_norm),
    ];
    for k in 0..rec.thetas.len() {
        for v in [rec.w_theta[k], rec.v_theta[k], rec.instant[k], rec.dissipation[k], rec.total[k], rec.sup_norms[k]] {
            r.push(num(v));
        }
    }
    r
}

/// Relative ripple of a series that should not increase: the largest rise
/// `(y_j - min_{i<j} y_i) / min_{i<j} y_i` over samples with `t > t_min`.
pub fn monotone_ripple(t: &[f64], y: &[f64], t_min: f64) -> f64 {
    let mut lowest = f64::INFINITY;
    let mut worst = 0.0f64;
    for (ti, yi) in t.iter().zip(y) {
        if *ti <= t_min {
            continue;
        }
        if lowest.is_finite() && *yi > lowest {
            worst = worst.max((yi - lowest) / lowest.abs().max(f64::MIN_POSITIVE));
        }
        lowest = lowest.min(*yi);
    }
    worst
}

/// Same, in absolute terms.
pub fn monotone_rise(y: &[f64]) -> f64 {
    let mut lowest = f64::INFINITY;
    let mut worst = 0.0f64;
    for &v in y {
        if v > lowest {
            worst = worst.max(v - lowest);
        }
        lowest = lowest.min(v);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct WindowRatio {
    pub start: f64,
    pub end: f64,
    pub ratio: Option<f64>,
}

/// `(int |Pf|^2_sigma + int |E|^2) / int |(I-P)f|^2_sigma` over consecutive
/// windows of integer length starting at `t = 0`.
pub fn macro_micro_report(records: &[DiagnosticsRecord], window: usize) -> Result<Vec<WindowRatio>> {
    if window == 0 {
        return Err(VplError::InvalidInput("window length must be a positive integer".into()));
    }
    let integrate = |s: f64, e: f64, g: &dyn Fn(&DiagnosticsRecord) -> f64| {
        ksum(records.windows(2).filter(|p| p[0].t >= s - 1e-12 && p[1].t <= e + 1e-12).map(|p| 0.5 * (p[1].t - p[0].t) * (g(&p[0]) + g(&p[1]))))
    };
    let t_end = records.last().map(|r| r.t).unwrap_or(0.0);
    let mut out = Vec::new();
    let w = window as f64;
    let mut s = 0.0;
    while s + w <= t_end + 1e-9 {
        let num = integrate(s, s + w, &|r| r.macro_norm * r.macro_norm + r.field_energy);
        let den = integrate(s, s + w, &|r| r.micro_norm * r.micro_norm);
        out.push(WindowRatio { start: s, end: s + w, ratio: (den > 0.0).then(|| num / den) });
        s += w;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KineticPoint {
    pub t: f64,
    pub x: [f64; 3],
    pub v: [f64; 3],
}

/// `max{|t - tau|^{1/2}, |x - xi - (t - tau) nu|^{1/3}, |v - nu|}` for
/// `z = (t, x, v)` and `w = (tau, xi, nu)`.
pub fn quasi_distance(z: &KineticPoint, w: &KineticPoint) -> f64 {
    let dt = z.t - w.t;
    let dx: Vec<f64> = (0..3).map(|i| z.x[i] - w.x[i] - dt * w.v[i]).collect();
    let dv: Vec<f64> = (0..3).map(|i| z.v[i] - w.v[i]).collect();
    let nx = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
    let nv = (dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]).sqrt();
    dt.abs().sqrt().max(nx.cbrt()).max(nv)
}

/// Sampled estimate of the constant `K` in `d(z, w) <= K (d(z, y) + d(y, w))`.
pub fn quasi_triangle_constant(samples: usize, scale: f64, rng: &mut impl Rng) -> f64 {
    let point = |rng: &mut dyn rand::RngCore| KineticPoint {
        t: rng.gen_range(-scale..scale),
        x: [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)],
        v: [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)],
    };
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (a, b, c) = (point(rng), point(rng), point(rng));
        let den = quasi_distance(&a, &b) + quasi_distance(&b, &c);
        if den > 0.0 {
            worst = worst.max(quasi_distance(&a, &c) / den);
        }
    }
    worst
}

fn padded_point(mesh: &SpatialMesh, grid: &VelocityGrid, t: f64, c: usize, k: usize) -> KineticPoint {
    KineticPoint { t, x: mesh.cell_centers[c], v: grid.nodes[k] }
}

/// Sampled `C^{0, alpha}` seminorm of a snapshot: every nearest-neighbour
/// pair in `x` and along each velocity axis, then `budget` random pairs.
pub fn holder_seminorm(f: &DistributionField, mesh: &SpatialMesh, grid: &VelocityGrid, alpha: f64, budget: usize, rng: &mut impl Rng) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(VplError::InvalidInput(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let t = f.time;
    let ratio = |c1: usize, k1: usize, c2: usize, k2: usize| {
        let d = quasi_distance(&padded_point(mesh, grid, t, c1, k1), &padded_point(mesh, grid, t, c2, k2));
        if d > 0.0 {
            (f.cell(c1)[k1] - f.cell(c2)[k2]).abs() / d.powf(alpha)
        } else {
            0.0
        }
    };
    let n = grid.n_axis;
    let mut worst = 0.0f64;
    for c in 0..f.n_cells {
        for k in 0..grid.len() {
            for nb in mesh.neighbors[c].iter().flatten() {
                worst = worst.max(ratio(c, k, *nb, k));
            }
            let (i, j, l) = grid.unindex(k);
            if i + 1 < n {
                worst = worst.max(ratio(c, k, c, grid.index(i + 1, j, l)));
            }
            if j + 1 < n {
                worst = worst.max(ratio(c, k, c, grid.index(i, j + 1, l)));
            }
            if l + 1 < n {
                worst = worst.max(ratio(c, k, c, grid.index(i, j, l + 1)));
            }
        }
    }
    for _ in 0..budget {
        let (c1, c2) = (rng.gen_range(0..f.n_cells), rng.gen_range(0..f.n_cells));
        let (k1, k2) = (rng.gen_range(0..grid.len()), rng.gen_range(0..grid.len()));
        worst = worst.max(ratio(c1, k1, c2, k2));
    }
    Ok(worst)
}

/// Velocity derivative norms `(||f||_p^p, ||D_v f||_p^p, ||D^2_vv f||_p^p)`
/// of one profile, integrated with weight `h^3`.
pub fn velocity_sobolev_terms(grid: &VelocityGrid, d: &AxisOp, f: &[f64], p: f64) -> (f64, f64, f64) {
    let g = gradient(d, f);
    let mut hess = Vec::with_capacity(9);
    for a in 0..3 {
        hess.extend(gradient(d, &g[a]));
    }
    let h3 = grid.cell_volume();
    let t0 = ksum(f.iter().map(|x| x.abs().powf(p))) * h3;
    let t1 = ksum((0..f.len()).map(|k| (g[0][k] * g[0][k] + g[1][k] * g[1][k] + g[2][k] * g[2][k]).sqrt().powf(p))) * h3;
    let t2 = ksum((0..f.len()).map(|k| hess.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt().powf(p))) * h3;
    (t0, t1, t2)
}

/// `S^p` norm of a trajectory stored with uniform `dt`; interior time levels
/// carry the integral.
pub fn sp_norm(traj: &[DistributionField], mesh: &SpatialMesh, grid: &VelocityGrid, p: f64) -> Result<f64> {
    if traj.len() < 3 {
        return Err(VplError::InvalidInput("sp_norm needs at least 3 stored time levels".into()));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(VplError::InvalidInput(format!("p must lie in (1, inf), got {p}")));
    }
    let dt = traj[1].time - traj[0].time;
    if !(dt > 0.0) || traj.windows(2).any(|w| ((w[1].time - w[0].time) - dt).abs() > 1e-9 * dt.abs().max(1.0)) {
        return Err(VplError::InvalidInput("trajectory must have uniform positive dt".into()));
    }
    let d = AxisOp::derivative(grid.n_axis, grid.spacing);
    let mut total = Vec::new();
    for s in 1..traj.len() - 1 {
        for c in 0..mesh.n_active() {
            let f = traj[s].cell(c);
            let (t0, t1, t2) = velocity_sobolev_terms(grid, &d, f, p);
            let mut y = Vec::with_capacity(f.len());
            for k in 0..f.len() {
                let ft = (traj[s + 1].cell(c)[k] - traj[s - 1].cell(c)[k]) / (2.0 * dt);
                let mut adv = 0.0;
                for axis in 0..mesh.dim {
                    let (lo, hi) = (mesh.neighbors[c][2 * axis], mesh.neighbors[c][2 * axis + 1]);
                    let at = |cc: usize| traj[s].cell(cc)[k];
                    let dxf = match (lo, hi) {
                        (Some(l), Some(h)) => (at(h) - at(l)) / (2.0 * mesh.dx),
                        (None, Some(h)) => (at(h) - at(c)) / mesh.dx,
                        (Some(l), None) => (at(c) - at(l)) / mesh.dx,
                        (None, None) => 0.0,
                    };
                    adv += grid.nodes[k][axis] * dxf;
                }
                y.push((ft + adv).abs().powf(p));
            }
            let ty = ksum(y) * grid.cell_volume();
            total.push(dt * mesh.volumes[c] * (t0 + t1 + t2 + ty));
        }
    }
    Ok(ksum(total).powf(1.0 / p))
}

/// Fitted constant of `||D f|| <= eps ||D^2 f|| + (C / eps) ||f||`: the best
/// `C` for one profile is `a^2 / (4 b c)`; the maximum over profiles is
/// returned.
pub fn interpolation_constant(grid: &VelocityGrid, profiles: &[Vec<f64>], p: f64) -> f64 {
    let d = AxisOp::derivative(grid.n_axis, grid.spacing);
    profiles
        .iter()
        .map(|f| {
            let (t0, t1, t2) = velocity_sobolev_terms(grid, &d, f, p);
            let (c, a, b) = (t0.powf(1.0 / p), t1.powf(1.0 / p), t2.powf(1.0 / p));
            if b > 0.0 && c > 0.0 {
                a * a / (4.0 * b * c)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Sampled constant of `||f||_{2, theta - 1/2} <= C ||f||_{sigma, theta}`.
pub fn sigma_lower_bound_constant(ops: &CollisionOperators, profiles: &[Vec<f64>], theta: f64) -> f64 {
    let mesh = SpatialMesh::single_cell(1.0);
    profiles
        .iter()
        .map(|p| {
            let f = DistributionField::from_profile(1, p);
            let lhs = l2_weighted_sq(&ops.grid, &mesh, &f, theta - 0.5).sqrt();
            let rhs = ops.sigma_inner_cell(p, p, theta).max(0.0).sqrt();
            if rhs > 0.0 {
                lhs / rhs
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Mean-oscillation functional over the kinetic cylinder `Q_r(z0)`.
/// `fields[s]` is the coefficient at `times[s]`.
pub fn oscillation(fields: &[DistributionField], mesh: &SpatialMesh, grid: &VelocityGrid, z0: &KineticPoint, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(VplError::InvalidInput("radius must be positive".into()));
    }
    let mut slices = Vec::new();
    for (s, f) in fields.iter().enumerate() {
        let t = f.time;
        if t > z0.t + 1e-12 || t < z0.t - r * r - 1e-12 {
            continue;
        }
        let mut pts = Vec::new();
        for c in 0..mesh.n_active() {
            let x = mesh.cell_centers[c];
            let dx: Vec<f64> = (0..3).map(|i| x[i] - z0.x[i] - (t - z0.t) * z0.v[i]).collect();
            if (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt().cbrt() >= r {
                continue;
            }
            for k in 0..grid.len() {
                let v = grid.nodes[k];
                let dv = [(v[0] - z0.v[0]), (v[1] - z0.v[1]), (v[2] - z0.v[2])];
                if (dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]).sqrt() < r {
                    pts.push((f.cell(c)[k], mesh.volumes[c] * grid.cell_volume()));
                }
            }
        }
        if !pts.is_empty() {
            slices.push((s, pts));
        }
    }
    if slices.is_empty() {
        return Err(VplError::InvalidInput("empty kinetic cylinder".into()));
    }
    let dt = if fields.len() > 1 { (fields[1].time - fields[0].time).abs() } else { 1.0 };
    let mut total = Vec::new();
    for (_, pts) in &slices {
        let mut acc = Vec::with_capacity(pts.len());
        for (a, wa) in pts {
            acc.push(wa * ksum(pts.iter().map(|(b, wb)| wb * (a - b).abs())));
        }
        total.push(dt * ksum(acc));
    }
    Ok(ksum(total) * r.powi(-14))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct DecayFit {
    pub eps0: f64,
    pub k: f64,
    pub residual: f64,
    /// Set when the series does not decay (`k <= 0` or no fit).
    pub non_decaying: bool,
}

fn decay_sse(t: &[f64], logw: &[f64], k: f64) -> (f64, f64) {
    let model: Vec<f64> = t.iter().map(|t| -2.0 * k * (t / k).ln_1p()).collect();
    let c = ksum(logw.iter().zip(&model).map(|(y, m)| y - m)) / t.len() as f64;
    (ksum(logw.iter().zip(&model).map(|(y, m)| (y - m - c).powi(2))), c)
}

/// Least-squares fit of `log W = log(eps0^2) - 2k log(1 + t/k)` over `t > 1`.
pub fn decay_fit(t: &[f64], w: &[f64]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = t.iter().zip(w).filter(|(t, _)| **t > 1.0).map(|(a, b)| (*a, *b)).collect();
    if pts.len() < 10 {
        return Err(VplError::InvalidInput(format!("decay fit needs at least 10 samples with t > 1, got {}", pts.len())));
    }
    if pts.iter().any(|(_, w)| !(*w > 0.0)) {
        return Err(VplError::InvalidInput("decay fit needs a positive series".into()));
    }
    let tt: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let lw: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (sse_flat, c_flat) = {
        let c = ksum(lw.iter().copied()) / lw.len() as f64;
        (ksum(lw.iter().map(|y| (y - c).powi(2))), c)
    };
    // Coarse scan in log k, then golden-section refinement.
    let (lo, hi) = (-6.0f64, 8.0f64);
    let m = 281;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..m {
        let lk = lo + (hi - lo) * i as f64 / (m - 1) as f64;
        let (s, _) = decay_sse(&tt, &lw, lk.exp());
        if s < best.0 {
            best = (s, lk);
        }
    }
    let step = (hi - lo) / (m - 1) as f64;
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if decay_sse(&tt, &lw, x1.exp()).0 < decay_sse(&tt, &lw, x2.exp()).0 {
            b = x2;
        } else {
            a = x1;
        }
    }
    let k = (0.5 * (a + b)).exp();
    let (sse, c) = decay_sse(&tt, &lw, k);
    let decreasing = lw.last().unwrap() < lw.first().unwrap();
    if !decreasing {
        return Ok(DecayFit { eps0: (0.5 * c_flat).exp(), k: 0.0, residual: (sse_flat / tt.len() as f64).sqrt(), non_decaying: true });
    }
    Ok(DecayFit { eps0: (0.5 * c).exp(), k, residual: (sse / tt.len() as f64).sqrt(), non_decaying: !(k > 0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(t: f64, x: [f64; 3], v: [f64; 3]) -> KineticPoint {
        KineticPoint { t, x, v }
    }

    #[test]
    fn quasi_distance_examples() {
        let z = kp(2.0, [0.3, 0.1, 0.0], [0.5, -1.0, 2.0]);
        assert_eq!(quasi_distance(&z, &z), 0.0);
        let a = kp(3.0, [0.2, 0.0, 0.0], [0.0; 3]);
        let b = kp(2.0, [0.2, 0.0, 0.0], [0.0; 3]);
        assert_eq!(quasi_distance(&a, &b), 1.0);
        let c = kp(1.0, [0.0; 3], [0.4, 0.0, 0.0]);
        let d = kp(1.0, [0.008, 0.0, 0.0], [0.4, 0.0, 0.0]);
        assert!((quasi_distance(&c, &d) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn decay_fit_on_model_series() {
        let t: Vec<f64> = (0..200).map(|i| 0.05 * i as f64).collect();
        let w: Vec<f64> = t.iter().map(|t| (1.0 + t / 3.0).powf(-6.0)).collect();
        let fit = decay_fit(&t, &w).unwrap();
        assert!((fit.k - 3.0).abs() < 0.15, "{fit:?}");
        let flat = vec![2.0; t.len()];
        assert!(decay_fit(&t, &flat).unwrap().non_decaying);
    }

    #[test]
    fn ripple_measures_rises() {
        let t = [0.0, 1.5, 2.0, 3.0, 4.0];
        let y = [5.0, 4.0, 3.0, 3.03, 2.0];
        assert!((monotone_ripple(&t, &y, 1.0) - 0.01).abs() < 1e-12);
        assert_eq!(monotone_rise(&[3.0, 2.0, 1.0]), 0.0);
    }
}
