//! Time integration of the perturbation equation with specular walls and a
//! self-consistent field.
//!
//! A step is Strang-split: transport (free streaming plus field acceleration)
//! for `dt/2`, collision for `dt`, transport for `dt/2`. Transport is
//! first-order upwind in `x` with a specular ghost, and a conservative
//! centred flux of `E F` in `v`; the field multiplying a node's flux is taken
//! on the face its particles move towards, which pairs the acceleration work
//! with the field-energy change face by face. Collision advances
//! `df/dt = -L f + Gamma[g, f]`, with `g` iterated to a fixed point in full
//! mode and `Gamma` dropped in frozen (linear) mode.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;

use crate::diagnostics::{self, DiagContext, DiagnosticsRecord, EnergyAccumulator};
use crate::error::{Result, VplError};
use crate::exec::Exec;
use crate::field::{charge_density, BcKind, PoissonSolver, PotentialField};
use crate::grid::{ksum, DistributionField, SpatialMesh, VelocityGrid};
use crate::io::Checkpoint;
use crate::landau::OriginRule;
use crate::operators::{random_smooth_profile, CollisionOperators, GammaCoefficients};
use crate::sym;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Linear collision `-L f`.
    #[default]
    Frozen,
    /// Adds `Gamma[g, f]`, coefficients rebuilt from each Picard iterate.
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Explicit Heun, matrix-free.
    #[default]
    Rk2,
    /// Backward Euler for `L` by conjugate gradients, `Gamma` explicit.
    Implicit,
    /// Exact `exp(-dt L)` from the parity-block spectrum of `L`, with
    /// `Gamma` treated by a Lawson-Heun step.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Cfl { safety: f64 },
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Cfl { safety: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeshSpec {
    Slab { length: f64, n_cells: usize },
    Disk { radius: f64, n_axis: usize },
}

impl MeshSpec {
    pub fn build(&self) -> Result<SpatialMesh> {
        match *self {
            MeshSpec::Slab { length, n_cells } => SpatialMesh::slab(length, n_cells),
            MeshSpec::Disk { radius, n_axis } => SpatialMesh::disk(radius, n_axis),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialData {
    /// `a(x) sqrt(mu)` with a zero-mean spatial profile.
    #[default]
    IsotropicBump,
    /// `a(x) v_1 sqrt(mu)`.
    OddVelocity,
    /// A few random smooth velocity profiles modulated in `x`, made neutral.
    Random { seed: u64 },
    Zero,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub v_max: f64,
    pub n_axis: usize,
    pub mesh: MeshSpec,
    pub gamma: f64,
    pub origin_rule: OriginRule,
    pub mode: Mode,
    pub integrator: Integrator,
    pub dt: DtPolicy,
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub bc_kind: BcKind,
    pub initial: InitialData,
    /// Target `||f_0||_{inf, theta0}`.
    pub epsilon: f64,
    pub theta0: f64,
    /// Diagnostics every this many steps.
    pub cadence: u64,
    pub thetas: Vec<f64>,
    pub exec: Exec,
    /// Store a snapshot every this many steps (0: none).
    pub snapshot_every: u64,
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Estimate the splitting error by step doubling on the first step.
    pub splitting_check: bool,
    pub cg_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            v_max: 6.0,
            n_axis: 16,
            mesh: MeshSpec::Slab { length: 1.0, n_cells: 32 },
            gamma: -3.0,
            origin_rule: OriginRule::Corrected,
            mode: Mode::Frozen,
            integrator: Integrator::Rk2,
            dt: DtPolicy::default(),
            t_end: 5.0,
            picard_tol: 1e-8,
            picard_max_iters: 10,
            bc_kind: BcKind::Neumann,
            initial: InitialData::IsotropicBump,
            epsilon: 1e-3,
            theta0: 0.0,
            cadence: 10,
            thetas: vec![0.0],
            exec: Exec::default(),
            snapshot_every: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            splitting_check: true,
            cg_tol: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VplError::InvalidInput(m));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iters == 0 {
            return bad("picard_tol must be positive and picard_max_iters at least 1".into());
        }
        if self.cadence == 0 {
            return bad("cadence must be at least 1".into());
        }
        match self.dt {
            DtPolicy::Fixed { dt } if !(dt > 0.0) => return bad(format!("fixed dt must be positive, got {dt}")),
            DtPolicy::Cfl { safety } if !(safety > 0.0 && safety <= 1.0) => return bad(format!("CFL safety must lie in (0, 1], got {safety}")),
            _ => {}
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return bad("checkpoint_every needs checkpoint_dir".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub f: DistributionField,
    pub pf: PotentialField,
    pub t: f64,
    pub step_index: u64,
    pub mode: Mode,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct PicardLog {
    pub step: u64,
    pub iterations: usize,
    /// Largest `|Delta^{k+1}| / |Delta^k|` over cells and iterations.
    pub max_contraction: f64,
    pub min_sigma_eig: f64,
}

/// Orthogonal change of basis to the eight reflection-parity classes of the
/// velocity lattice (`L` commutes with `v_a -> -v_a` for each axis).
#[derive(Clone, Debug)]
pub struct ParityBasis {
    n: usize,
    half: usize,
}

impl ParityBasis {
    pub fn new(grid: &VelocityGrid) -> Self {
        ParityBasis { n: grid.n_axis, half: grid.n_axis / 2 }
    }

    pub fn block_len(&self) -> usize {
        self.half * self.half * self.half
    }

    #[inline]
    fn image(&self, q: usize, b: usize) -> usize {
        let h = self.half;
        let (i, j, k) = (q / (h * h), (q / h) % h, q % h);
        let m = |x: usize, bit: bool| if bit { self.n - 1 - x } else { x };
        (m(i, b & 4 != 0) * self.n + m(j, b & 2 != 0)) * self.n + m(k, b & 1 != 0)
    }

    #[inline]
    fn sign(s: usize, b: usize) -> f64 {
        if (s & b).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn forward(&self, f: &[f64]) -> Vec<Vec<f64>> {
        let c = 0.125f64.sqrt();
        let m = self.block_len();
        let mut out = vec![vec![0.0; m]; 8];
        for q in 0..m {
            let vals: [f64; 8] = std::array::from_fn(|b| f[self.image(q, b)]);
            for (s, blk) in out.iter_mut().enumerate() {
                blk[q] = c * (0..8).map(|b| Self::sign(s, b) * vals[b]).sum::<f64>();
            }
        }
        out
    }

    pub fn inverse(&self, u: &[Vec<f64>]) -> Vec<f64> {
        let c = 0.125f64.sqrt();
        let m = self.block_len();
        let mut f = vec![0.0; self.n * self.n * self.n];
        for q in 0..m {
            for b in 0..8 {
                f[self.image(q, b)] = c * (0..8).map(|s| Self::sign(s, b) * u[s][q]).sum::<f64>();
            }
        }
        f
    }
}

/// Eigen-decomposition of `L` restricted to each parity block.
pub struct ParitySpectrum {
    pub basis: ParityBasis,
    pub vectors: Vec<DMatrix<f64>>,
    pub values: Vec<DVector<f64>>,
    /// Largest off-block coupling found while assembling (should be roundoff).
    pub leakage: f64,
}

impl ParitySpectrum {
    pub fn build(ops: &CollisionOperators, exec: Exec) -> Result<Self> {
        let basis = ParityBasis::new(&ops.grid);
        let m = basis.block_len();
        let mut vectors = Vec::with_capacity(8);
        let mut values = Vec::with_capacity(8);
        let mut leakage = 0.0f64;
        for s in 0..8 {
            let cols = exec.map(m, |q| {
                let mut u = vec![vec![0.0; m]; 8];
                u[s][q] = 1.0;
                let lu = basis.forward(&ops.apply_l(&basis.inverse(&u)));
                let leak = (0..8).filter(|&r| r != s).flat_map(|r| lu[r].iter().map(|x| x.abs())).fold(0.0, f64::max);
                (lu[s].clone(), leak)
            });
            let mut mat = DMatrix::<f64>::zeros(m, m);
            let mut scale = 0.0f64;
            for (q, (col, leak)) in cols.into_iter().enumerate() {
                leakage = leakage.max(leak);
                for (p, v) in col.into_iter().enumerate() {
                    mat[(p, q)] = v;
                    scale = scale.max(v.abs());
                }
            }
            if leakage > 1e-9 * scale.max(1.0) {
                return Err(VplError::Numerical(format!("collision operator couples parity classes ({leakage:e})")));
            }
            let sym = (&mat + mat.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            vectors.push(eig.eigenvectors);
            values.push(eig.eigenvalues);
        }
        Ok(ParitySpectrum { basis, vectors, values, leakage })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter().copied()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter().copied()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Blocks of `exp(-dt L)`.
    pub fn propagator(&self, dt: f64) -> Vec<DMatrix<f64>> {
        self.vectors
            .iter()
            .zip(&self.values)
            .map(|(v, l)| {
                let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * (-dt * l[j]).exp());
                scaled * v.transpose()
            })
            .collect()
    }

    pub fn apply_blocks(&self, blocks: &[DMatrix<f64>], f: &[f64]) -> Vec<f64> {
        let u = self.basis.forward(f);
        let w: Vec<Vec<f64>> = blocks.iter().zip(&u).map(|(b, x)| (b * DVector::from_column_slice(x)).as_slice().to_vec()).collect();
        self.basis.inverse(&w)
    }
}

/// Largest eigenvalue of `L` by power iteration.
pub fn spectral_radius(ops: &CollisionOperators, iterations: usize) -> f64 {
    let n = ops.n_v();
    let mut x: Vec<f64> = (0..n).map(|k| 1.0 + 0.3 * ((k * 7919) % 13) as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let norm = ksum(x.iter().map(|a| a * a)).sqrt();
        x.iter_mut().for_each(|a| *a /= norm);
        let y = ops.apply_l(&x);
        lambda = ksum(x.iter().zip(&y).map(|(a, b)| a * b));
        x = y;
    }
    lambda
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub picard: Vec<PicardLog>,
    pub splitting_error: Option<f64>,
    pub dt: f64,
    pub n_steps: u64,
    /// Largest per-step change of the wall flux of `E`.
    pub max_flux_step: f64,
    /// Smallest `F = mu + sqrt(mu) f` over all steps.
    pub min_full: f64,
    pub dt_halvings: u64,
    #[serde(skip)]
    pub snapshots: Vec<DistributionField>,
    #[serde(skip)]
    pub final_state: Option<SimState>,
}

pub struct Simulation {
    pub config: SolverConfig,
    pub grid: Arc<VelocityGrid>,
    pub mesh: SpatialMesh,
    pub ops: CollisionOperators,
    pub poisson: PoissonSolver,
    pub dt: f64,
    pub n_steps: u64,
    pub spectrum: Option<ParitySpectrum>,
    /// Face indices of each cell: `[-x, +x, -y, +y]`.
    cell_faces: Vec<[Option<usize>; 4]>,
    propagators: Mutex<HashMap<u64, Arc<Vec<DMatrix<f64>>>>>,
    rotation: Option<([f64; 3], [f64; 3])>,
}

/// `(exp(-dt L), exp(-dt L / 2))` per parity block.
type Propagators<'a> = (&'a [DMatrix<f64>], &'a [DMatrix<f64>]);

fn cell_norm(f: &[f64]) -> f64 {
    ksum(f.iter().map(|x| x * x)).sqrt()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

impl Simulation {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let grid = Arc::new(VelocityGrid::new(config.v_max, config.n_axis)?);
        let mesh = config.mesh.build()?;
        let ops = CollisionOperators::new(grid.clone(), config.gamma, config.origin_rule)?;
        let poisson = PoissonSolver::new(&mesh, config.bc_kind)?;
        let mut cell_faces = vec![[None; 4]; mesh.n_active()];
        for (i, face) in poisson.faces.iter().enumerate() {
            if let Some(l) = face.lo {
                cell_faces[l][2 * face.axis + 1] = Some(i);
            }
            if let Some(h) = face.hi {
                cell_faces[h][2 * face.axis] = Some(i);
            }
        }
        let spectrum = match config.integrator {
            Integrator::Exponential => Some(ParitySpectrum::build(&ops, config.exec)?),
            _ => None,
        };
        let (dt, n_steps) = Self::choose_dt(&config, &grid, &mesh, &ops)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let rotation = diagnostics::admissible_rotation(&mesh, &mut rng);
        Ok(Simulation { config, grid, mesh, ops, poisson, dt, n_steps, spectrum, cell_faces, propagators: Mutex::new(HashMap::new()), rotation })
    }

    /// Diffusion and transport bounds, and for the explicit integrator the
    /// stability interval of Heun's method on the spectrum of `L`.
    pub fn dt_bounds(config: &SolverConfig, grid: &VelocityGrid, mesh: &SpatialMesh, ops: &CollisionOperators) -> (f64, f64, Option<f64>) {
        let max_sigma = ops.maxwellian.sigma.iter().map(|s| sym::eigenvalues(s)[2]).fold(0.0, f64::max);
        let diffusion = grid.spacing * grid.spacing / (6.0 * max_sigma);
        let v_node = grid.axis.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let transport = mesh.dx / (mesh.dim as f64 * v_node);
        let explicit = (config.integrator == Integrator::Rk2).then(|| 2.0 / (1.05 * spectral_radius(ops, 60)));
        (diffusion, transport, explicit)
    }

    fn choose_dt(config: &SolverConfig, grid: &VelocityGrid, mesh: &SpatialMesh, ops: &CollisionOperators) -> Result<(f64, u64)> {
        let (diff, trans, expl) = Self::dt_bounds(config, grid, mesh, ops);
        let bound = diff.min(trans).min(expl.unwrap_or(f64::INFINITY));
        let target = match config.dt {
            DtPolicy::Fixed { dt } => {
                if dt > bound * (1.0 + 1e-12) {
                    return Err(VplError::InvalidInput(format!("fixed dt {dt} exceeds the stability bound {bound}")));
                }
                dt
            }
            DtPolicy::Cfl { safety } => safety * bound,
        };
        let n = (config.t_end / target - 1e-9).ceil().max(1.0) as u64;
        Ok((config.t_end / n as f64, n))
    }

    pub fn diag_context(&self) -> DiagContext<'_> {
        DiagContext { ops: &self.ops, mesh: &self.mesh, poisson: &self.poisson, thetas: &self.config.thetas, exec: self.config.exec, rotation: self.rotation }
    }

    pub fn solve_field(&self, f: &DistributionField) -> Result<PotentialField> {
        self.poisson.solve(&charge_density(&self.grid, f), 0.0)
    }

    pub fn initial_field(&self) -> Result<DistributionField> {
        let grid = &*self.grid;
        let mesh = &self.mesh;
        let n_cells = mesh.n_active();
        let profile_x = |x: &[f64; 3]| -> f64 {
            match self.config.mesh {
                MeshSpec::Slab { length, .. } => (std::f64::consts::PI * x[0] / length).cos(),
                MeshSpec::Disk { radius, .. } => (std::f64::consts::PI * (x[0] * x[0] + x[1] * x[1]).sqrt() / radius).cos(),
            }
        };
        let a: Vec<f64> = mesh.cell_centers.iter().map(profile_x).collect();
        let mean = ksum(a.iter().zip(&mesh.volumes).map(|(a, v)| a * v)) / mesh.measure();
        let a: Vec<f64> = a.iter().map(|x| x - mean).collect();
        let mut f = DistributionField::zeros(mesh, grid);
        match self.config.initial {
            InitialData::Zero => return Ok(f),
            InitialData::IsotropicBump => {
                for c in 0..n_cells {
                    f.cell_mut(c).iter_mut().zip(&grid.sqrt_mu).for_each(|(x, s)| *x = a[c] * s);
                }
            }
            InitialData::OddVelocity => {
                for c in 0..n_cells {
                    let x = mesh.cell_centers[c];
                    let b = match self.config.mesh {
                        MeshSpec::Slab { length, .. } => (std::f64::consts::PI * x[0] / length).sin(),
                        MeshSpec::Disk { .. } => 1.0 + a[c],
                    };
                    for (k, val) in f.cell_mut(c).iter_mut().enumerate() {
                        *val = b * grid.nodes[k][0] * grid.sqrt_mu[k];
                    }
                }
            }
            InitialData::Random { seed } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let modes: Vec<Vec<f64>> = (0..3).map(|_| random_smooth_profile(grid, &mut rng)).collect();
                for c in 0..n_cells {
                    let x = mesh.cell_centers[c];
                    let s = match self.config.mesh {
                        MeshSpec::Slab { length, .. } => x[0] / length,
                        MeshSpec::Disk { radius, .. } => (x[0] * x[0] + x[1] * x[1]).sqrt() / radius,
                    };
                    let cell = f.cell_mut(c);
                    for (m, p) in modes.iter().enumerate() {
                        let w = ((m + 1) as f64 * std::f64::consts::PI * s).cos();
                        axpy(w, p, cell);
                    }
                }
                // Remove the net charge with a uniform Maxwellian shift.
                let rho = charge_density(grid, &f);
                let net = ksum(rho.iter().zip(&mesh.volumes).map(|(r, v)| r * v)) / mesh.measure();
                let m0 = grid.dot_v(&grid.sqrt_mu, &grid.sqrt_mu);
                for c in 0..n_cells {
                    axpy(-net / m0, &grid.sqrt_mu, f.cell_mut(c));
                }
            }
        }
        let norm = crate::grid::weighted_lp_norm(&f, mesh, grid, f64::INFINITY, self.config.theta0)?;
        if norm > 0.0 {
            let s = self.config.epsilon / norm;
            f.values.iter_mut().for_each(|x| *x *= s);
        }
        Ok(f)
    }

    pub fn state_from(&self, f: DistributionField, step_index: u64) -> Result<SimState> {
        f.check_finite()?;
        let pf = self.solve_field(&f)?;
        Ok(SimState { t: f.time, f, pf, step_index, mode: self.config.mode })
    }

    pub fn initial_state(&self) -> Result<SimState> {
        self.state_from(self.initial_field()?, 0)
    }

    pub fn checkpoint(&self, state: &SimState) -> Checkpoint {
        let mode = match state.mode {
            Mode::Frozen => 0,
            Mode::Full => 1,
        };
        Checkpoint::from_field(&state.f, self.config.v_max, self.config.n_axis, state.step_index, mode)
    }

    pub fn resume(&self, ck: Checkpoint) -> Result<SimState> {
        if ck.n_axis as usize != self.config.n_axis || ck.v_max != self.config.v_max || ck.n_cells as usize != self.mesh.n_active() {
            return Err(VplError::Format("checkpoint grid does not match the configuration".into()));
        }
        let step = ck.step;
        self.state_from(ck.into_field(), step)
    }

    /// Free streaming with specular walls plus field acceleration over
    /// `tau`, by the two-stage strong-stability-preserving Runge-Kutta method
    /// (a convex combination of forward-Euler stages, so upwind positivity is
    /// kept while the field-work pairing error drops to third order).
    pub fn step_transport(&self, f: &DistributionField, tau: f64) -> Result<DistributionField> {
        let u1 = self.transport_euler(f, tau)?;
        let u2 = self.transport_euler(&u1, tau)?;
        let mut out = f.clone();
        out.values.iter_mut().zip(&u2.values).for_each(|(a, b)| *a = 0.5 * (*a + b));
        out.time = f.time + tau;
        Ok(out)
    }

    /// One forward-Euler transport stage with the field of `f`.
    pub fn transport_euler(&self, f: &DistributionField, tau: f64) -> Result<DistributionField> {
        let grid = &*self.grid;
        let mesh = &self.mesh;
        let n = grid.n_axis;
        let v_node = grid.axis.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if tau * v_node * mesh.dim as f64 > mesh.dx * (1.0 + 1e-12) {
            return Err(VplError::InvalidInput(format!("transport CFL violated: tau = {tau}")));
        }
        let pf = self.solve_field(f)?;
        let faces = &self.poisson.faces;
        let h = grid.spacing;
        let cells = self.config.exec.map(mesh.n_active(), |c| {
            let fc = f.cell(c);
            let mut out = fc.to_vec();
            let vol = mesh.volumes[c];
            for axis in 0..mesh.dim {
                let lo = mesh.neighbors[c][2 * axis];
                let hi = mesh.neighbors[c][2 * axis + 1];
                let a_lo = self.cell_faces[c][2 * axis].map(|i| faces[i].area).unwrap_or(0.0);
                let a_hi = self.cell_faces[c][2 * axis + 1].map(|i| faces[i].area).unwrap_or(0.0);
                for k in 0..fc.len() {
                    let v = grid.nodes[k][axis];
                    let ghost = || fc[grid.reflect(k, axis)];
                    let flux_hi = if v > 0.0 { v * fc[k] } else { v * hi.map(|h| f.cell(h)[k]).unwrap_or_else(ghost) };
                    let flux_lo = if v > 0.0 { v * lo.map(|l| f.cell(l)[k]).unwrap_or_else(ghost) } else { v * fc[k] };
                    out[k] -= tau * (a_hi * flux_hi - a_lo * flux_lo) / vol;
                }
                // Acceleration along v_axis: dF/dt = -d(E F)/dv_axis.
                let e_lo = self.cell_faces[c][2 * axis].map(|i| pf.e_faces[i]).unwrap_or(0.0);
                let e_hi = self.cell_faces[c][2 * axis + 1].map(|i| pf.e_faces[i]).unwrap_or(0.0);
                if e_lo == 0.0 && e_hi == 0.0 {
                    continue;
                }
                let stride = match axis {
                    0 => n * n,
                    1 => n,
                    _ => 1,
                };
                for base in 0..fc.len() {
                    let (i, j, l) = grid.unindex(base);
                    let first = match axis {
                        0 => i,
                        1 => j,
                        _ => l,
                    };
                    if first != 0 {
                        continue;
                    }
                    let idx = |m: usize| base + m * stride;
                    let ef = |m: usize| {
                        let k = idx(m);
                        let e = if grid.nodes[k][axis] > 0.0 { e_hi } else { e_lo };
                        e * (grid.mu[k] + grid.sqrt_mu[k] * fc[k])
                    };
                    let phi: Vec<f64> = (0..n - 1).map(|m| 0.5 * (ef(m) + ef(m + 1))).collect();
                    for m in 0..n {
                        let right = if m + 1 < n { phi[m] } else { 0.0 };
                        let left = if m > 0 { phi[m - 1] } else { 0.0 };
                        let k = idx(m);
                        out[k] -= tau * (right - left) / (h * grid.sqrt_mu[k]);
                    }
                }
            }
            out
        });
        let mut next = f.clone();
        for (c, vals) in cells.into_iter().enumerate() {
            next.cell_mut(c).copy_from_slice(&vals);
        }
        next.time = f.time + tau;
        next.check_finite()?;
        Ok(next)
    }

    fn propagator(&self, dt: f64) -> Result<Arc<Vec<DMatrix<f64>>>> {
        let spec = self.spectrum.as_ref().ok_or_else(|| VplError::InvalidInput("no spectrum for the exponential integrator".into()))?;
        let mut cache = self.propagators.lock().unwrap();
        Ok(cache.entry(dt.to_bits()).or_insert_with(|| Arc::new(spec.propagator(dt))).clone())
    }

    /// `(I + dt L) x = b` by conjugate gradients from `x_0 = b`; the initial
    /// residual lies in the range of `L`, so the collision invariants of `b`
    /// are kept exactly.
    fn implicit_solve(&self, b: &[f64], dt: f64) -> Result<Vec<f64>> {
        let apply = |x: &[f64]| -> Vec<f64> {
            let lx = self.ops.apply_l(x);
            x.iter().zip(&lx).map(|(a, l)| a + dt * l).collect()
        };
        let mut x = b.to_vec();
        let ax = apply(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let mut p = r.clone();
        let bnorm = cell_norm(b).max(f64::MIN_POSITIVE);
        let mut rr = ksum(r.iter().map(|a| a * a));
        for _ in 0..1000 {
            if rr.sqrt() <= self.config.cg_tol * bnorm {
                return Ok(x);
            }
            let ap = apply(&p);
            let alpha = rr / ksum(p.iter().zip(&ap).map(|(a, c)| a * c));
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            let rr_new = ksum(r.iter().map(|a| a * a));
            let beta = rr_new / rr;
            rr = rr_new;
            p.iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
        }
        Err(VplError::Numerical("conjugate gradients did not converge".into()))
    }

    /// One linear collision step for one cell; `coeffs` present in full mode.
    fn linear_collision_cell(&self, f: &[f64], dt: f64, coeffs: Option<&GammaCoefficients>, prop: Option<Propagators<'_>>) -> Result<Vec<f64>> {
        let nonlin = |x: &[f64]| coeffs.map(|c| self.ops.apply_gamma_with(c, x));
        match self.config.integrator {
            Integrator::Rk2 => {
                let rhs = |x: &[f64]| {
                    let mut r = self.ops.apply_l(x);
                    r.iter_mut().for_each(|v| *v = -*v);
                    if let Some(g) = nonlin(x) {
                        axpy(1.0, &g, &mut r);
                    }
                    r
                };
                let k1 = rhs(f);
                let mut u = f.to_vec();
                axpy(dt, &k1, &mut u);
                let k2 = rhs(&u);
                let mut out = f.to_vec();
                axpy(0.5 * dt, &k1, &mut out);
                axpy(0.5 * dt, &k2, &mut out);
                Ok(out)
            }
            Integrator::Implicit => {
                let mut b = f.to_vec();
                if let Some(g) = nonlin(f) {
                    axpy(dt, &g, &mut b);
                }
                self.implicit_solve(&b, dt)
            }
            Integrator::Exponential => {
                let spec = self.spectrum.as_ref().unwrap();
                let (full, half) = prop.unwrap();
                match nonlin(f) {
                    None => Ok(spec.apply_blocks(full, f)),
                    Some(k1) => {
                        // Lawson midpoint: every Gamma contribution passes
                        // through exp(-dt L / 2), which damps the stiff
                        // tail modes the explicit term cannot resolve.
                        let mut u = f.to_vec();
                        axpy(0.5 * dt, &k1, &mut u);
                        let u = spec.apply_blocks(half, &u);
                        let k2 = spec.apply_blocks(half, &nonlin(&u).unwrap());
                        let mut out = spec.apply_blocks(full, f);
                        axpy(dt, &k2, &mut out);
                        Ok(out)
                    }
                }
            }
        }
    }

    /// Collision over `dt` with the Picard loop; returns the new field and
    /// its log, or the reason for rejection.
    pub fn step_collision(&self, f: &DistributionField, dt: f64, step: u64) -> Result<(DistributionField, PicardLog)> {
        let prop = match self.config.integrator {
            Integrator::Exponential => Some((self.propagator(dt)?, self.propagator(0.5 * dt)?)),
            _ => None,
        };
        let prop_ref = prop.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
        let full = self.config.mode == Mode::Full;
        let results = self.config.exec.map(f.n_cells, |c| -> Result<(Vec<f64>, usize, f64, f64)> {
            let f0 = f.cell(c);
            let n0 = cell_norm(f0);
            if !full {
                let out = self.linear_collision_cell(f0, dt, None, prop_ref)?;
                return Ok((out, 1, 0.0, f64::NAN));
            }
            let mut g = f0.to_vec();
            let mut last_delta: Option<f64> = None;
            let mut contraction = 0.0f64;
            let mut min_eig = f64::INFINITY;
            for it in 1..=self.config.picard_max_iters {
                let coeffs = self.ops.gamma_coefficients(&g);
                for (s, a) in self.ops.maxwellian.sigma.iter().zip(&coeffs.a) {
                    let mut sg = *s;
                    sg.iter_mut().zip(a).for_each(|(x, y)| *x += y);
                    min_eig = min_eig.min(sym::eigenvalues(&sg)[0]);
                }
                if !(min_eig > 0.0) {
                    return Err(VplError::StepFailed { step, reason: format!("sigma_G lost positive definiteness in cell {c} ({min_eig:e})") });
                }
                let next = self.linear_collision_cell(f0, dt, Some(&coeffs), prop_ref)?;
                let delta = ksum(next.iter().zip(&g).map(|(a, b)| (a - b) * (a - b))).sqrt();
                let scale = cell_norm(&g);
                if let Some(prev) = last_delta {
                    if prev > 0.0 {
                        contraction = contraction.max(delta / prev);
                    }
                }
                last_delta = Some(delta);
                g = next;
                if delta <= self.config.picard_tol * scale || scale == 0.0 {
                    return Ok((g, it, contraction, min_eig));
                }
            }
            let _ = n0;
            Err(VplError::StepFailed { step, reason: format!("Picard iteration did not converge in cell {c}") })
        });
        let mut out = f.clone();
        let mut log = PicardLog { step, iterations: 0, max_contraction: 0.0, min_sigma_eig: f64::INFINITY };
        for (c, r) in results.into_iter().enumerate() {
            let (vals, it, contr, eig) = r?;
            let before = cell_norm(f.cell(c));
            let after = cell_norm(&vals);
            if before > 0.0 && after > 10.0 * before {
                return Err(VplError::StepFailed { step, reason: format!("norm grew by {:.3e} in cell {c}", after / before) });
            }
            out.cell_mut(c).copy_from_slice(&vals);
            log.iterations = log.iterations.max(it);
            log.max_contraction = log.max_contraction.max(contr);
            if eig.is_finite() {
                log.min_sigma_eig = log.min_sigma_eig.min(eig);
            }
        }
        out.check_finite()?;
        Ok((out, log))
    }

    /// One Strang step of length `dt`.
    pub fn strang(&self, f: &DistributionField, dt: f64, step: u64) -> Result<(DistributionField, PicardLog)> {
        let a = self.step_transport(f, 0.5 * dt)?;
        let (b, log) = self.step_collision(&a, dt, step)?;
        let mut c = self.step_transport(&b, 0.5 * dt)?;
        c.time = f.time + dt;
        Ok((c, log))
    }

    /// Advances one step; a rejected step is retried as two half steps (up
    /// to four halvings).
    pub fn advance(&self, state: &SimState) -> Result<(SimState, Vec<PicardLog>, u64)> {
        fn go(sim: &Simulation, f: &DistributionField, dt: f64, step: u64, depth: u32, logs: &mut Vec<PicardLog>, halvings: &mut u64) -> Result<DistributionField> {
            match sim.strang(f, dt, step) {
                Ok((g, log)) => {
                    logs.push(log);
                    Ok(g)
                }
                Err(VplError::StepFailed { .. }) if depth < 4 => {
                    *halvings += 1;
                    let mid = go(sim, f, 0.5 * dt, step, depth + 1, logs, halvings)?;
                    go(sim, &mid, 0.5 * dt, step, depth + 1, logs, halvings)
                }
                Err(e) => Err(e),
            }
        }
        let mut logs = Vec::new();
        let mut halvings = 0;
        let step = state.step_index + 1;
        let mut f = go(self, &state.f, self.dt, step, 0, &mut logs, &mut halvings)?;
        // Time from the step counter so a resumed run lands on the same grid.
        f.time = step as f64 * self.dt;
        let next = self.state_from(f, step)?;
        Ok((next, logs, halvings))
    }

    /// `|one step of dt - two steps of dt/2| / |f|` from `state`.
    pub fn splitting_error(&self, state: &SimState) -> Result<f64> {
        let (one, _) = self.strang(&state.f, self.dt, state.step_index + 1)?;
        let (half, _) = self.strang(&state.f, 0.5 * self.dt, state.step_index + 1)?;
        let (two, _) = self.strang(&half, 0.5 * self.dt, state.step_index + 1)?;
        let n = state.f.l2();
        Ok(if n > 0.0 { one.l2_distance(&two) / n } else { 0.0 })
    }

    fn record(&self, state: &SimState, acc: &mut EnergyAccumulator) -> Result<DiagnosticsRecord> {
        let mut rec = diagnostics::conservation_report(&self.diag_context(), &state.f, &state.pf, state.step_index)?;
        rec.t = state.t;
        acc.push(&mut rec);
        Ok(rec)
    }

    /// Runs from `state` to `t_end`.
    pub fn run_from(&self, mut state: SimState) -> Result<RunOutput> {
        let mut out = RunOutput { dt: self.dt, n_steps: self.n_steps, min_full: state.f.min_full(&self.grid), ..Default::default() };
        let mut acc = EnergyAccumulator::default();
        if self.config.splitting_check && state.step_index == 0 && state.f.l2() > 0.0 {
            out.splitting_error = Some(self.splitting_error(&state)?);
        }
        out.records.push(self.record(&state, &mut acc)?);
        if self.config.snapshot_every > 0 {
            out.snapshots.push(state.f.clone());
        }
        let mut flux = self.poisson.boundary_flux(&state.pf);
        while state.step_index < self.n_steps {
            let (next, logs, halvings) = self.advance(&state).map_err(|e| match e {
                VplError::StepFailed { .. } => e,
                other => VplError::StepFailed { step: state.step_index + 1, reason: other.to_string() },
            })?;
            state = next;
            out.picard.extend(logs);
            out.dt_halvings += halvings;
            let new_flux = self.poisson.boundary_flux(&state.pf);
            out.max_flux_step = out.max_flux_step.max((new_flux - flux).abs());
            flux = new_flux;
            out.min_full = out.min_full.min(state.f.min_full(&self.grid));
            let s = state.step_index;
            if s.is_multiple_of(self.config.cadence) || s == self.n_steps {
                out.records.push(self.record(&state, &mut acc)?);
            }
            if self.config.snapshot_every > 0 && s.is_multiple_of(self.config.snapshot_every) {
                out.snapshots.push(state.f.clone());
            }
            if self.config.checkpoint_every > 0 && s.is_multiple_of(self.config.checkpoint_every) {
                let dir = self.config.checkpoint_dir.as_ref().unwrap();
                std::fs::create_dir_all(dir)?;
                self.checkpoint(&state).save(&dir.join(format!("ckpt_{s:08}.bin")))?;
            }
        }
        out.final_state = Some(state);
        Ok(out)
    }

    pub fn run(&self) -> Result<RunOutput> {
        self.run_from(self.initial_state()?)
    }
}

/// Builds and runs a configuration.
pub fn run(config: SolverConfig) -> Result<RunOutput> {
    Simulation::new(config)?.run()
}
