//! Self-consistent electrostatic field: `-Lap(phi) = rho`, `E = -grad(phi)`.
//!
//! The potential lives on cell centres and the field on cell faces, so the
//! discrete Gauss law `sum_faces E.n |face| = rho |cell|` holds exactly in
//! every cell. Dirichlet walls use an odd ghost value (`phi = 0` on the wall);
//! Neumann walls carry zero normal field, and the null space is removed by a
//! zero-mean constraint on `phi`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VplError};
use crate::grid::{ksum, DistributionField, SpatialMesh, VelocityGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Dirichlet,
    #[default]
    Neumann,
}

/// A face normal to `axis`; `lo` and `hi` are the cells on its negative and
/// positive sides (`None` marks a wall).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub lo: Option<usize>,
    pub hi: Option<usize>,
    pub axis: usize,
    pub area: f64,
}

/// Faces of a mesh. For a slab they are ordered left to right.
pub fn mesh_faces(mesh: &SpatialMesh) -> Vec<Face> {
    if mesh.dim == 1 {
        let n = mesh.n_active();
        return (0..=n)
            .map(|f| Face { lo: f.checked_sub(1), hi: (f < n).then_some(f), axis: 0, area: 1.0 })
            .collect();
    }
    let mut faces = Vec::new();
    for (c, nb) in mesh.neighbors.iter().enumerate() {
        for axis in 0..2 {
            if let Some(h) = nb[2 * axis + 1] {
                faces.push(Face { lo: Some(c), hi: Some(h), axis, area: mesh.dx });
            }
        }
    }
    for bf in &mesh.boundary_faces {
        let (lo, hi) = if bf.normal[bf.axis] > 0.0 { (Some(bf.cell), None) } else { (None, Some(bf.cell)) };
        faces.push(Face { lo, hi, axis: bf.axis, area: bf.area });
    }
    faces
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub phi: Vec<f64>,
    /// Cell-centred field (face average along each axis).
    pub e_field: Vec<[f64; 3]>,
    /// Field component along each face's axis, in `mesh_faces` order.
    pub e_faces: Vec<f64>,
    pub bc_kind: BcKind,
    pub rho0: f64,
}

/// `rho[f] = int sqrt(mu) f dv` per cell.
pub fn charge_density(grid: &VelocityGrid, f: &DistributionField) -> Vec<f64> {
    (0..f.n_cells).map(|c| grid.dot_v(f.cell(c), &grid.sqrt_mu)).collect()
}

/// Background density `|Omega|^{-1} int int F dv dx` of a full distribution.
pub fn background_density(grid: &VelocityGrid, mesh: &SpatialMesh, f: &DistributionField) -> f64 {
    let eq = grid.integrate_unchecked(&grid.mu);
    let pert = ksum((0..f.n_cells).map(|c| mesh.volumes[c] * grid.dot_v(f.cell(c), &grid.sqrt_mu)));
    (eq * mesh.measure() + pert) / mesh.measure()
}

pub struct PoissonSolver {
    pub mesh: SpatialMesh,
    pub bc_kind: BcKind,
    pub faces: Vec<Face>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl PoissonSolver {
    pub fn new(mesh: &SpatialMesh, bc_kind: BcKind) -> Result<Self> {
        let faces = mesh_faces(mesh);
        let n = mesh.n_active();
        let m = if bc_kind == BcKind::Neumann { n + 1 } else { n };
        let mut a = DMatrix::<f64>::zeros(m, m);
        let dx = mesh.dx;
        // Row c: sum over faces of the outward flux E.n |face| as a function of phi.
        for f in &faces {
            match (f.lo, f.hi) {
                (Some(l), Some(h)) => {
                    // E = -(phi_h - phi_l)/dx; outward from l is +E, from h is -E.
                    let k = f.area / dx;
                    a[(l, l)] += k;
                    a[(l, h)] -= k;
                    a[(h, h)] += k;
                    a[(h, l)] -= k;
                }
                (Some(c), None) | (None, Some(c)) => {
                    if bc_kind == BcKind::Dirichlet {
                        a[(c, c)] += 2.0 * f.area / dx;
                    }
                }
                (None, None) => unreachable!(),
            }
        }
        if bc_kind == BcKind::Neumann {
            for c in 0..n {
                a[(c, n)] = mesh.volumes[c];
                a[(n, c)] = mesh.volumes[c];
            }
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(VplError::Numerical("singular Poisson matrix".into()));
        }
        Ok(PoissonSolver { mesh: mesh.clone(), bc_kind, faces, lu })
    }

    /// Tolerance on `|int rho dx|` for the Neumann problem.
    pub fn neutrality_tolerance(&self, rho: &[f64]) -> f64 {
        1e-10 * ksum(rho.iter().zip(&self.mesh.volumes).map(|(r, v)| r.abs() * v)).max(1.0)
    }

    pub fn solve(&self, rho: &[f64], rho0: f64) -> Result<PotentialField> {
        let n = self.mesh.n_active();
        if rho.len() != n {
            return Err(VplError::InvalidInput(format!("expected {n} cell densities, got {}", rho.len())));
        }
        crate::error::check_finite(rho)?;
        let mut b = DVector::<f64>::zeros(if self.bc_kind == BcKind::Neumann { n + 1 } else { n });
        for c in 0..n {
            b[c] = rho[c] * self.mesh.volumes[c];
        }
        if self.bc_kind == BcKind::Neumann {
            let imbalance = ksum((0..n).map(|c| b[c]));
            if imbalance.abs() > self.neutrality_tolerance(rho) {
                return Err(VplError::NotNeutral { imbalance });
            }
        }
        let x = self.lu.solve(&b).ok_or_else(|| VplError::Numerical("Poisson solve failed".into()))?;
        let mut phi: Vec<f64> = (0..n).map(|c| x[c]).collect();
        if self.bc_kind == BcKind::Neumann {
            let mean = ksum(phi.iter().zip(&self.mesh.volumes).map(|(p, v)| p * v)) / self.mesh.measure();
            phi.iter_mut().for_each(|p| *p -= mean);
        }
        Ok(self.field_from_phi(phi, rho0))
    }

    fn field_from_phi(&self, phi: Vec<f64>, rho0: f64) -> PotentialField {
        let dx = self.mesh.dx;
        let dirichlet = self.bc_kind == BcKind::Dirichlet;
        let e_faces: Vec<f64> = self
            .faces
            .iter()
            .map(|f| match (f.lo, f.hi) {
                (Some(l), Some(h)) => -(phi[h] - phi[l]) / dx,
                (Some(l), None) if dirichlet => 2.0 * phi[l] / dx,
                (None, Some(h)) if dirichlet => -2.0 * phi[h] / dx,
                _ => 0.0,
            })
            .collect();
        let mut e_field = vec![[0.0; 3]; phi.len()];
        for (f, e) in self.faces.iter().zip(&e_faces) {
            for c in [f.lo, f.hi].into_iter().flatten() {
                e_field[c][f.axis] += 0.5 * e;
            }
        }
        PotentialField { phi, e_field, e_faces, bc_kind: self.bc_kind, rho0 }
    }

    /// Quadrature weight of each face for `int |E|^2 dx`.
    pub fn face_weights(&self) -> Vec<f64> {
        let dx = self.mesh.dx;
        self.faces
            .iter()
            .map(|f| if f.lo.is_some() && f.hi.is_some() { f.area * dx } else { 0.5 * f.area * dx })
            .collect()
    }

    pub fn field_energy(&self, pf: &PotentialField) -> f64 {
        ksum(self.face_weights().iter().zip(&pf.e_faces).map(|(w, e)| w * e * e))
    }

    /// `oint E.n dS` over the walls.
    pub fn boundary_flux(&self, pf: &PotentialField) -> f64 {
        ksum(self.faces.iter().zip(&pf.e_faces).filter_map(|(f, e)| match (f.lo, f.hi) {
            (Some(_), None) => Some(e * f.area),
            (None, Some(_)) => Some(-e * f.area),
            _ => None,
        }))
    }
}

pub fn solve_poisson(mesh: &SpatialMesh, rho: &[f64], bc_kind: BcKind) -> Result<PotentialField> {
    PoissonSolver::new(mesh, bc_kind)?.solve(rho, 0.0)
}

/// `||E||_{W^{1,p}_x} / ||f||_{L^p_{x,v}}`; zero when `f` vanishes.
pub fn field_bound_report(
    solver: &PoissonSolver,
    pf: &PotentialField,
    f: &DistributionField,
    grid: &VelocityGrid,
    p: f64,
) -> Result<f64> {
    if p.is_nan() || p <= 1.0 {
        return Err(VplError::InvalidInput(format!("p must lie in (1, inf], got {p}")));
    }
    let mesh = &solver.mesh;
    let fnorm = crate::grid::weighted_lp_norm(f, mesh, grid, p, 0.0)?;
    if fnorm == 0.0 {
        return Ok(0.0);
    }
    // Cell-centred gradient of the cell field: centred where both neighbours
    // exist, one-sided otherwise.
    let n = mesh.n_active();
    let mut grad = vec![[[0.0; 3]; 3]; n];
    for c in 0..n {
        for axis in 0..mesh.dim {
            let (lo, hi) = (mesh.neighbors[c][2 * axis], mesh.neighbors[c][2 * axis + 1]);
            for comp in 0..3 {
                let e = |k: usize| pf.e_field[k][comp];
                grad[c][comp][axis] = match (lo, hi) {
                    (Some(l), Some(h)) => (e(h) - e(l)) / (2.0 * mesh.dx),
                    (None, Some(h)) => (e(h) - e(c)) / mesh.dx,
                    (Some(l), None) => (e(c) - e(l)) / mesh.dx,
                    (None, None) => 0.0,
                };
            }
        }
    }
    let enorm = if p.is_infinite() {
        let a = pf.e_field.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        let b = grad.iter().flatten().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        a.max(b)
    } else {
        let s = ksum((0..n).map(|c| {
            let a: f64 = pf.e_field[c].iter().map(|x| x.abs().powf(p)).sum();
            let b: f64 = grad[c].iter().flatten().map(|x| x.abs().powf(p)).sum();
            mesh.volumes[c] * (a + b)
        }));
        s.powf(1.0 / p)
    };
    Ok(enorm / fnorm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_source() {
        let mesh = SpatialMesh::slab(1.0, 16).unwrap();
        for bc in [BcKind::Dirichlet, BcKind::Neumann] {
            let pf = solve_poisson(&mesh, &[0.0; 16], bc).unwrap();
            assert!(pf.phi.iter().all(|x| *x == 0.0));
            assert!(pf.e_faces.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn rejects_charged_neumann_source() {
        let mesh = SpatialMesh::slab(1.0, 8).unwrap();
        let err = solve_poisson(&mesh, &[1.0; 8], BcKind::Neumann).unwrap_err();
        assert!(matches!(err, VplError::NotNeutral { imbalance } if (imbalance - 1.0).abs() < 1e-12));
    }

    #[test]
    fn green_identity_holds() {
        let mesh = SpatialMesh::slab(1.0, 20).unwrap();
        let s = PoissonSolver::new(&mesh, BcKind::Dirichlet).unwrap();
        let rho: Vec<f64> = mesh.cell_centers.iter().map(|x| (3.0 * x[0]).exp()).collect();
        let pf = s.solve(&rho, 0.0).unwrap();
        let total = ksum(rho.iter().map(|r| r * mesh.dx));
        assert!((s.boundary_flux(&pf) - total).abs() < 1e-10);
    }

    #[test]
    fn disk_neumann() {
        let mesh = SpatialMesh::disk(1.0, 16).unwrap();
        let s = PoissonSolver::new(&mesh, BcKind::Neumann).unwrap();
        let rho: Vec<f64> = mesh.cell_centers.iter().map(|x| x[0]).collect();
        let mean = ksum(rho.iter().zip(&mesh.volumes).map(|(r, v)| r * v)) / mesh.measure();
        let rho: Vec<f64> = rho.iter().map(|r| r - mean).collect();
        let pf = s.solve(&rho, 0.0).unwrap();
        assert!(s.boundary_flux(&pf).abs() < 1e-12);
        let m = ksum(pf.phi.iter().zip(&mesh.volumes).map(|(p, v)| p * v));
        assert!(m.abs() < 1e-12);
        assert!(pf.e_field.iter().any(|e| e[0].abs() > 1e-3));
    }
}
