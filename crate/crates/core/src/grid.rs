//! Velocity lattice, spatial meshes, Maxwellian tables and weighted norms.

use std::sync::{Arc, RwLock};

use crate::error::{check_finite, Result, VplError};

/// Neumaier-compensated sum. Order of summation is the iterator order, so
/// results are reproducible regardless of how the data was produced.
pub fn ksum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

#[inline]
pub fn maxwellian(v: &[f64; 3]) -> f64 {
    (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
}

#[inline]
pub fn bracket(v: &[f64; 3]) -> f64 {
    (1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Cell-centred tensor lattice on `[-v_max, v_max]^3`.
///
/// Node `(i, j, k)` sits at `-v_max + (i + 1/2) h` along each axis and has
/// flat index `(i * n + j) * n + k`. Every node carries weight `h^3`, so the
/// rule is the composite midpoint rule; the node set is closed under `v -> -v`
/// and contains no node at the origin.
#[derive(Debug)]
pub struct VelocityGrid {
    pub v_max: f64,
    pub n_axis: usize,
    pub spacing: f64,
    pub axis: Vec<f64>,
    pub nodes: Vec<[f64; 3]>,
    pub quad_weights: Vec<f64>,
    pub mu: Vec<f64>,
    pub sqrt_mu: Vec<f64>,
    /// `exp(-x^2/2)` along one axis; `sqrt_mu` factorizes into these.
    pub axis_sqrt_mu: Vec<f64>,
    weight_cache: RwLock<Vec<(u64, Arc<Vec<f64>>)>>,
}

impl Clone for VelocityGrid {
    fn clone(&self) -> Self {
        VelocityGrid::new(self.v_max, self.n_axis).expect("grid was valid")
    }
}

impl VelocityGrid {
    pub fn new(v_max: f64, n_axis: usize) -> Result<Self> {
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(VplError::InvalidInput(format!("v_max must be positive, got {v_max}")));
        }
        if n_axis < 8 || !n_axis.is_multiple_of(2) {
            return Err(VplError::InvalidInput(format!("n_axis must be even and >= 8, got {n_axis}")));
        }
        let h = 2.0 * v_max / n_axis as f64;
        let axis: Vec<f64> = (0..n_axis).map(|i| -v_max + (i as f64 + 0.5) * h).collect();
        // Force exact antisymmetry of the axis so parity arguments hold bitwise.
        let mut axis = axis;
        for i in 0..n_axis / 2 {
            let a = 0.5 * (axis[n_axis - 1 - i] - axis[i]);
            axis[i] = -a;
            axis[n_axis - 1 - i] = a;
        }
        let n3 = n_axis * n_axis * n_axis;
        let mut nodes = Vec::with_capacity(n3);
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    nodes.push([a, b, c]);
                }
            }
        }
        let mu: Vec<f64> = nodes.iter().map(maxwellian).collect();
        let sqrt_mu = mu.iter().map(|m| m.sqrt()).collect();
        let axis_sqrt_mu = axis.iter().map(|x| (-0.5 * x * x).exp()).collect();
        Ok(VelocityGrid {
            v_max,
            n_axis,
            spacing: h,
            axis,
            nodes,
            quad_weights: vec![h * h * h; n3],
            mu,
            sqrt_mu,
            axis_sqrt_mu,
            weight_cache: RwLock::new(Vec::new()),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_axis + j) * self.n_axis + k
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n_axis;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    /// Index of `-v`.
    #[inline]
    pub fn negate(&self, idx: usize) -> usize {
        let n = self.n_axis;
        let (i, j, k) = self.unindex(idx);
        self.index(n - 1 - i, n - 1 - j, n - 1 - k)
    }

    /// Index of the node with `v_axis` negated.
    #[inline]
    pub fn reflect(&self, idx: usize, axis: usize) -> usize {
        let n = self.n_axis;
        let (mut i, mut j, mut k) = self.unindex(idx);
        match axis {
            0 => i = n - 1 - i,
            1 => j = n - 1 - j,
            _ => k = n - 1 - k,
        }
        self.index(i, j, k)
    }

    /// `<v>^theta` at every node; cached per exponent.
    pub fn weight(&self, theta: f64) -> Arc<Vec<f64>> {
        let key = theta.to_bits();
        if let Some((_, w)) = self.weight_cache.read().unwrap().iter().find(|(k, _)| *k == key) {
            return w.clone();
        }
        let w: Arc<Vec<f64>> = Arc::new(self.nodes.iter().map(|v| bracket(v).powf(theta)).collect());
        self.weight_cache.write().unwrap().push((key, w.clone()));
        w
    }

    pub fn integrate_v(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.len() {
            return Err(VplError::InvalidInput(format!("expected {} nodes, got {}", self.len(), h.len())));
        }
        check_finite(h)?;
        Ok(self.integrate_unchecked(h))
    }

    #[inline]
    pub(crate) fn integrate_unchecked(&self, h: &[f64]) -> f64 {
        ksum(h.iter().copied()) * self.cell_volume()
    }

    /// Discrete L^2_v inner product.
    #[inline]
    pub fn dot_v(&self, a: &[f64], b: &[f64]) -> f64 {
        ksum(a.iter().zip(b).map(|(x, y)| x * y)) * self.cell_volume()
    }

    pub fn from_fn(&self, f: impl Fn(&[f64; 3]) -> f64) -> Vec<f64> {
        self.nodes.iter().map(f).collect()
    }

    /// Values of `h` (given per node) times `sqrt(mu)`, handy for building fields.
    pub fn times_sqrt_mu(&self, f: impl Fn(&[f64; 3]) -> f64) -> Vec<f64> {
        self.nodes.iter().zip(&self.sqrt_mu).map(|(v, s)| f(v) * s).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum MeshKind {
    Slab { length: f64 },
    Disk { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub area: f64,
    /// Axis of the face normal (the disk uses a staircase boundary).
    pub axis: usize,
}

/// Spatial mesh: uniform cells on a slab `[0, L]`, or the cells of a square
/// lattice whose centres lie inside a disk of radius `R` (staircase walls).
#[derive(Clone, Debug)]
pub struct SpatialMesh {
    pub dim: usize,
    pub kind: MeshKind,
    pub n_cells: usize,
    pub dx: f64,
    pub cell_centers: Vec<[f64; 3]>,
    pub volumes: Vec<f64>,
    /// Neighbours in the order `-x, +x, -y, +y`; `None` at a wall.
    pub neighbors: Vec<[Option<usize>; 4]>,
    pub boundary_faces: Vec<BoundaryFace>,
}

impl SpatialMesh {
    pub fn slab(length: f64, n_cells: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) || n_cells < 1 {
            return Err(VplError::InvalidInput("slab needs positive length and at least one cell".into()));
        }
        let dx = length / n_cells as f64;
        let cell_centers = (0..n_cells).map(|j| [(j as f64 + 0.5) * dx, 0.0, 0.0]).collect();
        let neighbors = (0..n_cells)
            .map(|j| [j.checked_sub(1), (j + 1 < n_cells).then_some(j + 1), None, None])
            .collect();
        let boundary_faces = vec![
            BoundaryFace { cell: 0, center: [0.0; 3], normal: [-1.0, 0.0, 0.0], area: 1.0, axis: 0 },
            BoundaryFace { cell: n_cells - 1, center: [length, 0.0, 0.0], normal: [1.0, 0.0, 0.0], area: 1.0, axis: 0 },
        ];
        Ok(SpatialMesh {
            dim: 1,
            kind: MeshKind::Slab { length },
            n_cells,
            dx,
            cell_centers,
            volumes: vec![dx; n_cells],
            neighbors,
            boundary_faces,
        })
    }

    /// `n_axis` cells across the bounding square of the disk.
    pub fn disk(radius: f64, n_axis: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || n_axis < 2 {
            return Err(VplError::InvalidInput("disk needs positive radius and n_axis >= 2".into()));
        }
        let dx = 2.0 * radius / n_axis as f64;
        let center = |i: usize| -radius + (i as f64 + 0.5) * dx;
        let mut id = vec![None; n_axis * n_axis];
        let mut cell_centers = Vec::new();
        for i in 0..n_axis {
            for j in 0..n_axis {
                let (x, y) = (center(i), center(j));
                if x * x + y * y < radius * radius {
                    id[i * n_axis + j] = Some(cell_centers.len());
                    cell_centers.push([x, y, 0.0]);
                }
            }
        }
        let lookup = |i: isize, j: isize| -> Option<usize> {
            if i < 0 || j < 0 || i >= n_axis as isize || j >= n_axis as isize {
                None
            } else {
                id[i as usize * n_axis + j as usize]
            }
        };
        let mut neighbors = vec![[None; 4]; cell_centers.len()];
        let mut boundary_faces = Vec::new();
        for i in 0..n_axis {
            for j in 0..n_axis {
                let Some(c) = id[i * n_axis + j] else { continue };
                let (ii, jj) = (i as isize, j as isize);
                let nb = [lookup(ii - 1, jj), lookup(ii + 1, jj), lookup(ii, jj - 1), lookup(ii, jj + 1)];
                neighbors[c] = nb;
                for (slot, n) in nb.iter().enumerate() {
                    if n.is_none() {
                        let axis = slot / 2;
                        let sign = if slot % 2 == 0 { -1.0 } else { 1.0 };
                        let mut normal = [0.0; 3];
                        normal[axis] = sign;
                        let mut fc = cell_centers[c];
                        fc[axis] += sign * 0.5 * dx;
                        boundary_faces.push(BoundaryFace { cell: c, center: fc, normal, area: dx, axis });
                    }
                }
            }
        }
        let volumes = vec![dx * dx; cell_centers.len()];
        Ok(SpatialMesh {
            dim: 2,
            kind: MeshKind::Disk { radius },
            n_cells: n_axis,
            dx,
            cell_centers,
            volumes,
            neighbors,
            boundary_faces,
        })
    }

    pub fn single_cell(volume: f64) -> Self {
        let mut m = SpatialMesh::slab(volume, 1).expect("positive volume");
        m.volumes = vec![volume];
        m
    }

    #[inline]
    pub fn n_active(&self) -> usize {
        self.cell_centers.len()
    }

    pub fn measure(&self) -> f64 {
        ksum(self.volumes.iter().copied())
    }
}

/// Perturbation values, cell-major: entry `c * n_v + k` is cell `c`, node `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionField {
    pub values: Vec<f64>,
    pub n_cells: usize,
    pub n_v: usize,
    pub time: f64,
}

impl DistributionField {
    pub fn zeros(mesh: &SpatialMesh, grid: &VelocityGrid) -> Self {
        DistributionField { values: vec![0.0; mesh.n_active() * grid.len()], n_cells: mesh.n_active(), n_v: grid.len(), time: 0.0 }
    }

    pub fn from_fn(mesh: &SpatialMesh, grid: &VelocityGrid, f: impl Fn(&[f64; 3], &[f64; 3]) -> f64) -> Self {
        let mut values = Vec::with_capacity(mesh.n_active() * grid.len());
        for x in &mesh.cell_centers {
            for v in &grid.nodes {
                values.push(f(x, v));
            }
        }
        DistributionField { values, n_cells: mesh.n_active(), n_v: grid.len(), time: 0.0 }
    }

    /// Same velocity profile in every cell.
    pub fn from_profile(n_cells: usize, profile: &[f64]) -> Self {
        let mut values = Vec::with_capacity(n_cells * profile.len());
        for _ in 0..n_cells {
            values.extend_from_slice(profile);
        }
        DistributionField { values, n_cells, n_v: profile.len(), time: 0.0 }
    }

    #[inline]
    pub fn cell(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_v..(c + 1) * self.n_v]
    }

    #[inline]
    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.n_v..(c + 1) * self.n_v]
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.values)
    }

    /// Minimum of `F = mu + sqrt(mu) f` over all nodes.
    pub fn min_full(&self, grid: &VelocityGrid) -> f64 {
        let mut m = f64::INFINITY;
        for c in 0..self.n_cells {
            for (k, f) in self.cell(c).iter().enumerate() {
                m = m.min(grid.mu[k] + grid.sqrt_mu[k] * f);
            }
        }
        m
    }

    pub fn is_physical(&self, grid: &VelocityGrid) -> bool {
        self.min_full(grid) >= -1e-12
    }

    pub fn l2_distance(&self, other: &DistributionField) -> f64 {
        ksum(self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b))).sqrt()
    }

    pub fn l2(&self) -> f64 {
        ksum(self.values.iter().map(|a| a * a)).sqrt()
    }
}

/// `|| <v>^theta f ||_{L^p_{x,v}}`; `p = f64::INFINITY` gives the grid maximum.
pub fn weighted_lp_norm(f: &DistributionField, mesh: &SpatialMesh, grid: &VelocityGrid, p: f64, theta: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(VplError::InvalidInput(format!("p must lie in [1, inf], got {p}")));
    }
    if f.n_cells != mesh.n_active() || f.n_v != grid.len() {
        return Err(VplError::InvalidInput("field does not match mesh/grid".into()));
    }
    f.check_finite()?;
    let w = grid.weight(theta);
    if p.is_infinite() {
        let mut m = 0.0f64;
        for c in 0..f.n_cells {
            for (x, wk) in f.cell(c).iter().zip(w.iter()) {
                m = m.max((x * wk).abs());
            }
        }
        return Ok(m);
    }
    let per_cell: Vec<f64> = (0..f.n_cells)
        .map(|c| {
            let s = if p == 2.0 {
                ksum(f.cell(c).iter().zip(w.iter()).map(|(x, wk)| (x * wk) * (x * wk)))
            } else {
                ksum(f.cell(c).iter().zip(w.iter()).map(|(x, wk)| (x * wk).abs().powf(p)))
            };
            s * grid.cell_volume() * mesh.volumes[c]
        })
        .collect();
    Ok(ksum(per_cell).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PI32: f64 = 5.568_327_996_831_708; // pi^{3/2}

    #[test]
    fn maxwellian_values() {
        assert_eq!(maxwellian(&[0.0; 3]), 1.0);
        assert!((maxwellian(&[1.0, 0.0, 0.0]) - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn quadrature_basics() {
        let g = VelocityGrid::new(6.0, 32).unwrap();
        let total: f64 = ksum(g.quad_weights.iter().copied());
        assert!((total / 12f64.powi(3) - 1.0).abs() < 1e-12);
        assert!((g.integrate_v(&vec![1.0; g.len()]).unwrap() / 1728.0 - 1.0).abs() < 1e-12);
        assert!((g.integrate_v(&g.mu).unwrap() / PI32 - 1.0).abs() < 1e-6);
        let odd = g.from_fn(|v| v[0] * maxwellian(v));
        assert!(g.integrate_v(&odd).unwrap().abs() < 1e-12);
        for idx in 0..g.len() {
            let a = g.nodes[idx];
            let b = g.nodes[g.negate(idx)];
            assert!(a.iter().zip(&b).all(|(x, y)| *x == -*y));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(VelocityGrid::new(6.0, 7).is_err());
        assert!(VelocityGrid::new(6.0, 6).is_err());
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let mut h = vec![0.0; g.len()];
        h[3] = f64::NAN;
        assert!(matches!(g.integrate_v(&h), Err(VplError::NonFinite { index: 3 })));
    }

    #[test]
    fn gaussian_moments_converge_second_order() {
        // Midpoint rule on a Gaussian converges spectrally; at coarse grids the
        // ratio is enormous, so only the lower bound is meaningful.
        for k in [0, 2, 4] {
            let exact = match k {
                0 => PI32,
                2 => 1.5 * PI32,
                _ => 3.75 * PI32,
            };
            let err = |n: usize| {
                let g = VelocityGrid::new(6.0, n).unwrap();
                let h = g.from_fn(|v| {
                    let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                    r2.powi(k / 2) * (-r2).exp()
                });
                (g.integrate_v(&h).unwrap() - exact).abs()
            };
            let (e1, e2) = (err(8), err(16));
            assert!(e2 <= e1 / 3.5 || e2 < 1e-12 * exact, "k={k}: {e1} {e2}");
        }
    }

    #[test]
    fn norms() {
        let g = VelocityGrid::new(6.0, 16).unwrap();
        let mesh = SpatialMesh::single_cell(1.0);
        let z = DistributionField::zeros(&mesh, &g);
        for (p, t) in [(1.0, 0.0), (2.0, 1.0), (f64::INFINITY, 3.0)] {
            assert_eq!(weighted_lp_norm(&z, &mesh, &g, p, t).unwrap(), 0.0);
        }
        let f = DistributionField::from_profile(1, &g.sqrt_mu);
        let n2 = weighted_lp_norm(&f, &mesh, &g, 2.0, 0.0).unwrap();
        assert!((n2 - PI32.sqrt()).abs() < 1e-6);
        let mut spike = vec![0.0; g.len()];
        spike[123] = 1.0;
        let s = DistributionField::from_profile(1, &spike);
        assert_eq!(weighted_lp_norm(&s, &mesh, &g, f64::INFINITY, 0.0).unwrap(), 1.0);
        assert!(weighted_lp_norm(&s, &mesh, &g, 0.5, 0.0).is_err());
    }

    #[test]
    fn meshes() {
        let s = SpatialMesh::slab(1.0, 10).unwrap();
        assert_eq!(s.boundary_faces.len(), 2);
        assert!((s.measure() - 1.0).abs() < 1e-14);
        let d = SpatialMesh::disk(1.0, 20).unwrap();
        for f in &d.boundary_faces {
            let n = f.normal;
            assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() <= 1e-14);
        }
        assert!((d.measure() - std::f64::consts::PI).abs() < 0.1);
    }
}
