//! Decompositions of 3D displacements: elementary plate displacements (fiber
//! and ball averages), the Kirchhoff–Love split, the unfolding operator,
//! elementary rod displacements on junction edges, edge blending, the
//! structure-wide decomposition and the associated a-priori estimates.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Point2, Point3, Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{everywhere, DisplacementSample3D, PlateGrid3D, Region};
use crate::skeleton::{validate_hypotheses, Skeleton};

/// Cutoff m: 0 on t ≤ 1, 1 on t ≥ 2, quintic smoothstep in between
/// (maximal slope 15/8).
pub fn cutoff(t: f64) -> f64 {
    let s = (t - 1.0).clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

pub fn cutoff_derivative(t: f64) -> f64 {
    if t <= 1.0 || t >= 2.0 {
        return 0.0;
    }
    let s = t - 1.0;
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

/// Composite Simpson weights on nz equispaced points spanning [−δ, δ].
pub fn simpson_weights(nz: usize, delta: f64) -> Result<Vec<f64>> {
    if nz < 3 || nz.is_multiple_of(2) {
        return Err(Error::Input(format!("fiber quadrature needs odd nz ≥ 3, got {nz}")));
    }
    let h = 2.0 * delta / (nz - 1) as f64;
    Ok((0..nz)
        .map(|k| {
            let c = if k == 0 || k == nz - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect())
}

/// e₃ ∧ v.
fn e3_wedge(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.y, v.x, 0.0)
}

/// ℛ ∧ x₃e₃.
fn wedge_x3(r: &Vector3<f64>, x3: f64) -> Vector3<f64> {
    Vector3::new(r.y * x3, -r.x * x3, 0.0)
}

/// An elementary plate displacement 𝒰(x̂) + ℛ(x̂) ∧ x₃e₃ given at the
/// midsurface nodes of a plate grid, in local components.
#[derive(Debug, Clone)]
pub struct ElementaryPlateDisplacement {
    pub face_id: usize,
    pub grid: PlateGrid3D,
    pub u: Vec<Vector3<f64>>,
    pub r: Vec<Vector3<f64>>,
}

impl ElementaryPlateDisplacement {
    pub fn zeros(grid: &PlateGrid3D) -> Self {
        let n = grid.nx() * grid.ny();
        Self { face_id: grid.face_id, grid: grid.clone(), u: vec![Vector3::zeros(); n], r: vec![Vector3::zeros(); n] }
    }

    pub fn mid_index(&self, i: usize, j: usize) -> usize {
        i + self.grid.nx() * j
    }

    /// U_e at node (i, j, k), local components.
    pub fn eval(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let m = self.mid_index(i, j);
        self.u[m] + wedge_x3(&self.r[m], self.grid.x3(k))
    }

    /// Values of U_e on the nodes of the plate grid, global components.
    pub fn nodal_values(&self) -> Vec<Vector3<f64>> {
        let g = &self.grid;
        (0..g.n_nodes())
            .map(|n| {
                let (i, j, k) = g.node_ijk(n);
                g.rotation * self.eval(i, j, k)
            })
            .collect()
    }

    /// U_e as a single-plate sample.
    pub fn to_sample(&self) -> DisplacementSample3D {
        let mut s = DisplacementSample3D::zeros(vec![self.grid.clone()]);
        s.values[0] = self.nodal_values();
        s
    }

    /// ‖∇ℛ‖²_{L²(ω)}.
    pub fn rotation_gradient_sq(&self) -> f64 {
        mid_integrate(&self.grid, |q| {
            let g = q.gradient(&self.r);
            g.component_mul(&g).sum()
        })
    }

    /// Σ_α ‖∂_α𝒰 − ℛ ∧ e_α‖²_{L²(ω)}.
    pub fn compatibility_sq(&self) -> f64 {
        mid_integrate(&self.grid, |q| {
            let gu = q.gradient(&self.u);
            let r = q.value(&self.r);
            let mut s = 0.0;
            for a in 0..2 {
                let mut e = Vector3::zeros();
                e[a] = 1.0;
                let d = gu.column(a) - r.cross(&e);
                s += d.norm_squared();
            }
            s
        })
    }

    pub fn u_l2_sq(&self) -> f64 {
        mid_integrate(&self.grid, |q| q.value(&self.u).norm_squared())
    }

    pub fn r_l2_sq(&self) -> f64 {
        mid_integrate(&self.grid, |q| q.value(&self.r).norm_squared())
    }
}

/// Quadrature point of a bilinear midsurface cell.
pub struct MidPoint {
    pub nodes: [usize; 4],
    pub shape: [f64; 4],
    pub grads: [Vector2<f64>; 4],
    pub weight: f64,
    pub point: Point2<f64>,
}

impl MidPoint {
    pub fn value(&self, f: &[Vector3<f64>]) -> Vector3<f64> {
        (0..4).map(|a| f[self.nodes[a]] * self.shape[a]).sum()
    }

    /// Columns: ∂/∂x₁, ∂/∂x₂ of the vector field.
    pub fn gradient(&self, f: &[Vector3<f64>]) -> nalgebra::Matrix3x2<f64> {
        let mut g = nalgebra::Matrix3x2::zeros();
        for a in 0..4 {
            g += f[self.nodes[a]] * self.grads[a].transpose();
        }
        g
    }

    pub fn scalar_gradient(&self, f: &[f64]) -> Vector2<f64> {
        (0..4).map(|a| self.grads[a] * f[self.nodes[a]]).sum()
    }
}

/// 2×2 Gauss points on every bilinear midsurface cell of the grid.
pub fn mid_points(grid: &PlateGrid3D) -> Vec<MidPoint> {
    let nx = grid.nx();
    let g = 1.0 / 3f64.sqrt();
    let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut out = Vec::with_capacity((nx - 1) * (grid.ny() - 1) * 4);
    for j in 0..grid.ny() - 1 {
        for i in 0..nx - 1 {
            let nodes = [i + nx * j, i + 1 + nx * j, i + 1 + nx * (j + 1), i + nx * (j + 1)];
            let pts = [
                grid.midsurface_point(i, j),
                grid.midsurface_point(i + 1, j),
                grid.midsurface_point(i + 1, j + 1),
                grid.midsurface_point(i, j + 1),
            ];
            for (gx, gy) in signs.iter().map(|(a, b)| (a * g, b * g)) {
                let shape = signs.map(|(sx, sy)| 0.25 * (1.0 + sx * gx) * (1.0 + sy * gy));
                let dref = signs.map(|(sx, sy)| Vector2::new(0.25 * sx * (1.0 + sy * gy), 0.25 * sy * (1.0 + sx * gx)));
                let mut jac = Matrix2::zeros();
                for a in 0..4 {
                    jac += pts[a].coords * dref[a].transpose();
                }
                let det = jac.determinant();
                let jit = jac.try_inverse().unwrap_or_else(Matrix2::zeros).transpose();
                let grads = dref.map(|d| jit * d);
                let point = Point2::from((0..4).map(|a| pts[a].coords * shape[a]).sum::<Vector2<f64>>());
                out.push(MidPoint { nodes, shape, grads, weight: det, point });
            }
        }
    }
    out
}

pub fn mid_integrate<F: Fn(&MidPoint) -> f64>(grid: &PlateGrid3D, f: F) -> f64 {
    mid_points(grid).iter().map(|q| q.weight * f(q)).sum()
}

/// Fiber-average e.p.d.: 𝒰 = (1/2δ)∫u dx₃, ℛ = (3/2δ³)∫x₃e₃∧u dx₃.
pub fn epd_fiber(sample: &DisplacementSample3D, plate: usize) -> Result<ElementaryPlateDisplacement> {
    let g = &sample.plates[plate];
    let w = simpson_weights(g.nz, g.delta)?;
    let vals = sample.local_values(plate);
    let mut epd = ElementaryPlateDisplacement::zeros(g);
    let d = g.delta;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let mut su = Vector3::zeros();
            let mut sr = Vector3::zeros();
            for k in 0..g.nz {
                let v = vals[g.node_index(i, j, k)];
                su += v * w[k];
                sr += e3_wedge(&v) * (w[k] * g.x3(k));
            }
            let m = epd.mid_index(i, j);
            epd.u[m] = su / (2.0 * d);
            epd.r[m] = sr * (3.0 / (2.0 * d * d * d));
        }
    }
    Ok(epd)
}

/// How a plate sample is continued beyond ω for ball averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum ExtensionKind {
    /// Nearest-point constant continuation.
    Constant,
    /// Reflection u(1+σ) = 3u(1−σ) − 2u(1−2σ) across each side in the
    /// parametric square; reproduces affine fields.
    AffineReflection,
}

#[derive(Debug, Clone, Copy)]
pub struct BallOptions {
    /// Sub-lattice points per ball radius.
    pub points_per_radius: usize,
    pub extension: ExtensionKind,
}

impl Default for BallOptions {
    fn default() -> Self {
        Self { points_per_radius: 6, extension: ExtensionKind::AffineReflection }
    }
}

/// Weights of the 1D continuation of a parameter: u(s) = Σ c·u(s').
fn extension_stencil(s: f64, kind: ExtensionKind) -> Option<Vec<(f64, f64)>> {
    if (0.0..=1.0).contains(&s) {
        return Some(vec![(1.0, s)]);
    }
    match kind {
        ExtensionKind::Constant => Some(vec![(1.0, s.clamp(0.0, 1.0))]),
        ExtensionKind::AffineReflection => {
            let (edge, sigma, dir) = if s > 1.0 { (1.0, s - 1.0, -1.0) } else { (0.0, -s, 1.0) };
            if 2.0 * sigma > 1.0 {
                return None;
            }
            Some(vec![(3.0, edge + dir * sigma), (-2.0, edge + dir * 2.0 * sigma)])
        }
    }
}

/// Value of the extended sample at a local point (x₁, x₂, x₃) of the plate.
pub fn extended_value(sample: &DisplacementSample3D, plate: usize, p: &Vector3<f64>, kind: ExtensionKind) -> Option<Vector3<f64>> {
    let g = &sample.plates[plate];
    let (s, t) = g.inverse_map(&Point2::new(p.x, p.y));
    let ss = extension_stencil(s, kind)?;
    let ts = extension_stencil(t, kind)?;
    let x3 = p.z.clamp(-g.delta, g.delta);
    let mut v = Vector3::zeros();
    for (cs, s2) in &ss {
        for (ct, t2) in &ts {
            v += sample.interpolate_local(plate, *s2, *t2, x3) * (cs * ct);
        }
    }
    Some(v)
}

/// Offsets of the midpoint sub-lattice inside the ball of radius r.
pub fn ball_lattice(radius: f64, per_radius: usize) -> Vec<Vector3<f64>> {
    let n = per_radius as isize;
    let h = radius / per_radius as f64;
    let mut pts = Vec::new();
    for a in -n..n {
        for b in -n..n {
            for c in -n..n {
                let m = Vector3::new((a as f64 + 0.5) * h, (b as f64 + 0.5) * h, (c as f64 + 0.5) * h);
                if m.norm() < radius {
                    pts.push(m);
                }
            }
        }
    }
    pts
}

/// Ball-average e.p.d.: 𝒰' is the mean of u over B(x̂, δ/2) and ℛ' the
/// rotation minimizing the first moment mismatch, both with the discrete
/// moments of the quadrature lattice as normalization.
pub fn epd_ball(sample: &DisplacementSample3D, plate: usize, options: &BallOptions) -> Result<ElementaryPlateDisplacement> {
    let g = &sample.plates[plate];
    let radius = 0.5 * g.delta;
    let lattice = ball_lattice(radius, options.points_per_radius.max(1));
    let mut inertia = Matrix3::zeros();
    for m in &lattice {
        inertia += Matrix3::identity() * m.norm_squared() - m * m.transpose();
    }
    let inertia_inv = inertia.try_inverse().ok_or_else(|| Error::Solver("degenerate ball lattice".into()))?;
    let mass = lattice.len() as f64;
    let mut epd = ElementaryPlateDisplacement::zeros(g);
    let nx = g.nx();
    let results: Vec<Option<(Vector3<f64>, Vector3<f64>)>> = (0..nx * g.ny())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % nx, idx / nx);
            let c = g.midsurface_point(i, j);
            let center = Vector3::new(c.x, c.y, 0.0);
            let mut su = Vector3::zeros();
            let mut sr = Vector3::zeros();
            for m in &lattice {
                let v = extended_value(sample, plate, &(center + m), options.extension)?;
                su += v;
                sr += m.cross(&v);
            }
            Some((su / mass, inertia_inv * sr))
        })
        .collect();
    for (idx, r) in results.into_iter().enumerate() {
        let (u, rot) = r.ok_or_else(|| {
            Error::Input(format!("ball around midsurface node {idx} of plate {} leaves the extended sample domain", g.face_id))
        })?;
        epd.u[idx] = u;
        epd.r[idx] = rot;
    }
    Ok(epd)
}

/// Residual ũ = u − KL(u) on the plate grid.
#[derive(Debug, Clone)]
pub struct ResidualDisplacement {
    pub field: DisplacementSample3D,
}

impl ResidualDisplacement {
    /// Simpson fiber mean of ũ at each midsurface node (local components).
    pub fn fiber_means(&self) -> Result<Vec<Vector3<f64>>> {
        let g = &self.field.plates[0];
        let w = simpson_weights(g.nz, g.delta)?;
        let vals = self.field.local_values(0);
        Ok((0..g.nx() * g.ny())
            .map(|m| {
                let (i, j) = (m % g.nx(), m / g.nx());
                (0..g.nz).map(|k| vals[g.node_index(i, j, k)] * w[k]).sum::<Vector3<f64>>() / (2.0 * g.delta)
            })
            .collect())
    }

    /// ‖∂ũ/∂x₃‖² by cell quadrature.
    pub fn thickness_derivative_sq(&self) -> f64 {
        self.field.integrate_gradient(&everywhere, |h| h.column(2).norm_squared()).value
    }
}

/// Nonuniform three-point first derivative on a 1D node set.
pub fn derivative_1d(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, f.len());
    if n == 2 {
        let d = (f[1] - f[0]) / (x[1] - x[0]);
        return vec![d, d];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                let (h1, h2) = (x[1] - x[0], x[2] - x[1]);
                -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1] - h1 / (h2 * (h1 + h2)) * f[2]
            } else if i == n - 1 {
                let (h1, h2) = (x[n - 2] - x[n - 3], x[n - 1] - x[n - 2]);
                h2 / (h1 * (h1 + h2)) * f[n - 3] - (h1 + h2) / (h1 * h2) * f[n - 2] + (2.0 * h2 + h1) / (h2 * (h1 + h2)) * f[n - 1]
            } else {
                let (h1, h2) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                -h2 / (h1 * (h1 + h2)) * f[i - 1] + (h2 - h1) / (h1 * h2) * f[i] + h1 / (h2 * (h1 + h2)) * f[i + 1]
            }
        })
        .collect()
}

/// Gradient (∂₁f, ∂₂f) of a scalar field on the midsurface nodes.
pub fn midsurface_gradient(grid: &PlateGrid3D, f: &[f64]) -> Vec<Vector2<f64>> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut ds = vec![0.0; nx * ny];
    let mut dt = vec![0.0; nx * ny];
    for j in 0..ny {
        let row: Vec<f64> = (0..nx).map(|i| f[i + nx * j]).collect();
        for (i, d) in derivative_1d(&grid.xi, &row).into_iter().enumerate() {
            ds[i + nx * j] = d;
        }
    }
    for i in 0..nx {
        let col: Vec<f64> = (0..ny).map(|j| f[i + nx * j]).collect();
        for (j, d) in derivative_1d(&grid.eta, &col).into_iter().enumerate() {
            dt[i + nx * j] = d;
        }
    }
    (0..nx * ny)
        .map(|m| {
            let (i, j) = (m % nx, m / nx);
            let jac = grid.map_jacobian(grid.xi[i], grid.eta[j]);
            let jit = jac.try_inverse().unwrap_or_else(Matrix2::zeros).transpose();
            jit * Vector2::new(ds[m], dt[m])
        })
        .collect()
}

/// Kirchhoff–Love part (𝒰₁ − x₃∂₁𝒰₃, 𝒰₂ − x₃∂₂𝒰₃, 𝒰₃) and residual.
pub fn kl_split(
    sample: &DisplacementSample3D,
    plate: usize,
    epd: &ElementaryPlateDisplacement,
) -> (DisplacementSample3D, ResidualDisplacement) {
    let g = &sample.plates[plate];
    let u3: Vec<f64> = epd.u.iter().map(|v| v.z).collect();
    let grad = midsurface_gradient(g, &u3);
    let mut kl = DisplacementSample3D::zeros(vec![g.clone()]);
    let mut res = DisplacementSample3D::zeros(vec![g.clone()]);
    for n in 0..g.n_nodes() {
        let (i, j, k) = g.node_ijk(n);
        let m = i + g.nx() * j;
        let x3 = g.x3(k);
        let u = epd.u[m];
        let local = Vector3::new(u.x - x3 * grad[m].x, u.y - x3 * grad[m].y, u.z);
        let global = g.rotation * local;
        kl.values[0][n] = global;
        res.values[0][n] = sample.values[plate][n] - global;
    }
    (kl, ResidualDisplacement { field: res })
}

/// A field on the reference plate ω × (−1, 1): the grid is the source grid
/// with thickness coordinate t₃ = x₃/δ.
#[derive(Debug, Clone)]
pub struct UnfoldedField {
    pub source_delta: f64,
    pub field: DisplacementSample3D,
}

/// 𝒯_δ: copies the nodal values onto the reference plate.
pub fn unfold(sample: &DisplacementSample3D) -> UnfoldedField {
    let delta = sample.plates[0].delta;
    let mut field = sample.clone();
    for g in &mut field.plates {
        g.delta = 1.0;
    }
    UnfoldedField { source_delta: delta, field }
}

/// Inverse of `unfold`.
pub fn fold(unfolded: &UnfoldedField) -> DisplacementSample3D {
    let mut s = unfolded.field.clone();
    for g in &mut s.plates {
        g.delta = unfolded.source_delta;
    }
    s
}

/// Through-thickness difference quotients (φ_{k+1} − φ_k)/(x₃_{k+1} − x₃_k)
/// of every node column of plate 0, global components.
pub fn thickness_differences(sample: &DisplacementSample3D, plate: usize) -> Vec<Vector3<f64>> {
    let g = &sample.plates[plate];
    let mut out = Vec::new();
    for k in 0..g.nz - 1 {
        let dz = g.x3(k + 1) - g.x3(k);
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let a = sample.values[plate][g.node_index(i, j, k)];
                let b = sample.values[plate][g.node_index(i, j, k + 1)];
                out.push((b - a) / dz);
            }
        }
    }
    out
}

/// In-plane parametric difference quotients along the first grid direction.
pub fn inplane_differences(sample: &DisplacementSample3D, plate: usize) -> Vec<Vector3<f64>> {
    let g = &sample.plates[plate];
    let mut out = Vec::new();
    for k in 0..g.nz {
        for j in 0..g.ny() {
            for i in 0..g.nx() - 1 {
                let dx = g.midsurface_point(i + 1, j) - g.midsurface_point(i, j);
                let a = sample.values[plate][g.node_index(i, j, k)];
                let b = sample.values[plate][g.node_index(i + 1, j, k)];
                out.push((b - a) / dx.norm());
            }
        }
    }
    out
}

/// Elementary rod displacement on a junction edge: rigid motion per station.
#[derive(Debug, Clone)]
pub struct ElementaryRodDisplacement {
    pub edge: usize,
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
    pub length: f64,
    /// Station arclengths, increasing.
    pub stations: Vec<f64>,
    /// 𝒰_R and ℛ_R at the stations, global components.
    pub u: Vec<Vector3<f64>>,
    pub r: Vec<Vector3<f64>>,
}

impl ElementaryRodDisplacement {
    /// (𝒰_R(s), ℛ_R(s)) by linear interpolation between stations.
    pub fn components(&self, s: f64) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.stations.len();
        if n == 1 || s <= self.stations[0] {
            return (self.u[0], self.r[0]);
        }
        if s >= self.stations[n - 1] {
            return (self.u[n - 1], self.r[n - 1]);
        }
        let k = self.stations.partition_point(|&x| x <= s) - 1;
        let w = (s - self.stations[k]) / (self.stations[k + 1] - self.stations[k]);
        (self.u[k] * (1.0 - w) + self.u[k + 1] * w, self.r[k] * (1.0 - w) + self.r[k + 1] * w)
    }

    /// U_{e,R}(x) = 𝒰_R(s) + ℛ_R(s) ∧ (x − axis point at s).
    pub fn eval(&self, x: &Point3<f64>) -> Vector3<f64> {
        let s = (x - self.origin).dot(&self.direction).clamp(0.0, self.length);
        let (u, r) = self.components(s);
        u + r.cross(&(x - (self.origin + self.direction * s)))
    }
}

/// Least-squares rigid fit u ≈ a + b ∧ (x − c) over the given points.
pub fn rigid_fit(points: &[(Point3<f64>, Vector3<f64>)], c: &Point3<f64>) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if points.is_empty() {
        return Err(Error::Input("rigid fit on an empty point set".into()));
    }
    let mut a = DMatrix::zeros(3 * points.len(), 6);
    let mut rhs = DVector::zeros(3 * points.len());
    for (n, (x, u)) in points.iter().enumerate() {
        let r = x - c;
        for i in 0..3 {
            a[(3 * n + i, i)] = 1.0;
            rhs[3 * n + i] = u[i];
        }
        // b ∧ r = −r ∧ b = [r]×ᵀ b
        let rx = Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0);
        let m = -rx;
        for i in 0..3 {
            for j in 0..3 {
                a[(3 * n + i, 3 + j)] = m[(i, j)];
            }
        }
    }
    let ata = a.tr_mul(&a);
    let atb = a.tr_mul(&rhs);
    let sol = match ata.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => {
            let cut = 1e-12 * ata.amax();
            ata.pseudo_inverse(cut).map_err(|e| Error::Solver(e.to_string()))? * atb
        }
    };
    Ok((Vector3::new(sol[0], sol[1], sol[2]), Vector3::new(sol[3], sol[4], sol[5])))
}

/// Nodes of the sample (active cells only) within `radius` of edge `edge`,
/// with their arclength projections.
fn rod_nodes(sample: &DisplacementSample3D, skeleton: &Skeleton, edge: usize, radius: f64) -> Vec<(f64, Point3<f64>, Vector3<f64>)> {
    let e = &skeleton.edges[edge];
    let mut out = Vec::new();
    for (p, g) in sample.plates.iter().enumerate() {
        let mut used = vec![false; g.n_nodes()];
        for c in 0..g.n_cells() {
            if sample.active[p][c] {
                let (i, j, k) = g.cell_ijk(c);
                for n in g.cell_nodes(i, j, k) {
                    used[n] = true;
                }
            }
        }
        for n in 0..g.n_nodes() {
            if !used[n] {
                continue;
            }
            let x = g.global_node(n);
            let s = (x - e.a).dot(&e.direction);
            if s < -1e-12 || s > e.length + 1e-12 {
                continue;
            }
            if e.distance(&x) < radius {
                out.push((s, x, sample.values[p][n]));
            }
        }
    }
    out
}

/// Fits the e.r.d. of edge `edge`: a joint least-squares rigid fit per
/// cross-section station, made rigid on the terminal balls of radius η0δ.
pub fn erd_fit(sample: &DisplacementSample3D, skeleton: &Skeleton, edge: usize, delta: f64) -> Result<ElementaryRodDisplacement> {
    let e = &skeleton.edges[edge];
    let nodes = rod_nodes(sample, skeleton, edge, delta * (1.0 + 1e-9));
    if nodes.is_empty() {
        return Err(Error::Input(format!("no sample nodes near edge {edge}")));
    }
    let mut ss: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    ss.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = 1e-9 * e.length;
    let mut stations: Vec<f64> = Vec::new();
    for s in ss {
        if stations.last().is_none_or(|l| s - l > tol) {
            stations.push(s);
        }
    }
    let mut u = Vec::with_capacity(stations.len());
    let mut r = Vec::with_capacity(stations.len());
    for &s in &stations {
        let pts: Vec<(Point3<f64>, Vector3<f64>)> = nodes.iter().filter(|n| (n.0 - s).abs() <= tol).map(|n| (n.1, n.2)).collect();
        let (a, b) = rigid_fit(&pts, &e.point_at(s))?;
        u.push(a);
        r.push(b);
    }
    let eta = skeleton.eta0 * delta;
    let all: Vec<(Point3<f64>, Vector3<f64>)> = nodes.iter().map(|n| (n.1, n.2)).collect();
    if e.length < 4.0 * eta {
        let (a, b) = rigid_fit(&all, &e.a)?;
        for (k, &s) in stations.iter().enumerate() {
            u[k] = a + b.cross(&(e.point_at(s) - e.a));
            r[k] = b;
        }
    } else {
        let end_a: Vec<_> = nodes.iter().filter(|n| n.0 < eta).map(|n| (n.1, n.2)).collect();
        let end_b: Vec<_> = nodes.iter().filter(|n| n.0 > e.length - eta).map(|n| (n.1, n.2)).collect();
        let (aa, ba) = rigid_fit(&end_a, &e.a)?;
        let (ab, bb) = rigid_fit(&end_b, &e.b)?;
        for (k, &s) in stations.iter().enumerate() {
            let x = e.point_at(s);
            let ma = cutoff(s / eta);
            let mb = cutoff((e.length - s) / eta);
            let ua = aa + ba.cross(&(x - e.a));
            let ub = ab + bb.cross(&(x - e.b));
            u[k] = ua * (1.0 - ma) + (ub * (1.0 - mb) + u[k] * mb) * ma;
            r[k] = ba * (1.0 - ma) + (bb * (1.0 - mb) + r[k] * mb) * ma;
        }
    }
    Ok(ElementaryRodDisplacement { edge, origin: e.a, direction: e.direction, length: e.length, stations, u, r })
}

/// Blends a plate e.p.d. toward an e.r.d. within 2η0δ of the edge:
/// 𝒰' = U_{e,R}(1 − m(d/η0δ)) + 𝒰_P m(d/η0δ), same for ℛ.
pub fn blend_edge(
    epd: &ElementaryPlateDisplacement,
    erd: &ElementaryRodDisplacement,
    skeleton: &Skeleton,
    delta: f64,
) -> ElementaryPlateDisplacement {
    let e = &skeleton.edges[erd.edge];
    let eta = skeleton.eta0 * delta;
    let g = &epd.grid;
    let rt = g.rotation.transpose();
    let mut out = epd.clone();
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let p = g.midsurface_point(i, j);
            let x = g.to_global(&Vector3::new(p.x, p.y, 0.0));
            let m = cutoff(e.distance(&x) / eta);
            if m >= 1.0 {
                continue;
            }
            let s = (x - e.a).dot(&e.direction).clamp(0.0, e.length);
            let (_, rr) = erd.components(s);
            let ur = erd.eval(&x);
            let idx = out.mid_index(i, j);
            out.u[idx] = rt * ur * (1.0 - m) + epd.u[idx] * m;
            out.r[idx] = rt * rr * (1.0 - m) + epd.r[idx] * m;
        }
    }
    out
}

/// Multiplies (𝒰, ℛ) by m(d/η0δ), d the distance to a clamped edge.
pub fn blend_clamped(epd: &ElementaryPlateDisplacement, skeleton: &Skeleton, edge: usize, delta: f64) -> ElementaryPlateDisplacement {
    let e = &skeleton.edges[edge];
    let eta = skeleton.eta0 * delta;
    let g = &epd.grid;
    let mut out = epd.clone();
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let p = g.midsurface_point(i, j);
            let x = g.to_global(&Vector3::new(p.x, p.y, 0.0));
            let m = cutoff(e.distance(&x) / eta);
            let idx = out.mid_index(i, j);
            out.u[idx] *= m;
            out.r[idx] *= m;
        }
    }
    out
}

/// Elementary displacement of the whole structure.
#[derive(Debug, Clone)]
pub struct StructureEpd {
    pub plates: Vec<ElementaryPlateDisplacement>,
    pub rods: Vec<ElementaryRodDisplacement>,
}

impl StructureEpd {
    /// U_e on the sample's grids, sharing its active-cell table.
    pub fn to_sample(&self, template: &DisplacementSample3D) -> DisplacementSample3D {
        let mut s = DisplacementSample3D::zeros(template.plates.clone());
        s.active = template.active.clone();
        s.stitches = template.stitches.clone();
        for (p, epd) in self.plates.iter().enumerate() {
            s.values[p] = epd.nodal_values();
        }
        s
    }

    /// Largest difference of (𝒰, ℛ) in global components between the
    /// incident plates at matching points of each junction edge.
    pub fn edge_trace_mismatch(&self, skeleton: &Skeleton) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, e) in skeleton.junction_edges() {
            let mut traces: Vec<BTreeMap<i64, (Vector3<f64>, Vector3<f64>)>> = Vec::new();
            for epd in &self.plates {
                if !skeleton.edges[k].incident_faces.iter().any(|&f| skeleton.faces[f].id == epd.face_id) {
                    continue;
                }
                let g = &epd.grid;
                let mut t = BTreeMap::new();
                for j in 0..g.ny() {
                    for i in 0..g.nx() {
                        let p = g.midsurface_point(i, j);
                        let x = g.to_global(&Vector3::new(p.x, p.y, 0.0));
                        if e.distance(&x) <= skeleton.tol {
                            let s = (x - e.a).dot(&e.direction);
                            let key = (s / e.length * 1e9).round() as i64;
                            let m = epd.mid_index(i, j);
                            t.insert(key, (g.rotation * epd.u[m], g.rotation * epd.r[m]));
                        }
                    }
                }
                traces.push(t);
            }
            for a in 0..traces.len() {
                for b in a + 1..traces.len() {
                    for (key, (ua, ra)) in &traces[a] {
                        if let Some((ub, rb)) = traces[b].get(key) {
                            worst = worst.max((ua - ub).norm()).max((ra - rb).norm());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// e.d.p.s. of a structure sample: ball e.p.d. per plate, e.r.d. on every
/// junction edge blended into all incident plates, zero on clamped edges.
pub fn structure_epd(sample: &DisplacementSample3D, skeleton: &Skeleton, options: &BallOptions) -> Result<StructureEpd> {
    let report = validate_hypotheses(skeleton);
    if !(report.h1 && report.h2) {
        return Err(Error::Check(report.messages.join("; ")));
    }
    let delta = sample.plates[0].delta;
    let mut plates = sample.plates.iter().enumerate().map(|(p, _)| epd_ball(sample, p, options)).collect::<Result<Vec<_>>>()?;
    let mut rods = Vec::new();
    for (k, e) in skeleton.junction_edges() {
        if e.clamped {
            continue;
        }
        let erd = erd_fit(sample, skeleton, k, delta)?;
        for epd in plates.iter_mut() {
            let fi = skeleton.face_index(epd.face_id).expect("plate face exists");
            if e.incident_faces.contains(&fi) {
                *epd = blend_edge(epd, &erd, skeleton, delta);
            }
        }
        rods.push(erd);
    }
    for (k, e) in skeleton.clamped_edges() {
        for epd in plates.iter_mut() {
            let fi = skeleton.face_index(epd.face_id).expect("plate face exists");
            if e.incident_faces.contains(&fi) {
                *epd = blend_clamped(epd, skeleton, k, delta);
            }
        }
    }
    Ok(StructureEpd { plates, rods })
}

/// One inequality evaluated at one δ.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub inequality_id: String,
    pub delta: f64,
    pub lhs: f64,
    pub rhs_energy: f64,
    pub ratio: f64,
    /// ℰ(u) vanishes and so does the left-hand side.
    pub exact_kernel: bool,
    /// ℰ(u) vanishes while the left-hand side does not.
    pub violation: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EstimateReport {
    pub rows: Vec<EstimateRow>,
}

/// Spread of an inequality's ratios across δ.
#[derive(Debug, Clone, Serialize)]
pub struct Boundedness {
    pub inequality_id: String,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub spread: f64,
    pub bounded: bool,
    /// Largest ratio divided by the ratio at the largest δ.
    pub growth: f64,
}

impl EstimateReport {
    pub fn push(&mut self, id: &str, delta: f64, lhs: f64, energy: f64, scale: f64) {
        let kernel_tol = 1e-20 * scale.max(f64::MIN_POSITIVE);
        let (ratio, exact_kernel, violation) = if energy <= kernel_tol {
            if lhs <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                (0.0, true, false)
            } else {
                (f64::INFINITY, false, true)
            }
        } else {
            (lhs / energy, false, false)
        };
        self.rows.push(EstimateRow { inequality_id: id.to_string(), delta, lhs, rhs_energy: energy, ratio, exact_kernel, violation });
    }

    pub fn extend(&mut self, other: EstimateReport) {
        self.rows.extend(other.rows);
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.inequality_id) {
                ids.push(r.inequality_id.clone());
            }
        }
        ids
    }

    /// For each inequality: bounded iff every ratio is finite and either all
    /// ratios vanish (exact kernel) or max/min < 2.
    pub fn boundedness(&self) -> Vec<Boundedness> {
        self.ids()
            .into_iter()
            .map(|id| {
                let mut rows: Vec<&EstimateRow> = self.rows.iter().filter(|r| r.inequality_id == id).collect();
                rows.sort_by(|a, b| b.delta.partial_cmp(&a.delta).unwrap());
                let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
                let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
                let finite = ratios.iter().all(|r| r.is_finite());
                let (spread, bounded) = if !finite {
                    (f64::INFINITY, false)
                } else if max < 1e-12 {
                    (1.0, true)
                } else if min <= 0.0 {
                    (f64::INFINITY, false)
                } else {
                    (max / min, max / min < 2.0)
                };
                let growth = if max < 1e-12 {
                    1.0
                } else if ratios[0] > 0.0 {
                    max / ratios[0]
                } else {
                    f64::INFINITY
                };
                Boundedness { inequality_id: id, max_ratio: max, min_ratio: min, spread, bounded, growth }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["inequality_id", "delta", "lhs", "rhs_energy", "ratio"])?;
        for r in &self.rows {
            w.write_record(&[
                r.inequality_id.clone(),
                format!("{}", r.delta),
                format!("{:.12e}", r.lhs),
                format!("{:.12e}", r.rhs_energy),
                format!("{:.12e}", r.ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn difference(a: &DisplacementSample3D, b: &DisplacementSample3D) -> DisplacementSample3D {
    let mut d = a.clone();
    d.modes = None;
    d.add_scaled(b, -1.0);
    d
}

/// Empirical constants of the single-plate estimates for one δ: fiber e.p.d.
/// bound, Kirchhoff–Love residual bound and the three ball e.p.d. bounds.
pub fn verify_estimates(sample: &DisplacementSample3D, plate: usize, options: &BallOptions) -> Result<EstimateReport> {
    let g = &sample.plates[plate];
    let delta = g.delta;
    let single = {
        let mut s = DisplacementSample3D::zeros(vec![g.clone()]);
        s.values[0] = sample.values[plate].clone();
        s
    };
    let energy = single.energy_e(&everywhere).value;
    let scale = single.energy_d(&everywhere).value + single.l2_norm_sq(&everywhere).value / (delta * delta);
    let mut report = EstimateReport::default();

    let epd = epd_fiber(&single, 0)?;
    let ue = epd.to_sample();
    let diff = difference(&single, &ue);
    let lhs = ue.energy_e(&everywhere).value + diff.energy_d(&everywhere).value + diff.l2_norm_sq(&everywhere).value / (delta * delta);
    report.push("epd_fiber", delta, lhs, energy, scale);

    let (_, res) = kl_split(&single, 0, &epd);
    let lhs = res.field.l2_norm_sq(&everywhere).value / (delta * delta) + res.thickness_derivative_sq();
    report.push("kl_residual", delta, lhs, energy, scale);

    let ball = epd_ball(&single, 0, options)?;
    let ub = ball.to_sample();
    let diff = difference(&single, &ub);
    let lhs = delta.powi(3) * ball.rotation_gradient_sq() + delta * ball.compatibility_sq() + ub.energy_e(&everywhere).value;
    let grad = diff.energy_d(&everywhere).value;
    let l2 = diff.l2_norm_sq(&everywhere).value / (delta * delta);
    report.push("ball_rotation_strain", delta, lhs, energy, scale);
    report.push("ball_gradient_residual", delta, grad, energy, scale);
    report.push("ball_l2_residual", delta, l2, energy, scale);
    report.push("ball_combined", delta, lhs + grad + l2, energy, scale);
    Ok(report)
}

/// Structure estimates for a sample and its e.d.p.s., plus the Korn ratio
/// (δ‖ℛ‖² + δ‖𝒰‖² + 𝒟(u) + ‖u‖²)·δ²/ℰ(u).
pub fn verify_structure_estimates(sample: &DisplacementSample3D, edps: &StructureEpd, region: Region) -> EstimateReport {
    let delta = sample.plates[0].delta;
    let energy = sample.energy_e(region).value;
    let d_u = sample.energy_d(region).value;
    let l2_u = sample.l2_norm_sq(region).value;
    let scale = d_u + l2_u / (delta * delta);
    let ue = edps.to_sample(sample);
    let diff = difference(sample, &ue);
    let mut report = EstimateReport::default();

    let rot: f64 = edps.plates.iter().map(|p| delta.powi(3) * p.rotation_gradient_sq() + delta * p.compatibility_sq()).sum();
    report.push("structure_rotation_strain", delta, rot, energy, scale);
    let lhs = ue.energy_e(region).value + diff.energy_d(region).value;
    report.push("structure_gradient_residual", delta, lhs, energy, scale);
    let l2 = diff.l2_norm_sq(region).value / (delta * delta);
    report.push("structure_l2_residual", delta, l2, energy, scale);
    report.push("structure_combined", delta, rot + lhs + l2, energy, scale);

    let ur: f64 = edps.plates.iter().map(|p| delta * (p.r_l2_sq() + p.u_l2_sq())).sum();
    let korn = (ur + d_u + l2_u) * delta * delta;
    report.push("korn", delta, korn, energy, scale);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::rigid;
    use crate::fixtures;

    fn plate(n: usize, delta: f64) -> PlateGrid3D {
        PlateGrid3D::rectangle(1, (0.0, 1.0), (0.0, 1.0), n, n, 5, delta).unwrap()
    }

    fn bending(x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(-2.0 * x.x * x.z, 0.0, x.x * x.x)
    }

    #[test]
    fn cutoff_properties() {
        assert_eq!(cutoff(0.5), 0.0);
        assert_eq!(cutoff(1.0), 0.0);
        assert_eq!(cutoff(2.0), 1.0);
        assert_eq!(cutoff(3.0), 1.0);
        let max = (0..=1000).map(|i| cutoff_derivative(1.0 + i as f64 / 1000.0)).fold(0.0, f64::max);
        assert!((max - 15.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let d = 0.3;
        let w = simpson_weights(5, d).unwrap();
        let x: Vec<f64> = (0..5).map(|k| d * (-1.0 + k as f64 / 2.0)).collect();
        let int = |f: &dyn Fn(f64) -> f64| (0..5).map(|k| w[k] * f(x[k])).sum::<f64>();
        assert!((int(&|_| 1.0) - 2.0 * d).abs() < 1e-15);
        assert!((int(&|t| t * t) - 2.0 * d.powi(3) / 3.0).abs() < 1e-15);
        assert!(int(&|t| t * t * t).abs() < 1e-16);
        assert!(simpson_weights(4, d).is_err());
    }

    #[test]
    fn fiber_epd_of_constant_and_rotation() {
        let c = Vector3::new(0.3, -0.2, 1.5);
        let epd = epd_fiber(&DisplacementSample3D::single(plate(4, 0.1), move |_| c), 0).unwrap();
        assert!(epd.u.iter().all(|u| (u - c).norm() < 1e-15));
        assert!(epd.r.iter().all(|r| r.norm() < 1e-15));

        let s = DisplacementSample3D::single(plate(4, 0.1), |x| Vector3::new(0.0, -x.z, x.y));
        let epd = epd_fiber(&s, 0).unwrap();
        let g = &s.plates[0];
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let m = epd.mid_index(i, j);
                let x2 = g.midsurface_point(i, j).y;
                assert!((epd.u[m] - Vector3::new(0.0, 0.0, x2)).norm() < 1e-15);
                assert!((epd.r[m] - Vector3::x()).norm() < 1e-14);
            }
        }
        let ue = epd.to_sample();
        for n in 0..g.n_nodes() {
            assert!((ue.values[0][n] - s.values[0][n]).norm() < 1e-15);
        }
    }

    #[test]
    fn fiber_epd_of_bending_and_kl_residual() {
        let s = DisplacementSample3D::single(plate(8, 0.1), bending);
        let epd = epd_fiber(&s, 0).unwrap();
        let g = &s.plates[0];
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let m = epd.mid_index(i, j);
                let x1 = g.midsurface_point(i, j).x;
                assert!((epd.u[m] - Vector3::new(0.0, 0.0, x1 * x1)).norm() < 1e-14);
                assert!((epd.r[m] - Vector3::new(0.0, -2.0 * x1, 0.0)).norm() < 1e-13);
                assert_eq!(epd.r[m].z, 0.0);
            }
        }
        let (_, res) = kl_split(&s, 0, &epd);
        let worst = res.field.values[0].iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(worst < 1e-13, "{worst}");
    }

    #[test]
    fn kl_residual_recovers_thickness_quadratic() {
        let d = 0.1;
        let s = DisplacementSample3D::single(plate(6, d), move |x| {
            let mut v = bending(x);
            v.z += x.z * x.z - d * d / 3.0;
            v
        });
        let epd = epd_fiber(&s, 0).unwrap();
        let (_, res) = kl_split(&s, 0, &epd);
        let g = &s.plates[0];
        for n in 0..g.n_nodes() {
            let (_, _, k) = g.node_ijk(n);
            let x3 = g.x3(k);
            let expected = Vector3::new(0.0, 0.0, x3 * x3 - d * d / 3.0);
            assert!((res.field.values[0][n] - expected).norm() < 1e-13);
        }
        for m in res.fiber_means().unwrap() {
            assert!(m.norm() < 1e-15);
        }
    }

    #[test]
    fn ball_epd_reproduces_rigid_fields() {
        let a = Vector3::new(0.1, 0.2, -0.3);
        let b = Vector3::new(0.5, -1.0, 0.25);
        let s = DisplacementSample3D::single(plate(10, 0.1), rigid(a, b));
        let epd = epd_ball(&s, 0, &BallOptions::default()).unwrap();
        let g = &s.plates[0];
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let m = epd.mid_index(i, j);
                assert!((epd.r[m] - b).norm() < 1e-12);
                let p = g.midsurface_point(i, j);
                let x = Vector3::new(p.x, p.y, 0.0);
                assert!((epd.u[m] - (a + b.cross(&x))).norm() < 1e-12);
            }
        }
        let c = Vector3::new(1.0, 2.0, 3.0);
        let s = DisplacementSample3D::single(plate(4, 0.2), move |_| c);
        let epd = epd_ball(&s, 0, &BallOptions { points_per_radius: 8, extension: ExtensionKind::Constant }).unwrap();
        assert!(epd.u.iter().all(|u| (u - c).norm() < 1e-13));
        assert!(epd.r.iter().all(|r| r.norm() < 1e-13));
    }

    #[test]
    fn ball_outside_reflection_range_is_an_error() {
        let s =
            DisplacementSample3D::single(PlateGrid3D::rectangle(1, (0.0, 0.1), (0.0, 1.0), 4, 4, 5, 0.2).unwrap(), |_| Vector3::zeros());
        assert!(epd_ball(&s, 0, &BallOptions::default()).is_err());
    }

    #[test]
    fn unfolding_examples() {
        let d = 0.125;
        let s = DisplacementSample3D::single(plate(4, d), |x| Vector3::new(x.z, x.x, 0.0));
        let u = unfold(&s);
        let g = &u.field.plates[0];
        for n in 0..g.n_nodes() {
            let (i, j, k) = g.node_ijk(n);
            assert_eq!(u.field.values[0][n].x, d * g.t3(k));
            assert_eq!(u.field.values[0][n].y, g.midsurface_point(i, j).x);
        }
        let back = fold(&u);
        assert_eq!(back.values, s.values);
        let lhs = u.field.l2_norm_sq(&everywhere).value * d;
        let rhs = s.l2_norm_sq(&everywhere).value;
        assert!((lhs - rhs).abs() <= 1e-14 * rhs);
        let only_x3 = DisplacementSample3D::single(plate(4, d), |x| Vector3::new(x.z, 0.0, 0.0));
        let t = unfold(&only_x3).field.l2_norm_sq(&everywhere).value;
        assert!((t - 2.0 / 3.0 * d * d).abs() < 1e-15);
    }

    #[test]
    fn erd_recovers_rigid_motion_and_blending_is_exact() {
        let sk = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
        let d = 0.1;
        let a = Vector3::new(0.2, -0.1, 0.4);
        let b = Vector3::new(0.3, 0.7, -0.5);
        let grids: Vec<PlateGrid3D> = (0..2)
            .map(|f| PlateGrid3D::on_face(&sk, f, 0, crate::fields::uniform_nodes(20), crate::fields::uniform_nodes(20), 5, d).unwrap())
            .collect();
        let s = DisplacementSample3D::from_global_fn(grids, move |x| a + b.cross(&x.coords));
        let erd = erd_fit(&s, &sk, 0, d).unwrap();
        for (k, &st) in erd.stations.iter().enumerate() {
            assert!((erd.r[k] - b).norm() < 1e-10, "{k} {st} {} {}", erd.r[k], b);
            let p = sk.edges[0].point_at(st);
            assert!((erd.u[k] - (a + b.cross(&p.coords))).norm() < 1e-10);
        }
        let structure = StructureEpd { plates: (0..2).map(|p| epd_fiber(&s, p).unwrap()).collect(), rods: vec![] };
        let blended: Vec<_> = structure.plates.iter().map(|p| blend_edge(p, &erd, &sk, d)).collect();
        for (p, e) in blended.iter().enumerate() {
            let vals = e.nodal_values();
            for n in 0..vals.len() {
                assert!((vals[n] - s.values[p][n]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn structure_epd_of_zero_is_zero() {
        let sk = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
        let grids: Vec<PlateGrid3D> = (0..2)
            .map(|f| PlateGrid3D::on_face(&sk, f, 0, crate::fields::uniform_nodes(10), crate::fields::uniform_nodes(10), 5, 0.1).unwrap())
            .collect();
        let s = DisplacementSample3D::zeros(grids);
        let e = structure_epd(&s, &sk, &BallOptions::default()).unwrap();
        for p in &e.plates {
            assert!(p.u.iter().chain(p.r.iter()).all(|v| v.norm() == 0.0));
        }
        assert_eq!(e.edge_trace_mismatch(&sk), 0.0);
    }

    #[test]
    fn estimates_of_rigid_field_are_exact_kernel() {
        let s = DisplacementSample3D::single(plate(10, 0.1), rigid(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0)));
        let r = verify_estimates(&s, 0, &BallOptions::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.exact_kernel && !row.violation), "{:?}", r.rows);
    }

    #[test]
    fn derivative_1d_is_second_order_exact() {
        let x = [0.0, 0.1, 0.25, 0.5, 0.6];
        let f: Vec<f64> = x.iter().map(|t| 3.0 * t * t - t + 2.0).collect();
        let d = derivative_1d(&x, &f);
        for (i, t) in x.iter().enumerate() {
            assert!((d[i] - (6.0 * t - 1.0)).abs() < 1e-12);
        }
    }
}
