//! Sampled 3D displacement fields on thickened plates, strain/energy
//! quadrature and the isotropic material law.

use std::io::Write;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

/// Isotropic linear elastic material given by its Lamé constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub lambda: f64,
    pub mu: f64,
}

impl Material {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda.is_finite() && mu.is_finite()) || mu <= 0.0 || lambda < 0.0 {
            return Err(Error::Input(format!("inadmissible material: lambda={lambda}, mu={mu}")));
        }
        Ok(Self { lambda, mu })
    }

    pub fn young(&self) -> f64 {
        self.mu * (3.0 * self.lambda + 2.0 * self.mu) / (self.lambda + self.mu)
    }

    pub fn poisson(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }

    /// Plane-stress modulus E/(1−ν²).
    pub fn plane_stress_modulus(&self) -> f64 {
        let nu = self.poisson();
        self.young() / (1.0 - nu * nu)
    }

    /// Bending stiffness D* = E/(3(1−ν²)).
    pub fn bending_stiffness(&self) -> f64 {
        self.plane_stress_modulus() / 3.0
    }

    /// a_{iji'j'} = λδ_ijδ_{i'j'} + μ(δ_{ii'}δ_{jj'} + δ_{ij'}δ_{ji'}).
    pub fn tensor(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        self.lambda * d(i, j) * d(k, l) + self.mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
    }

    /// σ = λ tr(γ) I + 2μ γ.
    pub fn stress(&self, gamma: &Matrix3<f64>) -> Matrix3<f64> {
        Matrix3::identity() * (self.lambda * gamma.trace()) + gamma * (2.0 * self.mu)
    }

    /// Applies the full tensor a_{iji'j'}γ_{i'j'} by explicit contraction.
    pub fn stress_by_tensor(&self, gamma: &Matrix3<f64>) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += self.tensor(i, j, k, l) * gamma[(k, l)];
                }
            }
            s
        })
    }
}

/// Structured grid on a quadrilateral plate ω × (−δ, δ), in the face's local
/// frame. In-plane nodes come from a bilinear map of the parametric square.
#[derive(Debug, Clone)]
pub struct PlateGrid3D {
    pub face_id: usize,
    pub delta: f64,
    /// Local in-plane corners for parameters (0,0), (1,0), (1,1), (0,1).
    pub corners: [Point2<f64>; 4],
    /// Increasing parametric abscissae in [0,1] along each in-plane direction.
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub nz: usize,
    pub origin: Point3<f64>,
    /// Columns e1, e2, e3 of the face frame.
    pub rotation: Matrix3<f64>,
}

/// Geometric description of a hex cell handed to region predicates.
#[derive(Debug, Clone, Copy)]
pub struct CellInfo {
    pub plate: usize,
    pub cell: usize,
    pub local_center: Vector3<f64>,
    pub global_center: Point3<f64>,
}

pub type Region<'a> = &'a (dyn Fn(&CellInfo) -> bool + Sync);

pub fn everywhere(_: &CellInfo) -> bool {
    true
}

pub fn uniform_nodes(n_cells: usize) -> Vec<f64> {
    (0..=n_cells).map(|i| i as f64 / n_cells as f64).collect()
}

impl PlateGrid3D {
    pub fn new(
        face_id: usize,
        delta: f64,
        corners: [Point2<f64>; 4],
        xi: Vec<f64>,
        eta: Vec<f64>,
        nz: usize,
        origin: Point3<f64>,
        rotation: Matrix3<f64>,
    ) -> Result<Self> {
        if nz < 3 || nz.is_multiple_of(2) {
            return Err(Error::Input(format!("nz must be odd and at least 3, got {nz}")));
        }
        if xi.len() < 2 || eta.len() < 2 {
            return Err(Error::Input("grid needs at least two nodes per direction".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::Input("delta must be positive".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&xi) || !increasing(&eta) {
            return Err(Error::Input("parametric nodes must be strictly increasing".into()));
        }
        let g = Self { face_id, delta, corners, xi, eta, nz, origin, rotation };
        for c in 0..g.n_cells() {
            let (i, j, k) = g.cell_ijk(c);
            if k == 0 && g.cell_kinematics(i, j, k).det0 <= 0.0 {
                return Err(Error::Input(format!("degenerate cell ({i},{j}) on plate {face_id}")));
            }
        }
        Ok(g)
    }

    /// Axis-aligned rectangle [x0,x1]×[y0,y1] with identity frame.
    pub fn rectangle(
        face_id: usize,
        (x0, x1): (f64, f64),
        (y0, y1): (f64, f64),
        nx_cells: usize,
        ny_cells: usize,
        nz: usize,
        delta: f64,
    ) -> Result<Self> {
        Self::new(
            face_id,
            delta,
            [Point2::new(x0, y0), Point2::new(x1, y0), Point2::new(x1, y1), Point2::new(x0, y1)],
            uniform_nodes(nx_cells),
            uniform_nodes(ny_cells),
            nz,
            Point3::origin(),
            Matrix3::identity(),
        )
    }

    /// Grid on a quadrilateral face of the skeleton; corner 0 is polygon
    /// vertex `first_corner`.
    pub fn on_face(
        skeleton: &Skeleton,
        face: usize,
        first_corner: usize,
        xi: Vec<f64>,
        eta: Vec<f64>,
        nz: usize,
        delta: f64,
    ) -> Result<Self> {
        let f = &skeleton.faces[face];
        if f.local_polygon.len() != 4 {
            return Err(Error::Mesh(format!("face {} is not a quadrilateral", f.id)));
        }
        let c = |k: usize| f.local_polygon[(first_corner + k) % 4];
        Self::new(f.id, delta, [c(0), c(1), c(2), c(3)], xi, eta, nz, f.origin, f.rotation())
    }

    pub fn nx(&self) -> usize {
        self.xi.len()
    }

    pub fn ny(&self) -> usize {
        self.eta.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nx() * self.ny() * self.nz
    }

    pub fn n_cells(&self) -> usize {
        (self.nx() - 1) * (self.ny() - 1) * (self.nz - 1)
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx() * (j + self.ny() * k)
    }

    pub fn node_ijk(&self, n: usize) -> (usize, usize, usize) {
        let nx = self.nx();
        let ny = self.ny();
        (n % nx, (n / nx) % ny, n / (nx * ny))
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.nx() - 1) * (j + (self.ny() - 1) * k)
    }

    pub fn cell_ijk(&self, c: usize) -> (usize, usize, usize) {
        let cx = self.nx() - 1;
        let cy = self.ny() - 1;
        (c % cx, (c / cx) % cy, c / (cx * cy))
    }

    /// Through-thickness coordinate of plane k.
    pub fn x3(&self, k: usize) -> f64 {
        let t = -1.0 + 2.0 * k as f64 / (self.nz - 1) as f64;
        self.delta * t
    }

    /// Reference thickness coordinate t₃ = x₃/δ of plane k.
    pub fn t3(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / (self.nz - 1) as f64
    }

    /// Bilinear map from parameters (s, t) to local in-plane coordinates.
    pub fn map(&self, s: f64, t: f64) -> Point2<f64> {
        let [a, b, c, d] = self.corners;
        let p = a.coords * ((1.0 - s) * (1.0 - t)) + b.coords * (s * (1.0 - t)) + c.coords * (s * t) + d.coords * ((1.0 - s) * t);
        Point2::from(p)
    }

    /// Jacobian ∂(x1,x2)/∂(s,t) of the bilinear map.
    pub fn map_jacobian(&self, s: f64, t: f64) -> nalgebra::Matrix2<f64> {
        let [a, b, c, d] = self.corners;
        let ds = (b - a) * (1.0 - t) + (c - d) * t;
        let dt = (d - a) * (1.0 - s) + (c - b) * s;
        nalgebra::Matrix2::from_columns(&[ds, dt])
    }

    /// Inverse of the bilinear map by Newton iteration (works outside [0,1]²);
    /// parallelogram grids are inverted in closed form.
    pub fn inverse_map(&self, p: &Point2<f64>) -> (f64, f64) {
        let [a, b, c, d] = self.corners;
        let twist = (a - b) + (c - d);
        if twist.norm_squared() <= 1e-28 * (c - a).norm_squared() {
            if let Some(ji) = nalgebra::Matrix2::from_columns(&[b - a, d - a]).try_inverse() {
                let st = ji * (p - a);
                return (st.x, st.y);
            }
        }
        let mut st = nalgebra::Vector2::new(0.5, 0.5);
        for _ in 0..50 {
            let r = self.map(st.x, st.y) - p;
            let jac = self.map_jacobian(st.x, st.y);
            let step = jac.try_inverse().map(|ji| ji * r).unwrap_or_else(nalgebra::Vector2::zeros);
            st -= step;
            if step.norm() < 1e-15 {
                break;
            }
        }
        (st.x, st.y)
    }

    pub fn midsurface_point(&self, i: usize, j: usize) -> Point2<f64> {
        self.map(self.xi[i], self.eta[j])
    }

    pub fn local_node(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let p = self.midsurface_point(i, j);
        Vector3::new(p.x, p.y, self.x3(k))
    }

    pub fn to_global(&self, local: &Vector3<f64>) -> Point3<f64> {
        self.origin + self.rotation * local
    }

    pub fn to_local(&self, global: &Point3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (global - self.origin)
    }

    pub fn global_node(&self, n: usize) -> Point3<f64> {
        let (i, j, k) = self.node_ijk(n);
        self.to_global(&self.local_node(i, j, k))
    }

    /// Node indices of cell (i, j, k) in the standard hex ordering.
    pub fn cell_nodes(&self, i: usize, j: usize, k: usize) -> [usize; 8] {
        [
            self.node_index(i, j, k),
            self.node_index(i + 1, j, k),
            self.node_index(i + 1, j + 1, k),
            self.node_index(i, j + 1, k),
            self.node_index(i, j, k + 1),
            self.node_index(i + 1, j, k + 1),
            self.node_index(i + 1, j + 1, k + 1),
            self.node_index(i, j + 1, k + 1),
        ]
    }

    pub fn cell_center_local(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let s = 0.5 * (self.xi[i] + self.xi[i + 1]);
        let t = 0.5 * (self.eta[j] + self.eta[j + 1]);
        let p = self.map(s, t);
        Vector3::new(p.x, p.y, 0.5 * (self.x3(k) + self.x3(k + 1)))
    }

    pub fn cell_info(&self, plate: usize, c: usize) -> CellInfo {
        let (i, j, k) = self.cell_ijk(c);
        let lc = self.cell_center_local(i, j, k);
        CellInfo { plate, cell: c, local_center: lc, global_center: self.to_global(&lc) }
    }

    pub fn cell_kinematics(&self, i: usize, j: usize, k: usize) -> CellKinematics {
        let nodes: [Vector3<f64>; 8] = {
            let ids = [
                (i, j, k),
                (i + 1, j, k),
                (i + 1, j + 1, k),
                (i, j + 1, k),
                (i, j, k + 1),
                (i + 1, j, k + 1),
                (i + 1, j + 1, k + 1),
                (i, j + 1, k + 1),
            ];
            ids.map(|(a, b, c)| self.local_node(a, b, c))
        };
        CellKinematics::new(&nodes)
    }
}

pub const HEX_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

pub fn hex_shape(xi: &Vector3<f64>) -> [f64; 8] {
    HEX_SIGNS.map(|s| 0.125 * (1.0 + s[0] * xi.x) * (1.0 + s[1] * xi.y) * (1.0 + s[2] * xi.z))
}

pub fn hex_shape_gradient(xi: &Vector3<f64>) -> [Vector3<f64>; 8] {
    HEX_SIGNS.map(|s| {
        Vector3::new(
            0.125 * s[0] * (1.0 + s[1] * xi.y) * (1.0 + s[2] * xi.z),
            0.125 * s[1] * (1.0 + s[0] * xi.x) * (1.0 + s[2] * xi.z),
            0.125 * s[2] * (1.0 + s[0] * xi.x) * (1.0 + s[1] * xi.y),
        )
    })
}

pub fn gauss_points_2() -> [(Vector3<f64>, f64); 8] {
    let g = 1.0 / 3f64.sqrt();
    HEX_SIGNS.map(|s| (Vector3::new(s[0] * g, s[1] * g, s[2] * g), 1.0))
}

/// Shape-function gradients and volume weights of a hex cell at the 2×2×2
/// Gauss points, plus the center Jacobian used by incompatible modes.
#[derive(Debug, Clone)]
pub struct CellKinematics {
    pub nodes: [Vector3<f64>; 8],
    /// Physical gradients dN_n/dx at each Gauss point.
    pub grads: [[Vector3<f64>; 8]; 8],
    /// Gauss weight times det J.
    pub weights: [f64; 8],
    pub dets: [f64; 8],
    pub points: [Vector3<f64>; 8],
    /// Inverse transpose of the center Jacobian.
    pub j0_inv_t: Matrix3<f64>,
    pub det0: f64,
}

impl CellKinematics {
    pub fn new(nodes: &[Vector3<f64>; 8]) -> Self {
        let jac = |xi: &Vector3<f64>| {
            let dn = hex_shape_gradient(xi);
            let mut j = Matrix3::zeros();
            for n in 0..8 {
                j += nodes[n] * dn[n].transpose();
            }
            (j, dn)
        };
        let (j0, _) = jac(&Vector3::zeros());
        let det0 = j0.determinant();
        let j0_inv_t = j0.try_inverse().unwrap_or_else(Matrix3::zeros).transpose();
        let gp = gauss_points_2();
        let mut grads = [[Vector3::zeros(); 8]; 8];
        let mut weights = [0.0; 8];
        let mut dets = [0.0; 8];
        let mut points = [Vector3::zeros(); 8];
        for (g, (xi, w)) in gp.iter().enumerate() {
            let (j, dn) = jac(xi);
            let det = j.determinant();
            let jit = j.try_inverse().unwrap_or_else(Matrix3::zeros).transpose();
            for n in 0..8 {
                grads[g][n] = jit * dn[n];
            }
            weights[g] = w * det;
            dets[g] = det;
            points[g] = *xi;
        }
        Self { nodes: *nodes, grads, weights, dets, points, j0_inv_t, det0 }
    }

    /// Physical gradients of the three incompatible modes 1 − ξ_a² at Gauss
    /// point g, using the center Jacobian and the det J0/det J correction.
    pub fn mode_gradients(&self, g: usize) -> [Vector3<f64>; 3] {
        let xi = self.points[g];
        let scale = self.det0 / self.dets[g];
        [0, 1, 2].map(|a| {
            let mut d = Vector3::zeros();
            d[a] = -2.0 * xi[a];
            self.j0_inv_t * d * scale
        })
    }

    /// Displacement gradient ∂u_i/∂x_j at Gauss point g.
    pub fn gradient(&self, g: usize, values: &[Vector3<f64>; 8], modes: Option<&[f64; 9]>) -> Matrix3<f64> {
        let mut h = Matrix3::zeros();
        for n in 0..8 {
            h += values[n] * self.grads[g][n].transpose();
        }
        if let Some(alpha) = modes {
            let mg = self.mode_gradients(g);
            for a in 0..3 {
                let amp = Vector3::new(alpha[3 * a], alpha[3 * a + 1], alpha[3 * a + 2]);
                h += amp * mg[a].transpose();
            }
        }
        h
    }

    /// Gradient at the cell center (modes vanish there).
    pub fn center_gradient(&self, values: &[Vector3<f64>; 8]) -> Matrix3<f64> {
        let xi = Vector3::zeros();
        let dn = hex_shape_gradient(&xi);
        let mut h = Matrix3::zeros();
        for n in 0..8 {
            h += values[n] * (self.j0_inv_t * dn[n]).transpose();
        }
        h
    }
}

pub fn sym(h: &Matrix3<f64>) -> Matrix3<f64> {
    (h + h.transpose()) * 0.5
}

/// Two nodes identified across plates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stitch {
    pub master: (usize, usize),
    pub slave: (usize, usize),
}

/// Result of a quadrature over a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub cells: usize,
}

impl Integral {
    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }
}

/// Per-cell strain: values at the eight Gauss points and at the center.
#[derive(Debug, Clone)]
pub struct CellStrain {
    pub gauss: [Matrix3<f64>; 8],
    pub center: Matrix3<f64>,
}

/// Vector field sampled on the nodes of one or more plate grids. Values are
/// stored in global components.
#[derive(Debug, Clone)]
pub struct DisplacementSample3D {
    pub plates: Vec<PlateGrid3D>,
    pub values: Vec<Vec<Vector3<f64>>>,
    /// Cells that belong to S_δ (slave cells inside a master slab are inactive).
    pub active: Vec<Vec<bool>>,
    /// Optional incompatible-mode amplitudes per cell, local components.
    pub modes: Option<Vec<Vec<[f64; 9]>>>,
    pub stitches: Vec<Stitch>,
}

impl DisplacementSample3D {
    pub fn zeros(plates: Vec<PlateGrid3D>) -> Self {
        let values = plates.iter().map(|g| vec![Vector3::zeros(); g.n_nodes()]).collect();
        let active = plates.iter().map(|g| vec![true; g.n_cells()]).collect();
        Self { plates, values, active, modes: None, stitches: Vec::new() }
    }

    /// Samples a field given in global coordinates and components.
    pub fn from_global_fn<F>(plates: Vec<PlateGrid3D>, f: F) -> Self
    where
        F: Fn(&Point3<f64>) -> Vector3<f64> + Sync,
    {
        let mut s = Self::zeros(plates);
        for (p, g) in s.plates.iter().enumerate() {
            s.values[p] = (0..g.n_nodes()).into_par_iter().map(|n| f(&g.global_node(n))).collect();
        }
        s
    }

    /// Samples a field given in each plate's local coordinates and components.
    pub fn from_local_fn<F>(plates: Vec<PlateGrid3D>, f: F) -> Self
    where
        F: Fn(usize, &Vector3<f64>) -> Vector3<f64> + Sync,
    {
        let mut s = Self::zeros(plates);
        for (p, g) in s.plates.iter().enumerate() {
            s.values[p] = (0..g.n_nodes())
                .into_par_iter()
                .map(|n| {
                    let (i, j, k) = g.node_ijk(n);
                    g.rotation * f(p, &g.local_node(i, j, k))
                })
                .collect();
        }
        s
    }

    pub fn single(grid: PlateGrid3D, f: impl Fn(&Vector3<f64>) -> Vector3<f64> + Sync) -> Self {
        Self::from_local_fn(vec![grid], |_, x| f(x))
    }

    pub fn local_value(&self, plate: usize, node: usize) -> Vector3<f64> {
        self.plates[plate].rotation.transpose() * self.values[plate][node]
    }

    pub fn local_values(&self, plate: usize) -> Vec<Vector3<f64>> {
        let rt = self.plates[plate].rotation.transpose();
        self.values[plate].iter().map(|v| rt * v).collect()
    }

    /// Largest mismatch between stitched node values.
    pub fn stitch_mismatch(&self) -> f64 {
        self.stitches.iter().map(|s| (self.values[s.master.0][s.master.1] - self.values[s.slave.0][s.slave.1]).norm()).fold(0.0, f64::max)
    }

    pub fn cell_values_local(&self, plate: usize, i: usize, j: usize, k: usize) -> [Vector3<f64>; 8] {
        let g = &self.plates[plate];
        let rt = g.rotation.transpose();
        g.cell_nodes(i, j, k).map(|n| rt * self.values[plate][n])
    }

    fn cell_modes(&self, plate: usize, c: usize) -> Option<&[f64; 9]> {
        self.modes.as_ref().map(|m| &m[plate][c])
    }

    /// Strain of every cell of every plate, local frame.
    pub fn strain(&self) -> Vec<Vec<CellStrain>> {
        (0..self.plates.len())
            .map(|p| {
                let g = &self.plates[p];
                (0..g.n_cells())
                    .into_par_iter()
                    .map(|c| {
                        let (i, j, k) = g.cell_ijk(c);
                        let kin = g.cell_kinematics(i, j, k);
                        let vals = self.cell_values_local(p, i, j, k);
                        let modes = self.cell_modes(p, c);
                        let gauss = [0, 1, 2, 3, 4, 5, 6, 7].map(|q| sym(&kin.gradient(q, &vals, modes)));
                        CellStrain { gauss, center: sym(&kin.center_gradient(&vals)) }
                    })
                    .collect()
            })
            .collect()
    }

    /// ∫ density(∇u) over active cells selected by `region`, summed in cell
    /// order for reproducibility.
    pub fn integrate_gradient<F>(&self, region: Region, density: F) -> Integral
    where
        F: Fn(&Matrix3<f64>) -> f64 + Sync,
    {
        let mut total = 0.0;
        let mut cells = 0;
        for p in 0..self.plates.len() {
            let g = &self.plates[p];
            let parts: Vec<Option<f64>> = (0..g.n_cells())
                .into_par_iter()
                .map(|c| {
                    if !self.active[p][c] || !region(&g.cell_info(p, c)) {
                        return None;
                    }
                    let (i, j, k) = g.cell_ijk(c);
                    let kin = g.cell_kinematics(i, j, k);
                    let vals = self.cell_values_local(p, i, j, k);
                    let modes = self.cell_modes(p, c);
                    Some((0..8).map(|q| kin.weights[q] * density(&kin.gradient(q, &vals, modes))).sum())
                })
                .collect();
            for v in parts.into_iter().flatten() {
                total += v;
                cells += 1;
            }
        }
        Integral { value: total, cells }
    }

    /// ℰ(u) = ∫ γ_ij γ_ij.
    pub fn energy_e(&self, region: Region) -> Integral {
        self.integrate_gradient(region, |h| {
            let e = sym(h);
            e.component_mul(&e).sum()
        })
    }

    /// 𝒟(u) = ∫ ∂_j u_i ∂_j u_i.
    pub fn energy_d(&self, region: Region) -> Integral {
        self.integrate_gradient(region, |h| h.component_mul(h).sum())
    }

    /// Elastic energy ∫ σ:γ.
    pub fn elastic_energy(&self, material: &Material, region: Region) -> Integral {
        self.integrate_gradient(region, |h| {
            let e = sym(h);
            material.stress(&e).component_mul(&e).sum()
        })
    }

    /// ∫ |u|² of the trilinear interpolant.
    pub fn l2_norm_sq(&self, region: Region) -> Integral {
        self.integrate_values(region, |v| v.norm_squared())
    }

    pub fn integrate_values<F>(&self, region: Region, density: F) -> Integral
    where
        F: Fn(&Vector3<f64>) -> f64 + Sync,
    {
        let gp = gauss_points_2();
        let mut total = 0.0;
        let mut cells = 0;
        for p in 0..self.plates.len() {
            let g = &self.plates[p];
            let parts: Vec<Option<f64>> = (0..g.n_cells())
                .into_par_iter()
                .map(|c| {
                    if !self.active[p][c] || !region(&g.cell_info(p, c)) {
                        return None;
                    }
                    let (i, j, k) = g.cell_ijk(c);
                    let kin = g.cell_kinematics(i, j, k);
                    let vals = self.cell_values_local(p, i, j, k);
                    let mut s = 0.0;
                    for (q, (xi, _)) in gp.iter().enumerate() {
                        let n = hex_shape(xi);
                        let u: Vector3<f64> = (0..8).map(|a| vals[a] * n[a]).sum();
                        s += kin.weights[q] * density(&u);
                    }
                    Some(s)
                })
                .collect();
            for v in parts.into_iter().flatten() {
                total += v;
                cells += 1;
            }
        }
        Integral { value: total, cells }
    }

    /// Trilinear interpolation at parametric (s, t) and thickness x₃, local
    /// components. Parameters must lie inside the grid.
    pub fn interpolate_local(&self, plate: usize, s: f64, t: f64, x3: f64) -> Vector3<f64> {
        let g = &self.plates[plate];
        let locate = |nodes: &[f64], v: f64| {
            let n = nodes.len();
            let idx = nodes.partition_point(|&x| x <= v).clamp(1, n - 1) - 1;
            let w = (v - nodes[idx]) / (nodes[idx + 1] - nodes[idx]);
            (idx, w)
        };
        let (i, a) = locate(&g.xi, s);
        let (j, b) = locate(&g.eta, t);
        let zeta = (x3 / g.delta + 1.0) * 0.5 * (g.nz - 1) as f64;
        let k = (zeta.floor() as isize).clamp(0, g.nz as isize - 2) as usize;
        let c = zeta - k as f64;
        let vals = self.cell_values_local(plate, i, j, k);
        let xi = Vector3::new(2.0 * a - 1.0, 2.0 * b - 1.0, 2.0 * c - 1.0);
        let n = hex_shape(&xi);
        (0..8).map(|m| vals[m] * n[m]).sum()
    }

    /// Writes `face_id,i,j,k,x,y,z,u1,u2,u3` rows (global coordinates and components).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["face_id", "i", "j", "k", "x", "y", "z", "u1", "u2", "u3"])?;
        for (p, g) in self.plates.iter().enumerate() {
            for n in 0..g.n_nodes() {
                let (i, j, k) = g.node_ijk(n);
                let x = g.global_node(n);
                let u = self.values[p][n];
                w.write_record(&[
                    g.face_id.to_string(),
                    i.to_string(),
                    j.to_string(),
                    k.to_string(),
                    format!("{:.17e}", x.x),
                    format!("{:.17e}", x.y),
                    format!("{:.17e}", x.z),
                    format!("{:.17e}", u.x),
                    format!("{:.17e}", u.y),
                    format!("{:.17e}", u.z),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &Self, factor: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * factor;
            }
        }
    }
}

/// A rigid displacement a + b ∧ x.
pub fn rigid(a: Vector3<f64>, b: Vector3<f64>) -> impl Fn(&Vector3<f64>) -> Vector3<f64> + Sync + Clone {
    move |x| a + b.cross(x)
}
