//! Discrete skeleton spaces: the weighted space X (piecewise-linear
//! membrane part, Morley deflection), the inextensional space D_I, the limit
//! space 𝒟_I with its rotation field ∇̂, the ρ-orthogonal splitting and the
//! norm-equivalence probe.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix6, Point2, Vector2, Vector3};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::Material;
use crate::linalg::{self, SpdSolver, TripletBuilder};
use crate::mesh::{build_mesh, MeshOptions, SkeletonMesh};
use crate::skeleton::{SideKind, Skeleton};

/// Sparse linear combination of global dofs.
pub type Combo = Vec<(usize, f64)>;

/// Three-point edge-midpoint rule in barycentric coordinates (exact for
/// quadratics); weights are fractions of the triangle area.
pub const MIDPOINT_RULE: [([f64; 3], f64); 3] = [([0.5, 0.5, 0.0], 1.0 / 3.0), ([0.0, 0.5, 0.5], 1.0 / 3.0), ([0.5, 0.0, 0.5], 1.0 / 3.0)];

/// Seven-point degree-5 rule used for error norms.
pub const SEVEN_POINT_RULE: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
    ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
];

pub fn barycentric_point(p: &[Point2<f64>; 3], l: &[f64; 3]) -> Point2<f64> {
    Point2::from(p[0].coords * l[0] + p[1].coords * l[1] + p[2].coords * l[2])
}

/// Morley triangle: dofs are the three vertex values followed by the
/// normal derivatives at the midpoints of edges (v0v1), (v1v2), (v2v0)
/// along the given fixed normals.
#[derive(Debug, Clone)]
pub struct MorleyTriangle {
    center: Point2<f64>,
    scale: f64,
    coef: Matrix6<f64>,
}

impl MorleyTriangle {
    pub fn new(p: &[Point2<f64>; 3], normals: &[Vector2<f64>; 3]) -> Self {
        let center = Point2::from((p[0].coords + p[1].coords + p[2].coords) / 3.0);
        let scale = (0..3).map(|k| (p[(k + 1) % 3] - p[k]).norm()).fold(0.0, f64::max);
        let mut t = Self { center, scale, coef: Matrix6::identity() };
        let mut d = Matrix6::zeros();
        for i in 0..3 {
            let m = t.monomials(&p[i]);
            for j in 0..6 {
                d[(i, j)] = m[j];
            }
        }
        for k in 0..3 {
            let mid = Point2::from((p[k].coords + p[(k + 1) % 3].coords) * 0.5);
            let g = t.monomial_gradients(&mid);
            for j in 0..6 {
                d[(3 + k, j)] = g[j].dot(&normals[k]);
            }
        }
        t.coef = d.try_inverse().expect("Morley dof matrix is invertible for nondegenerate triangles");
        t
    }

    fn monomials(&self, q: &Point2<f64>) -> [f64; 6] {
        let x = (q.x - self.center.x) / self.scale;
        let y = (q.y - self.center.y) / self.scale;
        [1.0, x, y, x * x, x * y, y * y]
    }

    fn monomial_gradients(&self, q: &Point2<f64>) -> [Vector2<f64>; 6] {
        let s = self.scale;
        let x = (q.x - self.center.x) / s;
        let y = (q.y - self.center.y) / s;
        [
            Vector2::zeros(),
            Vector2::new(1.0 / s, 0.0),
            Vector2::new(0.0, 1.0 / s),
            Vector2::new(2.0 * x / s, 0.0),
            Vector2::new(y / s, x / s),
            Vector2::new(0.0, 2.0 * y / s),
        ]
    }

    fn monomial_hessians(&self) -> [Matrix2<f64>; 6] {
        let s2 = self.scale * self.scale;
        [
            Matrix2::zeros(),
            Matrix2::zeros(),
            Matrix2::zeros(),
            Matrix2::new(2.0, 0.0, 0.0, 0.0) / s2,
            Matrix2::new(0.0, 1.0, 1.0, 0.0) / s2,
            Matrix2::new(0.0, 0.0, 0.0, 2.0) / s2,
        ]
    }

    pub fn values(&self, q: &Point2<f64>) -> [f64; 6] {
        let m = self.monomials(q);
        std::array::from_fn(|j| (0..6).map(|k| m[k] * self.coef[(k, j)]).sum())
    }

    pub fn gradients(&self, q: &Point2<f64>) -> [Vector2<f64>; 6] {
        let g = self.monomial_gradients(q);
        std::array::from_fn(|j| (0..6).fold(Vector2::zeros(), |acc, k| acc + g[k] * self.coef[(k, j)]))
    }

    pub fn hessians(&self) -> [Matrix2<f64>; 6] {
        let h = self.monomial_hessians();
        std::array::from_fn(|j| (0..6).fold(Matrix2::zeros(), |acc, k| acc + h[k] * self.coef[(k, j)]))
    }
}

/// Gradients of the barycentric coordinates of a triangle.
pub fn p1_gradients(p: &[Point2<f64>; 3]) -> [Vector2<f64>; 3] {
    let area2 = (p[1] - p[0]).perp(&(p[2] - p[0]));
    std::array::from_fn(|i| {
        let e = p[(i + 2) % 3] - p[(i + 1) % 3];
        Vector2::new(-e.y, e.x) / area2
    })
}

/// Pointwise values of a discrete field on one triangle, in face-local
/// components.
#[derive(Debug, Clone, Copy)]
pub struct PointValues {
    pub u: Vector3<f64>,
    pub grad_w: Vector2<f64>,
    pub hess_w: Matrix2<f64>,
    /// Membrane strain γ_αβ of the in-plane part.
    pub strain: Matrix2<f64>,
    /// In-plane rotation ½(∂₁u₂ − ∂₂u₁).
    pub theta: f64,
}

/// The discrete space X: continuous piecewise-linear 3-vector node values
/// shared across faces (in-plane part and deflection vertex values) plus
/// per-face Morley normal-derivative dofs. Clamped nodes are eliminated.
pub struct XSpace {
    pub skeleton: Skeleton,
    pub mesh: SkeletonMesh,
    pub rotations: Vec<Matrix3<f64>>,
    pub node_dof: Vec<Option<usize>>,
    pub normal_dof: Vec<Vec<usize>>,
    pub n_dofs: usize,
    /// <·,·>_ρ.
    pub gram: CsrMatrix<f64>,
    /// ‖·‖_E semi-inner product Σ ∫ γ_αβ γ_αβ.
    pub energy: CsrMatrix<f64>,
    morley: Vec<Vec<MorleyTriangle>>,
    p1: Vec<Vec<[Vector2<f64>; 3]>>,
}

/// Builds the mesh, the dof tables and both Gram forms.
pub fn build_spaces(skeleton: &Skeleton, options: &MeshOptions) -> Result<XSpace> {
    XSpace::new(skeleton, options)
}

impl XSpace {
    pub fn new(skeleton: &Skeleton, options: &MeshOptions) -> Result<Self> {
        let mesh = build_mesh(skeleton, options)?;
        let rotations = skeleton.faces.iter().map(|f| f.rotation()).collect();
        let mut n = 0;
        let node_dof = mesh
            .clamped
            .iter()
            .map(|&c| {
                if c {
                    None
                } else {
                    n += 3;
                    Some(n - 3)
                }
            })
            .collect();
        let normal_dof = mesh
            .faces
            .iter()
            .map(|fm| {
                (0..fm.edges.len())
                    .map(|_| {
                        n += 1;
                        n - 1
                    })
                    .collect()
            })
            .collect();
        let morley = mesh
            .faces
            .iter()
            .map(|fm| {
                (0..fm.triangles.len())
                    .map(|t| {
                        let p = fm.triangle_points(t);
                        let normals = fm.tri_edges[t].map(|e| fm.edges[e].normal);
                        MorleyTriangle::new(&p, &normals)
                    })
                    .collect()
            })
            .collect();
        let p1 = mesh.faces.iter().map(|fm| (0..fm.triangles.len()).map(|t| p1_gradients(&fm.triangle_points(t))).collect()).collect();
        let mut space = Self {
            skeleton: skeleton.clone(),
            mesh,
            rotations,
            node_dof,
            normal_dof,
            n_dofs: n,
            gram: CsrMatrix::zeros(n, n),
            energy: CsrMatrix::zeros(n, n),
            morley,
            p1,
        };
        space.gram = space.assemble(|ctx| ctx.gram());
        space.energy = space.assemble(|ctx| ctx.membrane(1.0, 0.0));
        Ok(space)
    }

    pub fn n_faces(&self) -> usize {
        self.mesh.faces.len()
    }

    /// Local component `c` of the node value at local node `node` of face
    /// `face` as a combination of X dofs.
    pub fn local_component(&self, face: usize, node: usize, c: usize) -> Combo {
        let g = self.mesh.faces[face].node_global[node];
        match self.node_dof[g] {
            None => Vec::new(),
            Some(d0) => {
                let r = &self.rotations[face];
                (0..3).filter(|&d| r[(d, c)] != 0.0).map(|d| (d0 + d, r[(d, c)])).collect()
            }
        }
    }

    pub fn morley(&self, face: usize, t: usize) -> &MorleyTriangle {
        &self.morley[face][t]
    }

    /// Combos of the local membrane variables [u1,u2 at v0, v1, v2] and the
    /// Morley variables [w at v0, v1, v2, normal derivatives on e0, e1, e2].
    pub fn triangle_combos(&self, face: usize, t: usize) -> ([Combo; 6], [Combo; 6]) {
        let fm = &self.mesh.faces[face];
        let tri = fm.triangles[t];
        let mem = std::array::from_fn(|k| self.local_component(face, tri[k / 2], k % 2));
        let mor = std::array::from_fn(|k| {
            if k < 3 {
                self.local_component(face, tri[k], 2)
            } else {
                vec![(self.normal_dof[face][fm.tri_edges[t][k - 3]], 1.0)]
            }
        });
        (mem, mor)
    }

    fn assemble<F>(&self, element: F) -> CsrMatrix<f64>
    where
        F: Fn(&ElementContext) -> (DMatrix<f64>, DMatrix<f64>) + Sync,
    {
        let per_face: Vec<Vec<(usize, usize, f64)>> = (0..self.n_faces())
            .into_par_iter()
            .map(|face| {
                let mut out = Vec::new();
                for t in 0..self.mesh.faces[face].triangles.len() {
                    let ctx = ElementContext::new(self, face, t);
                    let (km, kb) = element(&ctx);
                    let (mem, mor) = self.triangle_combos(face, t);
                    scatter(&mut out, &mem, &km);
                    scatter(&mut out, &mor, &kb);
                }
                out
            })
            .collect();
        let mut tb = TripletBuilder::new(self.n_dofs, self.n_dofs);
        for list in per_face {
            for (i, j, v) in list {
                tb.push(i, j, v);
            }
        }
        tb.build()
    }

    /// Membrane form (E/(1−ν²)) Σ ∫ [(1−ν)γ:γ + ν trγ trγ].
    pub fn membrane_stiffness(&self, material: &Material) -> Result<CsrMatrix<f64>> {
        let nu = material.poisson();
        if nu >= 0.5 || !nu.is_finite() {
            return Err(Error::Input("incompressible material rejected".into()));
        }
        let c = material.plane_stress_modulus();
        Ok(self.assemble(|ctx| ctx.membrane(c * (1.0 - nu), c * nu)))
    }

    /// Bending form (E/(3(1−ν²))) Σ ∫ [(1−ν)∂²w:∂²v + ν Δw Δv] with broken
    /// Morley Hessians.
    pub fn bending_stiffness(&self, material: &Material) -> Result<CsrMatrix<f64>> {
        let nu = material.poisson();
        if nu >= 0.5 || !nu.is_finite() {
            return Err(Error::Input("incompressible material rejected".into()));
        }
        let d = material.bending_stiffness();
        Ok(self.assemble(|ctx| ctx.bending(d * (1.0 - nu), d * nu)))
    }

    /// L² mass form of all three local components.
    pub fn mass(&self) -> CsrMatrix<f64> {
        self.assemble(|ctx| ctx.mass())
    }

    /// Load vector ∫_S f·V for a field given in face-local components.
    pub fn load<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, &Point2<f64>) -> Vector3<f64> + Sync,
    {
        let per_face: Vec<Vec<(usize, f64)>> = (0..self.n_faces())
            .into_par_iter()
            .map(|face| {
                let fm = &self.mesh.faces[face];
                let mut out = Vec::new();
                for t in 0..fm.triangles.len() {
                    let p = fm.triangle_points(t);
                    let area = fm.triangle_area(t);
                    let (mem, mor) = self.triangle_combos(face, t);
                    let m = &self.morley[face][t];
                    for (l, w) in MIDPOINT_RULE {
                        let q = barycentric_point(&p, &l);
                        let fv = f(face, &q);
                        let wq = w * area;
                        for k in 0..3 {
                            for c in 0..2 {
                                for &(i, v) in &mem[2 * k + c] {
                                    out.push((i, wq * fv[c] * l[k] * v));
                                }
                            }
                        }
                        let phi = m.values(&q);
                        for k in 0..6 {
                            for &(i, v) in &mor[k] {
                                out.push((i, wq * fv[2] * phi[k] * v));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let mut b = vec![0.0; self.n_dofs];
        for list in per_face {
            for (i, v) in list {
                b[i] += v;
            }
        }
        b
    }

    /// Interpolates a field given by its face-local value and the local
    /// gradient of its deflection. Shared nodes take the value seen from the
    /// first incident face.
    pub fn interpolate<F, G>(&self, value: F, grad_w: G) -> Vec<f64>
    where
        F: Fn(usize, &Point2<f64>) -> Vector3<f64>,
        G: Fn(usize, &Point2<f64>) -> Vector2<f64>,
    {
        let mut x = vec![0.0; self.n_dofs];
        for (g, owners) in self.mesh.node_owners.iter().enumerate() {
            if let Some(d0) = self.node_dof[g] {
                let (face, node) = owners[0];
                let v = self.rotations[face] * value(face, &self.mesh.faces[face].nodes[node]);
                for d in 0..3 {
                    x[d0 + d] = v[d];
                }
            }
        }
        for (face, fm) in self.mesh.faces.iter().enumerate() {
            for (e, edge) in fm.edges.iter().enumerate() {
                x[self.normal_dof[face][e]] = grad_w(face, &edge.midpoint).dot(&edge.normal);
            }
        }
        x
    }

    /// Face-local nodal values (u1, u2, w) of face `face`.
    pub fn nodal_values(&self, x: &[f64], face: usize) -> Vec<Vector3<f64>> {
        let fm = &self.mesh.faces[face];
        let rt = self.rotations[face].transpose();
        fm.node_global
            .iter()
            .map(|&g| match self.node_dof[g] {
                None => Vector3::zeros(),
                Some(d0) => rt * Vector3::new(x[d0], x[d0 + 1], x[d0 + 2]),
            })
            .collect()
    }

    /// Evaluates a discrete field at a point of triangle `t` of face `face`.
    pub fn evaluate(&self, x: &[f64], face: usize, t: usize, q: &Point2<f64>) -> PointValues {
        let fm = &self.mesh.faces[face];
        let tri = fm.triangles[t];
        let rt = self.rotations[face].transpose();
        let node = |n: usize| match self.node_dof[fm.node_global[n]] {
            None => Vector3::zeros(),
            Some(d0) => rt * Vector3::new(x[d0], x[d0 + 1], x[d0 + 2]),
        };
        let vals = tri.map(node);
        let p = fm.triangle_points(t);
        let g = &self.p1[face][t];
        let area2 = 2.0 * fm.triangle_area(t);
        let lam = |k: usize| {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            (b - a).perp(&(q - a)) / area2
        };
        let l = [lam(0), lam(1), lam(2)];
        let mut du = Matrix2::zeros();
        let mut u = Vector3::zeros();
        for k in 0..3 {
            u[0] += l[k] * vals[k][0];
            u[1] += l[k] * vals[k][1];
            for a in 0..2 {
                du[(0, a)] += vals[k][0] * g[k][a];
                du[(1, a)] += vals[k][1] * g[k][a];
            }
        }
        let m = &self.morley[face][t];
        let dofs: [f64; 6] = std::array::from_fn(|k| if k < 3 { vals[k][2] } else { x[self.normal_dof[face][fm.tri_edges[t][k - 3]]] });
        let phi = m.values(q);
        let dphi = m.gradients(q);
        let hphi = m.hessians();
        let mut grad_w = Vector2::zeros();
        let mut hess_w = Matrix2::zeros();
        for k in 0..6 {
            u[2] += phi[k] * dofs[k];
            grad_w += dphi[k] * dofs[k];
            hess_w += hphi[k] * dofs[k];
        }
        let strain = (du + du.transpose()) * 0.5;
        PointValues { u, grad_w, hess_w, strain, theta: 0.5 * (du[(1, 0)] - du[(0, 1)]) }
    }

    /// Largest |γ_αβ| over all triangles.
    pub fn membrane_strain_sup(&self, x: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for (face, fm) in self.mesh.faces.iter().enumerate() {
            for t in 0..fm.triangles.len() {
                let p = fm.triangle_points(t);
                let c = barycentric_point(&p, &[1.0 / 3.0; 3]);
                let v = self.evaluate(x, face, t, &c);
                m = m.max(v.strain.abs().max());
            }
        }
        m
    }

    /// ∇̂ = R(∂₂w, −∂₁w, θ) (global components) at a point.
    pub fn hat_gradient_at(&self, x: &[f64], face: usize, t: usize, q: &Point2<f64>) -> Vector3<f64> {
        let v = self.evaluate(x, face, t, q);
        self.rotations[face] * Vector3::new(v.grad_w.y, -v.grad_w.x, v.theta)
    }

    /// ∇̂ at the midpoint of every mesh edge, per face, in global
    /// components. Uses the exact midpoint gradient of the Morley field.
    pub fn hat_gradient_edges(&self, x: &[f64]) -> Vec<Vec<Vector3<f64>>> {
        (0..self.n_faces())
            .map(|face| {
                let fm = &self.mesh.faces[face];
                let vals = self.nodal_values(x, face);
                let mut theta = vec![0.0; fm.edges.len()];
                for t in 0..fm.triangles.len() {
                    let p = fm.triangle_points(t);
                    let v = self.evaluate(x, face, t, &barycentric_point(&p, &[1.0 / 3.0; 3]));
                    for &e in &fm.tri_edges[t] {
                        theta[e] = v.theta;
                    }
                }
                fm.edges
                    .iter()
                    .enumerate()
                    .map(|(e, edge)| {
                        let dt = (vals[edge.b][2] - vals[edge.a][2]) / edge.length;
                        let dn = x[self.normal_dof[face][e]];
                        let g = edge.tangent * dt + edge.normal * dn;
                        self.rotations[face] * Vector3::new(g.y, -g.x, theta[e])
                    })
                    .collect()
            })
            .collect()
    }

    /// Writes both Gram forms in coordinate format.
    pub fn export_gram<W: Write>(&self, gram: W, energy: W) -> Result<()> {
        linalg::export_coordinate(&self.gram, gram)?;
        linalg::export_coordinate(&self.energy, energy)
    }

    /// ρ-weighted squared norm of the difference between a discrete field
    /// and an exact local field (value and deflection gradient), by the
    /// seven-point rule. Returns (L² part of u, weighted part of ∇w).
    pub fn l2_error<F>(&self, x: &[f64], exact: F) -> f64
    where
        F: Fn(usize, &Point2<f64>) -> Vector3<f64> + Sync,
    {
        let s: f64 = (0..self.n_faces())
            .into_par_iter()
            .map(|face| {
                let fm = &self.mesh.faces[face];
                let mut acc = 0.0;
                for t in 0..fm.triangles.len() {
                    let p = fm.triangle_points(t);
                    let area = fm.triangle_area(t);
                    for (l, w) in SEVEN_POINT_RULE {
                        let q = barycentric_point(&p, &l);
                        let v = self.evaluate(x, face, t, &q);
                        acc += w * area * (v.u - exact(face, &q)).norm_squared();
                    }
                }
                acc
            })
            .sum();
        s.sqrt()
    }
}

fn scatter(out: &mut Vec<(usize, usize, f64)>, combos: &[Combo; 6], ke: &DMatrix<f64>) {
    for a in 0..6 {
        for b in 0..6 {
            let k = ke[(a, b)];
            if k == 0.0 {
                continue;
            }
            for &(i, ci) in &combos[a] {
                for &(j, cj) in &combos[b] {
                    out.push((i, j, k * ci * cj));
                }
            }
        }
    }
}

struct ElementContext<'a> {
    space: &'a XSpace,
    face: usize,
    p: [Point2<f64>; 3],
    area: f64,
    g: [Vector2<f64>; 3],
    morley: &'a MorleyTriangle,
}

impl<'a> ElementContext<'a> {
    fn new(space: &'a XSpace, face: usize, t: usize) -> Self {
        let fm = &space.mesh.faces[face];
        Self { space, face, p: fm.triangle_points(t), area: fm.triangle_area(t), g: space.p1[face][t], morley: &space.morley[face][t] }
    }

    /// Rows ε11, ε22, ε12 of the constant membrane strain.
    fn strain_rows(&self) -> [[f64; 6]; 3] {
        let mut b = [[0.0; 6]; 3];
        for k in 0..3 {
            b[0][2 * k] = self.g[k].x;
            b[1][2 * k + 1] = self.g[k].y;
            b[2][2 * k] = 0.5 * self.g[k].y;
            b[2][2 * k + 1] = 0.5 * self.g[k].x;
        }
        b
    }

    /// Membrane element matrix a·γ:γ + b·trγ trγ, and a zero bending block.
    fn membrane(&self, a: f64, b: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = self.strain_rows();
        let km = DMatrix::from_fn(6, 6, |i, j| {
            let gg = s[0][i] * s[0][j] + s[1][i] * s[1][j] + 2.0 * s[2][i] * s[2][j];
            let tt = (s[0][i] + s[1][i]) * (s[0][j] + s[1][j]);
            self.area * (a * gg + b * tt)
        });
        (km, DMatrix::zeros(6, 6))
    }

    fn gram(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (km, _) = self.membrane(1.0, 0.0);
        let mut kb = DMatrix::zeros(6, 6);
        for (l, w) in MIDPOINT_RULE {
            let q = barycentric_point(&self.p, &l);
            let rho = self.space.skeleton.rho(self.face, &q);
            let d = self.morley.gradients(&q);
            for i in 0..6 {
                for j in 0..6 {
                    kb[(i, j)] += w * self.area * rho * d[i].dot(&d[j]);
                }
            }
        }
        (km, kb)
    }

    fn bending(&self, a: f64, b: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = self.morley.hessians();
        let kb = DMatrix::from_fn(6, 6, |i, j| self.area * (a * h[i].dot(&h[j]) + b * h[i].trace() * h[j].trace()));
        (DMatrix::zeros(6, 6), kb)
    }

    fn mass(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut km = DMatrix::zeros(6, 6);
        let mut kb = DMatrix::zeros(6, 6);
        for (l, w) in MIDPOINT_RULE {
            let q = barycentric_point(&self.p, &l);
            let phi = self.morley.values(&q);
            for i in 0..6 {
                for j in 0..6 {
                    kb[(i, j)] += w * self.area * phi[i] * phi[j];
                    if i % 2 == j % 2 {
                        km[(i, j)] += w * self.area * l[i / 2] * l[j / 2];
                    }
                }
            }
        }
        (km, kb)
    }
}

/// Which constrained space to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpaceKind {
    /// D_I: rigid in-plane part per face, trace continuity, Γ0 clamping.
    Inextensional,
    /// 𝒟_I: additionally ∇̂ single-valued across edges and vertices and
    /// clamped on Γ0.
    LimitInextensional,
}

/// Labels of constraint rows, reported on rank deficiency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ConstraintId {
    NodeContinuity { node: usize, face: usize },
    NodeClamp { node: usize, face: usize },
    RotationContinuity { face: usize, edge: usize },
    RotationClamp { face: usize, edge: usize },
    VertexDisplacement { vertex: usize, face: usize },
    VertexRotation { vertex: usize, face: usize, edge: usize },
}

/// Coordinates of the parametrized space: per face the three rigid in-plane
/// parameters (t₁, t₂, θ), the deflection at every face node and the normal
/// derivative on every mesh edge; then 6 vertex parameters (𝒜(A), ∇̂𝒜(A))
/// per vertex of 𝒩.
#[derive(Debug, Clone)]
pub struct ZLayout {
    pub face_base: Vec<usize>,
    pub vertex_base: usize,
    /// Global mesh node of each vertex of 𝒩.
    pub vertex_nodes: Vec<usize>,
    pub total: usize,
}

impl ZLayout {
    pub fn new(space: &XSpace) -> Self {
        let mut base = Vec::new();
        let mut n = 0;
        for fm in &space.mesh.faces {
            base.push(n);
            n += 3 + fm.nodes.len() + fm.edges.len();
        }
        let vertex_nodes: Vec<usize> = space
            .skeleton
            .multi_face_vertices()
            .iter()
            .filter_map(|p| space.mesh.nodes.iter().position(|q| (q - p).norm() <= space.skeleton.tol))
            .collect();
        let total = n + 6 * vertex_nodes.len();
        Self { face_base: base, vertex_base: n, vertex_nodes, total }
    }

    pub fn rigid(&self, face: usize, k: usize) -> usize {
        self.face_base[face] + k
    }

    pub fn w(&self, face: usize, node: usize) -> usize {
        self.face_base[face] + 3 + node
    }

    pub fn dn(&self, space: &XSpace, face: usize, edge: usize) -> usize {
        self.face_base[face] + 3 + space.mesh.faces[face].nodes.len() + edge
    }

    pub fn vertex(&self, v: usize, k: usize) -> usize {
        self.vertex_base + 6 * v + k
    }
}

fn local_value_z(space: &XSpace, z: &ZLayout, face: usize, node: usize) -> [Combo; 3] {
    let p = space.mesh.faces[face].nodes[node];
    [
        vec![(z.rigid(face, 0), 1.0), (z.rigid(face, 2), -p.y)],
        vec![(z.rigid(face, 1), 1.0), (z.rigid(face, 2), p.x)],
        vec![(z.w(face, node), 1.0)],
    ]
}

fn local_rotation_z(space: &XSpace, z: &ZLayout, face: usize, e: usize) -> [Combo; 3] {
    let edge = &space.mesh.faces[face].edges[e];
    let (t, n) = (edge.tangent, edge.normal);
    let (wa, wb, dn) = (z.w(face, edge.a), z.w(face, edge.b), z.dn(space, face, e));
    let grad = |c: usize| vec![(wb, t[c] / edge.length), (wa, -t[c] / edge.length), (dn, n[c])];
    let neg = |v: Combo| v.into_iter().map(|(i, a)| (i, -a)).collect::<Combo>();
    [grad(1), neg(grad(0)), vec![(z.rigid(face, 2), 1.0)]]
}

fn rotate(r: &Matrix3<f64>, local: &[Combo; 3], scale: f64) -> [Combo; 3] {
    std::array::from_fn(|d| {
        let mut out = Combo::new();
        for c in 0..3 {
            if r[(d, c)] != 0.0 {
                out.extend(local[c].iter().map(|&(i, a)| (i, scale * r[(d, c)] * a)));
            }
        }
        out
    })
}

fn merge(a: &Combo, b: &Combo) -> Combo {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for &(i, v) in a.iter().chain(b.iter()) {
        *m.entry(i).or_insert(0.0) += v;
    }
    m.into_iter().filter(|(_, v)| *v != 0.0).collect()
}

/// Constraint rows of the requested space on the z coordinates.
pub fn constraint_rows(space: &XSpace, layout: &ZLayout, kind: SpaceKind) -> Vec<(ConstraintId, Combo)> {
    let mut rows = Vec::new();
    let mesh = &space.mesh;
    for (g, owners) in mesh.node_owners.iter().enumerate() {
        let (f0, n0) = owners[0];
        let v0 = rotate(&space.rotations[f0], &local_value_z(space, layout, f0, n0), 1.0);
        if mesh.clamped[g] {
            for &(f, n) in owners {
                for c in local_value_z(space, layout, f, n) {
                    rows.push((ConstraintId::NodeClamp { node: g, face: f }, c));
                }
            }
            continue;
        }
        for &(f, n) in &owners[1..] {
            let v = rotate(&space.rotations[f], &local_value_z(space, layout, f, n), -1.0);
            for d in 0..3 {
                rows.push((ConstraintId::NodeContinuity { node: g, face: f }, merge(&v0[d], &v[d])));
            }
        }
    }
    if kind == SpaceKind::Inextensional {
        return rows;
    }
    let mut shared: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for (f, fm) in mesh.faces.iter().enumerate() {
        for (e, edge) in fm.edges.iter().enumerate() {
            let Some(s) = edge.side else { continue };
            match space.skeleton.side_kind(f, s) {
                SideKind::Clamped => {
                    for c in local_rotation_z(space, layout, f, e) {
                        rows.push((ConstraintId::RotationClamp { face: f, edge: e }, c));
                    }
                }
                SideKind::Junction(_) => {
                    let key = (fm.node_global[edge.a], fm.node_global[edge.b]);
                    shared.entry(key).or_default().push((f, e));
                }
                SideKind::Free => {}
            }
        }
    }
    for list in shared.values() {
        let (f0, e0) = list[0];
        let b0 = rotate(&space.rotations[f0], &local_rotation_z(space, layout, f0, e0), 1.0);
        for &(f, e) in &list[1..] {
            let b = rotate(&space.rotations[f], &local_rotation_z(space, layout, f, e), -1.0);
            for d in 0..3 {
                rows.push((ConstraintId::RotationContinuity { face: f, edge: e }, merge(&b0[d], &b[d])));
            }
        }
    }
    for (v, &g) in layout.vertex_nodes.iter().enumerate() {
        for &(f, n) in &mesh.node_owners[g] {
            let val = rotate(&space.rotations[f], &local_value_z(space, layout, f, n), 1.0);
            for d in 0..3 {
                rows.push((ConstraintId::VertexDisplacement { vertex: v, face: f }, merge(&val[d], &vec![(layout.vertex(v, d), -1.0)])));
            }
            let fm = &mesh.faces[f];
            for (e, edge) in fm.edges.iter().enumerate() {
                let Some(s) = edge.side else { continue };
                if !matches!(space.skeleton.side_kind(f, s), SideKind::Junction(_)) || (edge.a != n && edge.b != n) {
                    continue;
                }
                let b = rotate(&space.rotations[f], &local_rotation_z(space, layout, f, e), 1.0);
                for d in 0..3 {
                    rows.push((
                        ConstraintId::VertexRotation { vertex: v, face: f, edge: e },
                        merge(&b[d], &vec![(layout.vertex(v, 3 + d), -1.0)]),
                    ));
                }
            }
        }
    }
    rows
}

/// Result of eliminating homogeneous constraints: a basis of their
/// solution set and the rank bookkeeping.
#[derive(Debug, Clone)]
pub struct Elimination {
    pub basis: CsrMatrix<f64>,
    pub rows: usize,
    pub rank: usize,
    /// Constraint ids of blocks whose rows were linearly dependent.
    pub deficient: Vec<ConstraintId>,
}

/// Basis of {z : C z = 0} over the first `n` coordinates. Single-entry
/// rows zero their column (repeatedly); the remaining rows are split into
/// column-connected blocks whose nullspaces come from the SVD.
pub fn eliminate(n: usize, rows: &[(ConstraintId, Combo)]) -> Elimination {
    let mut zero = vec![false; n];
    let mut active: Vec<usize> = (0..rows.len()).collect();
    let mut rank = 0;
    loop {
        let mut changed = false;
        let mut next = Vec::new();
        for &r in &active {
            let live: Vec<&(usize, f64)> = rows[r].1.iter().filter(|(i, v)| !zero[*i] && *v != 0.0).collect();
            match live.len() {
                0 => {}
                1 => {
                    zero[live[0].0] = true;
                    rank += 1;
                    changed = true;
                }
                _ => next.push(r),
            }
        }
        active = next;
        if !changed {
            break;
        }
    }
    // Column blocks connected through rows.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut c = i;
        while p[c] != r {
            let nx = p[c];
            p[c] = r;
            c = nx;
        }
        r
    }
    for &r in &active {
        let cols: Vec<usize> = rows[r].1.iter().filter(|(i, _)| !zero[*i]).map(|(i, _)| *i).collect();
        for w in cols.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut in_rows = vec![false; n];
    for &r in &active {
        for (i, _) in &rows[r].1 {
            if !zero[*i] {
                in_rows[*i] = true;
            }
        }
    }
    let mut blocks: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..n {
        if in_rows[i] {
            let root = find(&mut parent, i);
            blocks.entry(root).or_default().0.push(i);
        }
    }
    for &r in &active {
        let i = rows[r].1.iter().find(|(i, _)| !zero[*i]).unwrap().0;
        let root = find(&mut parent, i);
        blocks.get_mut(&root).unwrap().1.push(r);
    }
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::new();
    for i in 0..n {
        if !zero[i] && !in_rows[i] {
            columns.push(vec![(i, 1.0)]);
        }
    }
    let mut deficient = Vec::new();
    for (cols, block_rows) in blocks.values() {
        let pos: BTreeMap<usize, usize> = cols.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let mut a = DMatrix::zeros(block_rows.len(), cols.len());
        for (ri, &r) in block_rows.iter().enumerate() {
            for &(i, v) in &rows[r].1 {
                if let Some(&k) = pos.get(&i) {
                    a[(ri, k)] += v;
                }
            }
            let nrm = a.row(ri).norm();
            if nrm > 0.0 {
                a.row_mut(ri).scale_mut(1.0 / nrm);
            }
        }
        let ns = linalg::nullspace(&a, 1e-10);
        let block_rank = cols.len() - ns.ncols();
        rank += block_rank;
        if block_rank < block_rows.len() {
            deficient.push(rows[block_rows[0]].0.clone());
        }
        for j in 0..ns.ncols() {
            let col: Vec<(usize, f64)> =
                cols.iter().enumerate().filter(|(k, _)| ns[(*k, j)].abs() > 1e-15).map(|(k, &c)| (c, ns[(k, j)])).collect();
            columns.push(col);
        }
    }
    let mut tb = TripletBuilder::new(n, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for &(i, v) in col {
            tb.push(i, j, v);
        }
    }
    Elimination { basis: tb.build(), rows: rows.len(), rank, deficient }
}

/// The sparse map from z coordinates (without vertex parameters) to X.
pub fn z_to_x(space: &XSpace, layout: &ZLayout) -> CsrMatrix<f64> {
    let mut tb = TripletBuilder::new(space.n_dofs, layout.total);
    for (g, owners) in space.mesh.node_owners.iter().enumerate() {
        if let Some(d0) = space.node_dof[g] {
            let (f, n) = owners[0];
            let v = rotate(&space.rotations[f], &local_value_z(space, layout, f, n), 1.0);
            for d in 0..3 {
                for &(i, a) in &v[d] {
                    tb.push(d0 + d, i, a);
                }
            }
        }
    }
    for (f, fm) in space.mesh.faces.iter().enumerate() {
        for e in 0..fm.edges.len() {
            tb.push(space.normal_dof[f][e], layout.dn(space, f, e), 1.0);
        }
    }
    tb.build()
}

/// Basis of a constrained subspace of X (D_I or 𝒟_I), kept as sparse
/// columns together with the Cholesky factor of its ρ-Gram matrix; the
/// pair is equivalent to a ρ-orthonormal basis.
pub struct InextensionalBasis {
    pub kind: SpaceKind,
    pub layout: ZLayout,
    pub constraints: Vec<(ConstraintId, Combo)>,
    pub elimination: Elimination,
    /// Columns in z coordinates.
    pub z: CsrMatrix<f64>,
    /// Columns in X coordinates.
    pub x: CsrMatrix<f64>,
    /// ρ-Gram matrix of the columns.
    pub gram: CsrMatrix<f64>,
    solver: Option<SpdSolver>,
}

/// Basis of the discrete D_I.
pub fn inextensional_basis(space: &XSpace) -> Result<InextensionalBasis> {
    InextensionalBasis::new(space, SpaceKind::Inextensional)
}

/// Basis of the discrete 𝒟_I.
pub fn limit_inextensional_basis(space: &XSpace) -> Result<InextensionalBasis> {
    InextensionalBasis::new(space, SpaceKind::LimitInextensional)
}

impl InextensionalBasis {
    pub fn new(space: &XSpace, kind: SpaceKind) -> Result<Self> {
        let layout = ZLayout::new(space);
        let constraints = constraint_rows(space, &layout, kind);
        let n = match kind {
            SpaceKind::Inextensional => layout.vertex_base,
            SpaceKind::LimitInextensional => layout.total,
        };
        let elimination = eliminate(n, &constraints);
        let mut z = elimination.basis.clone();
        if n < layout.total {
            let mut tb = TripletBuilder::new(layout.total, z.ncols());
            for (i, j, v) in z.triplet_iter() {
                tb.push(i, j, *v);
            }
            z = tb.build();
        }
        let p = z_to_x(space, &layout);
        let x = &p * &z;
        let gram = linalg::congruence(&x, &space.gram);
        let solver = if gram.nrows() > 0 { Some(SpdSolver::new(&gram)?) } else { None };
        Ok(Self { kind, layout, constraints, elimination, z, x, gram, solver })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Column `j` as an X vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[j] = 1.0;
        linalg::matvec(&self.x, &e)
    }

    pub fn to_x(&self, c: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.x, c)
    }

    pub fn to_z(&self, c: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.z, c)
    }

    /// Solves the ρ-Gram system G_I c = b.
    pub fn solve_gram(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.solver {
            Some(s) => s.solve(b),
            None => Ok(Vec::new()),
        }
    }

    /// Coordinates of the ρ-orthogonal projection of an X vector.
    pub fn project(&self, space: &XSpace, u: &[f64]) -> Result<Vec<f64>> {
        let gu = linalg::matvec(&space.gram, u);
        self.solve_gram(&linalg::transpose_matvec(&self.x, &gu))
    }

    /// Largest |C z| over all constraint rows, relative to max |z|.
    pub fn constraint_residual(&self, z: &[f64]) -> f64 {
        let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        self.constraints.iter().map(|(_, row)| row.iter().map(|&(i, v)| v * z[i]).sum::<f64>().abs()).fold(0.0, f64::max) / scale
    }

    /// Dense ρ-orthonormal basis (columns in X coordinates).
    pub fn orthonormal_dense(&self) -> Result<DMatrix<f64>> {
        let g = linalg::to_dense(&self.gram);
        let chol = g.cholesky().ok_or_else(|| Error::Solver("basis Gram matrix is singular".into()))?;
        let l = chol.l();
        let x = linalg::to_dense(&self.x);
        let lt_inv = l.transpose().try_inverse().ok_or_else(|| Error::Solver("singular factor".into()))?;
        Ok(x * lt_inv)
    }

    /// Writes the X-coordinate basis in coordinate format.
    pub fn export<W: Write>(&self, out: W) -> Result<()> {
        linalg::export_coordinate(&self.x, out)
    }
}

/// z vector of a field described per face by its rigid in-plane
/// parameters and its deflection (value and gradient). Vertex parameters
/// are filled from the first incident face.
pub fn z_from_parts<W>(space: &XSpace, layout: &ZLayout, rigid: &[[f64; 3]], deflection: W) -> Vec<f64>
where
    W: Fn(usize, &Point2<f64>) -> (f64, Vector2<f64>),
{
    let mut z = vec![0.0; layout.total];
    for (f, fm) in space.mesh.faces.iter().enumerate() {
        for k in 0..3 {
            z[layout.rigid(f, k)] = rigid[f][k];
        }
        for (n, p) in fm.nodes.iter().enumerate() {
            z[layout.w(f, n)] = deflection(f, p).0;
        }
        for (e, edge) in fm.edges.iter().enumerate() {
            z[layout.dn(space, f, e)] = deflection(f, &edge.midpoint).1.dot(&edge.normal);
        }
    }
    for (v, &g) in layout.vertex_nodes.iter().enumerate() {
        let (f, n) = space.mesh.node_owners[g][0];
        let p = space.mesh.faces[f].nodes[n];
        let (w, grad) = deflection(f, &p);
        let r = rigid[f];
        let local = Vector3::new(r[0] - r[2] * p.y, r[1] + r[2] * p.x, w);
        let a = space.rotations[f] * local;
        let b = space.rotations[f] * Vector3::new(grad.y, -grad.x, r[2]);
        for d in 0..3 {
            z[layout.vertex(v, d)] = a[d];
            z[layout.vertex(v, 3 + d)] = b[d];
        }
    }
    z
}

/// ρ-orthogonal splitting u = U_E + U_I with U_I in the span of `basis`.
pub fn split(space: &XSpace, basis: &InextensionalBasis, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if basis.dim() == 0 {
        return Ok((u.to_vec(), vec![0.0; u.len()]));
    }
    let c = basis.project(space, u)?;
    let ui = basis.to_x(&c);
    let ue = u.iter().zip(&ui).map(|(a, b)| a - b).collect();
    Ok((ue, ui))
}

/// Extreme generalized eigenvalues of ‖·‖_E² against |·|_ρ² on a
/// subspace of X.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormEquivalence {
    pub c_min: f64,
    pub c_max: f64,
    pub dim: usize,
}

/// Probe on the ρ-orthogonal complement of D_I, optionally enlarged by
/// extra X directions.
pub fn norm_equivalence_probe(space: &XSpace, basis: &InextensionalBasis, extra: &[Vec<f64>]) -> Result<NormEquivalence> {
    let g = linalg::to_dense(&space.gram);
    let e = linalg::to_dense(&space.energy);
    let chol = g.cholesky().ok_or_else(|| Error::Solver("ρ-Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Solver("singular Gram factor".into()))?;
    let n = space.n_dofs;
    // Whitened coordinates y = Lᵀx turn <·,·>_ρ into the Euclidean product.
    let w = l.transpose() * linalg::to_dense(&basis.x);
    let complement = if w.ncols() == 0 { DMatrix::identity(n, n) } else { linalg::nullspace(&w.transpose(), 1e-10) };
    let mut q = complement;
    if !extra.is_empty() {
        let mut cols: Vec<DMatrix<f64>> = vec![q];
        for x in extra {
            cols.push(l.transpose() * DMatrix::from_column_slice(n, 1, x));
        }
        let total: usize = cols.iter().map(|c| c.ncols()).sum();
        let mut m = DMatrix::zeros(n, total);
        let mut k = 0;
        for c in cols {
            m.view_mut((0, k), (n, c.ncols())).copy_from(&c);
            k += c.ncols();
        }
        let svd = m.svd(true, false);
        let u = svd.u.unwrap();
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax).collect();
        q = DMatrix::from_fn(n, keep.len(), |i, j| u[(i, keep[j])]);
    }
    if q.ncols() == 0 {
        return Err(Error::Solver("empty extensional complement".into()));
    }
    let ew = &l_inv * e * l_inv.transpose();
    let a = q.transpose() * ew * &q;
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigenvalues();
    Ok(NormEquivalence {
        c_min: eig.iter().fold(f64::INFINITY, |m, v| m.min(*v)),
        c_max: eig.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)),
        dim: q.ncols(),
    })
}
