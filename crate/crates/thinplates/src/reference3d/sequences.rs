//! Recovery sequences W_δ for limit bending fields and test sequences V_δ for
//! skeleton displacements.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rayon::prelude::*;

use crate::decompose::cutoff;
use crate::error::{Error, Result};
use crate::fields::{hex_shape, sym, DisplacementSample3D};
use crate::linalg;
use crate::spaces::{barycentric_point, p1_gradients, InextensionalBasis, XSpace};

use super::locate::TriangleLocator;
use super::mesher::{build_junction_mesh, MeshParams, NodeDof};
use super::study::near_junction;

/// Largest relative ρ-distance from the 𝒟_I span accepted as membership.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
struct VertexRigid {
    point: Point3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
}

/// Triangles fixed at a base point so that derivatives are taken on a single
/// polynomial piece.
#[derive(Debug, Clone)]
struct Frozen {
    tri: usize,
    edges: Vec<(usize, usize, usize)>,
}

/// W_δ = (1/δ)(V(x̂) + ∇̂V(x̂) ∧ x₃e₃) on every plate, blended toward the
/// shared edge e.r.d. (a, b) = (V, ∇̂V)|_J/δ near non-clamped junction edges
/// and toward the vertex rigid motion r_A/δ near vertices of 𝒩. Cutoffs use
/// the distance of the 3D point, so stitched points of different plates get
/// one value.
#[derive(Clone)]
pub struct RecoverySequence<'a> {
    space: &'a XSpace,
    v: Vec<f64>,
    pub delta: f64,
    locator: TriangleLocator,
    edges: Vec<usize>,
    vertices: Vec<VertexRigid>,
}

/// Junction-excluded distances of an unfolded recovery strain to its limit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecoveryDistances {
    pub delta: f64,
    /// ‖𝒯_δ(γ_αβ(W_δ)) + t₃∂²_αβV₃‖.
    pub ab: f64,
    /// ‖𝒯_δ(γ_k3(W_δ))‖ over k = 1, 2, 3.
    pub k3: f64,
    /// ‖t₃∂²_αβV₃‖ on the same region.
    pub reference: f64,
}

impl<'a> RecoverySequence<'a> {
    /// Rejects V whose relative ρ-distance to the span of `basis` exceeds
    /// [`MEMBERSHIP_TOL`].
    pub fn new(space: &'a XSpace, basis: &InextensionalBasis, v: &[f64], delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Input(format!("delta must be positive, got {delta}")));
        }
        let norm = linalg::bilinear(&space.gram, v, v).max(0.0).sqrt();
        if norm > 0.0 {
            let p = basis.to_x(&basis.project(space, v)?);
            let d: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
            let dist = linalg::bilinear(&space.gram, &d, &d).max(0.0).sqrt() / norm;
            if dist > MEMBERSHIP_TOL {
                return Err(Error::Inadmissible(format!(
                    "field is not in the discrete limit inextensional space (relative distance {dist:.3e})"
                )));
            }
        }
        let skeleton = &space.skeleton;
        let locator = TriangleLocator::new(space);
        let edges = skeleton.junction_edges().filter(|(_, e)| !e.clamped).map(|(k, _)| k).collect();
        let mut seq = Self { space, v: v.to_vec(), delta, locator, edges, vertices: Vec::new() };
        seq.vertices = skeleton
            .vertices
            .iter()
            .filter(|vx| vx.multi_face)
            .map(|vx| {
                let face = vx.faces[0];
                let p = skeleton.faces[face].to_local_2d(&vx.point);
                let t = seq.locator.locate(space, face, &p);
                let (a, b) = seq.field(face, t, &p);
                VertexRigid { point: vx.point, a, b }
            })
            .collect();
        Ok(seq)
    }

    /// V and ∇̂V in global components on triangle `t` of face `face`.
    fn field(&self, face: usize, t: usize, p: &Point2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let values = self.space.evaluate(&self.v, face, t, p);
        (self.space.rotations[face] * values.u, self.space.hat_gradient_at(&self.v, face, t, p))
    }

    fn radius(&self) -> f64 {
        self.space.skeleton.eta0 * self.delta
    }

    fn freeze(&self, face: usize, x: &Point3<f64>) -> Frozen {
        let skeleton = &self.space.skeleton;
        let p = skeleton.faces[face].to_local_2d(x);
        let tri = self.locator.locate(self.space, face, &p);
        let edges = self
            .edges
            .iter()
            .filter(|&&k| skeleton.edges[k].distance(x) < 2.0 * self.radius() * (1.0 + 1e-9))
            .map(|&k| {
                let e = &skeleton.edges[k];
                let f = e.incident_faces[0];
                let j = e.point_at(e.project(x));
                let t = self.locator.locate(self.space, f, &skeleton.faces[f].to_local_2d(&j));
                (k, f, t)
            })
            .collect();
        Frozen { tri, edges }
    }

    fn eval_frozen(&self, face: usize, x: &Point3<f64>, fr: &Frozen) -> Vector3<f64> {
        let skeleton = &self.space.skeleton;
        let fc = &skeleton.faces[face];
        let loc = fc.to_local(x);
        let (v, hat) = self.field(face, fr.tri, &Point2::new(loc.x, loc.y));
        let mut w = (v + hat.cross(&(fc.e3 * loc.z))) / self.delta;
        for &(k, f, t) in &fr.edges {
            let e = &skeleton.edges[k];
            let m = cutoff(e.distance(x) / self.radius());
            if m < 1.0 {
                let j = e.point_at(e.project(x));
                let (a, b) = self.field(f, t, &skeleton.faces[f].to_local_2d(&j));
                let erd = (a + b.cross(&(x - j))) / self.delta;
                w = erd * (1.0 - m) + w * m;
            }
        }
        for vr in &self.vertices {
            let m = cutoff((x - vr.point).norm() / self.radius());
            if m < 1.0 {
                let r = (vr.a + vr.b.cross(&(x - vr.point))) / self.delta;
                w = r * (1.0 - m) + w * m;
            }
        }
        w
    }

    /// W_δ at a global point of the plate over face `face` (index into
    /// `faces`), in global components.
    pub fn eval(&self, face: usize, x: &Point3<f64>) -> Vector3<f64> {
        let fr = self.freeze(face, x);
        self.eval_frozen(face, x, &fr)
    }

    /// ∇W_δ in face-local components and coordinates, by central differences
    /// on the polynomial pieces of the base point.
    pub fn local_gradient(&self, face: usize, x: &Point3<f64>) -> Matrix3<f64> {
        let fc = &self.space.skeleton.faces[face];
        let r = fc.rotation();
        let fr = self.freeze(face, x);
        let eps = 1e-5 * self.delta;
        let mut grad = Matrix3::zeros();
        for j in 0..3 {
            let dx = r.column(j) * eps;
            let d = (self.eval_frozen(face, &(x + dx), &fr) - self.eval_frozen(face, &(x - dx), &fr)) / (2.0 * eps);
            grad.set_column(j, &(r.transpose() * d));
        }
        grad
    }

    /// W_δ at the nodes of the junction mesh for this δ; clamped nodes are
    /// zero.
    pub fn sample(&self, params: &MeshParams) -> Result<DisplacementSample3D> {
        let skeleton = &self.space.skeleton;
        let mesh = build_junction_mesh(skeleton, self.delta, params)?;
        let mut sample = mesh.template.clone();
        sample.modes = None;
        for (p, g) in mesh.template.plates.iter().enumerate() {
            let face = mesh.face_of_plate[p];
            sample.values[p] = (0..g.n_nodes())
                .into_par_iter()
                .map(|n| match mesh.node_dof[p][n] {
                    NodeDof::Fixed => Vector3::zeros(),
                    _ => self.eval(face, &g.global_node(n)),
                })
                .collect();
        }
        Ok(sample)
    }

    /// Distances of the unfolded strains of W_δ to (−t₃∂²V₃, 0), integrated
    /// over the active cells of the junction mesh, outside the junction
    /// neighbourhoods {dist(x̂, J) < η0δ}.
    pub fn distances(&self, params: &MeshParams) -> Result<RecoveryDistances> {
        let skeleton = &self.space.skeleton;
        let mesh = build_junction_mesh(skeleton, self.delta, params)?;
        let sample = &mesh.template;
        let mut acc = [0.0; 3];
        for (p, g) in sample.plates.iter().enumerate() {
            let face = mesh.face_of_plate[p];
            let parts: Vec<[f64; 3]> = (0..g.n_cells())
                .into_par_iter()
                .filter(|&c| sample.active[p][c])
                .map(|c| {
                    let (i, j, k) = g.cell_ijk(c);
                    let mid = g.cell_center_local(i, j, k);
                    if near_junction(skeleton, &g.to_global(&Vector3::new(mid.x, mid.y, 0.0)), self.delta) {
                        return [0.0; 3];
                    }
                    let kin = g.cell_kinematics(i, j, k);
                    let mut a = [0.0; 3];
                    for q in 0..8 {
                        let shape = hex_shape(&kin.points[q]);
                        let xl: Vector3<f64> = (0..8).map(|m| kin.nodes[m] * shape[m]).sum();
                        let x = g.to_global(&xl);
                        let w = kin.weights[q] / self.delta;
                        let gamma = sym(&self.local_gradient(face, &x));
                        let pt = Point2::new(xl.x, xl.y);
                        let hess = self.space.evaluate(&self.v, face, self.locator.locate(self.space, face, &pt), &pt).hess_w;
                        let limit = -hess * (xl.z / self.delta);
                        a[0] += w * (gamma.fixed_view::<2, 2>(0, 0) - limit).norm_squared();
                        a[1] += w * (2.0 * (gamma[(0, 2)].powi(2) + gamma[(1, 2)].powi(2)) + gamma[(2, 2)].powi(2));
                        a[2] += w * limit.norm_squared();
                    }
                    a
                })
                .collect();
            for a in parts {
                for k in 0..3 {
                    acc[k] += a[k];
                }
            }
        }
        Ok(RecoveryDistances { delta: self.delta, ab: acc[0].sqrt(), k3: acc[1].sqrt(), reference: acc[2].sqrt() })
    }
}

/// Builds W_δ after checking V ∈ 𝒟_I and samples it on the junction mesh.
pub fn recovery_sequence(
    space: &XSpace,
    basis: &InextensionalBasis,
    v: &[f64],
    delta: f64,
    params: &MeshParams,
) -> Result<DisplacementSample3D> {
    RecoverySequence::new(space, basis, v, delta)?.sample(params)
}

/// P1 nodal values (global components) of a function of the global point.
pub fn p1_interpolate<F>(space: &XSpace, f: F) -> Vec<Vector3<f64>>
where
    F: Fn(&Point3<f64>) -> Vector3<f64>,
{
    space.mesh.nodes.iter().map(f).collect()
}

fn p1_at(space: &XSpace, locator: &TriangleLocator, v: &[Vector3<f64>], face: usize, p: &Point2<f64>) -> Vector3<f64> {
    let fm = &space.mesh.faces[face];
    let t = locator.locate(space, face, p);
    let q = fm.triangle_points(t);
    let area2 = 2.0 * fm.triangle_area(t);
    (0..3)
        .map(|k| {
            let a = q[(k + 1) % 3];
            let b = q[(k + 2) % 3];
            v[fm.node_global[fm.triangles[t][k]]] * ((b - a).perp(&(p - a)) / area2)
        })
        .sum()
}

/// Subtriangle centroids and weights of a uniform n×n split.
fn subtriangle_points(p: &[Point2<f64>; 3], area: f64, n: usize) -> Vec<(Point2<f64>, f64)> {
    let w = area / (n * n) as f64;
    let mut out = Vec::with_capacity(n * n);
    let nf = n as f64;
    for i in 0..n {
        for j in 0..n - i {
            let l = |a: f64, b: f64| [1.0 - (a + b) / nf, a / nf, b / nf];
            let up = [l(i as f64, j as f64), l(i as f64 + 1.0, j as f64), l(i as f64, j as f64 + 1.0)];
            let c: [f64; 3] = std::array::from_fn(|k| (up[0][k] + up[1][k] + up[2][k]) / 3.0);
            out.push((barycentric_point(p, &c), w));
            if j + i + 1 < n {
                let down = [l(i as f64 + 1.0, j as f64), l(i as f64 + 1.0, j as f64 + 1.0), l(i as f64, j as f64 + 1.0)];
                let c: [f64; 3] = std::array::from_fn(|k| (down[0][k] + down[1][k] + down[2][k]) / 3.0);
                out.push((barycentric_point(p, &c), w));
            }
        }
    }
    out
}

/// Mean of a P1 field over B(A, r) ∩ S.
fn ball_mean(space: &XSpace, v: &[Vector3<f64>], a: &Point3<f64>, r: f64) -> Vector3<f64> {
    let mut sum = Vector3::zeros();
    let mut area = 0.0;
    for (face, fm) in space.mesh.faces.iter().enumerate() {
        let fc = &space.skeleton.faces[face];
        for t in 0..fm.triangles.len() {
            let p = fm.triangle_points(t);
            let reach = (0..3).map(|k| (p[k] - p[(k + 1) % 3]).norm()).fold(0.0, f64::max);
            let c = barycentric_point(&p, &[1.0 / 3.0; 3]);
            if (fc.to_global(c.x, c.y, 0.0) - a).norm() > r + reach {
                continue;
            }
            let vals = fm.triangles[t].map(|n| v[fm.node_global[n]]);
            let area2 = 2.0 * fm.triangle_area(t);
            for (q, w) in subtriangle_points(&p, fm.triangle_area(t), 8) {
                if (fc.to_global(q.x, q.y, 0.0) - a).norm() >= r {
                    continue;
                }
                let val: Vector3<f64> = (0..3)
                    .map(|k| {
                        let (e0, e1) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                        vals[k] * ((e1 - e0).perp(&(q - e0)) / area2)
                    })
                    .sum();
                sum += val * w;
                area += w;
            }
        }
    }
    if area > 0.0 {
        sum / area
    } else {
        Vector3::zeros()
    }
}

/// Transverse mean V_{δ,J}(s): average over the segments of length δ
/// entering each incident face perpendicularly to J at J(s).
fn transverse_mean(space: &XSpace, locator: &TriangleLocator, v: &[Vector3<f64>], edge: usize, s: f64, delta: f64) -> Vector3<f64> {
    let skeleton = &space.skeleton;
    let e = &skeleton.edges[edge];
    let j = e.point_at(s);
    let (nodes, weights) = gauss_legendre_8();
    let mut sum = Vector3::zeros();
    let mut total = 0.0;
    for &face in &e.incident_faces {
        let fc = &skeleton.faces[face];
        let centroid = fc.polygon.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / fc.polygon.len() as f64;
        let mut n = fc.e3.cross(&e.direction);
        if n.dot(&(centroid - j.coords)) < 0.0 {
            n = -n;
        }
        for (xi, w) in nodes.iter().zip(&weights) {
            let x = j + n * (0.5 * delta * (1.0 + xi));
            let p = fc.to_local_2d(&x);
            if !fc.contains_local(&p, skeleton.tol) {
                continue;
            }
            sum += p1_at(space, locator, v, face, &p) * *w;
            total += w;
        }
    }
    if total > 0.0 {
        sum / total
    } else {
        Vector3::zeros()
    }
}

fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    let x = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    let w = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    ([-x[3], -x[2], -x[1], -x[0], x[0], x[1], x[2], x[3]], [w[3], w[2], w[1], w[0], w[0], w[1], w[2], w[3]])
}

/// Test sequence V_δ of a P1 skeleton field (global components per mesh
/// node): near each vertex of 𝒩 the field is blended toward its mean over
/// B(A, δ), then near each junction edge toward its transverse mean V_{δ,J}
/// and near each clamped edge toward 0, with cutoff(dist/δ).
pub fn test_sequence(space: &XSpace, v: &[Vector3<f64>], delta: f64) -> Vec<Vector3<f64>> {
    let skeleton = &space.skeleton;
    let nodes = &space.mesh.nodes;
    let mut out = v.to_vec();
    for vx in skeleton.vertices.iter().filter(|vx| vx.multi_face) {
        let mean = ball_mean(space, v, &vx.point, delta);
        for (g, x) in nodes.iter().enumerate() {
            let m = cutoff((x - vx.point).norm() / delta);
            out[g] = mean * (1.0 - m) + out[g] * m;
        }
    }
    let locator = TriangleLocator::new(space);
    let stage = out.clone();
    for (k, e) in skeleton.edges.iter().enumerate() {
        if !(e.clamped || e.is_junction()) {
            continue;
        }
        let updated: Vec<Option<Vector3<f64>>> = nodes
            .par_iter()
            .map(|x| {
                let m = cutoff(e.distance(x) / delta);
                if m >= 1.0 {
                    return None;
                }
                let mean = if e.clamped { Vector3::zeros() } else { transverse_mean(space, &locator, &stage, k, e.project(x), delta) };
                Some(mean * (1.0 - m))
            })
            .collect();
        for (g, u) in updated.into_iter().enumerate() {
            if let Some(part) = u {
                let m = cutoff(e.distance(&nodes[g]) / delta);
                out[g] = part + out[g] * m;
            }
        }
    }
    out
}

/// H¹(S) norm of the difference of two P1 skeleton fields.
pub fn p1_h1_distance(space: &XSpace, a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let mut total = 0.0;
    for fm in &space.mesh.faces {
        for (t, tri) in fm.triangles.iter().enumerate() {
            let d = tri.map(|n| a[fm.node_global[n]] - b[fm.node_global[n]]);
            let area = fm.triangle_area(t);
            let g = p1_gradients(&fm.triangle_points(t));
            let mut mass = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    mass += d[i].dot(&d[j]) * if i == j { 2.0 } else { 1.0 };
                }
            }
            total += mass * area / 12.0;
            let grad: nalgebra::Matrix3x2<f64> = (0..3).map(|k| d[k] * g[k].transpose()).sum();
            total += grad.norm_squared() * area;
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mesh::MeshOptions;
    use crate::skeleton::Skeleton;
    use crate::spaces::{build_spaces, limit_inextensional_basis};

    fn pair(h: f64) -> XSpace {
        build_spaces(&Skeleton::from_file(&fixtures::right_angle_pair()).unwrap(), &MeshOptions::new(h)).unwrap()
    }

    const PARAMS: MeshParams = MeshParams { mesh_size: 1.0 / 16.0, nz: 5 };

    #[test]
    fn zero_field_gives_zero_sequence() {
        let x = pair(0.125);
        let b = limit_inextensional_basis(&x).unwrap();
        let s = recovery_sequence(&x, &b, &vec![0.0; x.n_dofs], 0.1, &PARAMS).unwrap();
        assert!(s.values.iter().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn stretching_field_is_rejected() {
        let x = pair(0.125);
        let b = limit_inextensional_basis(&x).unwrap();
        let v = fixtures::interpolate_global(
            &x,
            |_, p| Vector3::new(p.x * (1.0 - p.y), 0.0, 0.0),
            |_, p| Matrix3::new(1.0 - p.y, -p.x, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        );
        assert!(matches!(RecoverySequence::new(&x, &b, &v, 0.1), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn hinge_sequence_is_rigid_near_vertices_and_single_valued() {
        let x = pair(1.0 / 16.0);
        let b = limit_inextensional_basis(&x).unwrap();
        let v = fixtures::right_angle_bent_hinge(&x, 0.1);
        let delta = 0.1;
        let seq = RecoverySequence::new(&x, &b, &v, delta).unwrap();
        let sample = seq.sample(&PARAMS).unwrap();
        assert!(sample.stitch_mismatch() < 1e-12);
        let r = x.skeleton.eta0 * delta;
        for vx in x.skeleton.vertices.iter().filter(|v| v.multi_face) {
            let a = vx.point;
            let (va, ha) = (Vector3::new(0.0, 0.0, 0.1), Vector3::new(-0.2, 0.0, 0.0));
            for (p, g) in sample.plates.iter().enumerate() {
                for n in 0..g.n_nodes() {
                    let xn = g.global_node(n);
                    if (xn - a).norm() < r {
                        let rigid = (va + ha.cross(&(xn - a))) / delta;
                        assert!((sample.values[p][n] - rigid).norm() < 1e-9, "{:?}", xn);
                    }
                }
            }
        }
    }

    #[test]
    fn hinge_strain_distances_decrease() {
        let x = pair(1.0 / 16.0);
        let b = limit_inextensional_basis(&x).unwrap();
        let v = fixtures::right_angle_bent_hinge(&x, 0.1);
        let d: Vec<RecoveryDistances> =
            [0.2, 0.1, 0.05].iter().map(|&delta| RecoverySequence::new(&x, &b, &v, delta).unwrap().distances(&PARAMS).unwrap()).collect();
        assert!(d.windows(2).all(|w| w[1].ab < w[0].ab && w[1].k3 < w[0].k3), "{d:?}");
        assert!(d.iter().all(|r| r.reference > 0.1));
    }

    fn fine_pair() -> XSpace {
        build_spaces(&Skeleton::from_file(&fixtures::right_angle_pair()).unwrap(), &MeshOptions::uniform(1.0 / 48.0)).unwrap()
    }

    #[test]
    fn test_sequence_keeps_locally_constant_fields() {
        let x = fine_pair();
        let a = nalgebra::Point3::origin();
        let c = Vector3::new(0.3, -0.2, 0.5);
        let v = p1_interpolate(&x, |p| c + Vector3::new(1.0, 2.0, -1.0) * ((p - a).norm() - 0.5).max(0.0).powi(2));
        let delta = 0.1;
        let vd = test_sequence(&x, &v, delta);
        for (g, p) in x.mesh.nodes.iter().enumerate() {
            if (p - a).norm() < delta {
                assert!((vd[g] - v[g]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn test_sequence_vanishes_on_clamped_edges() {
        let x = fine_pair();
        let v = p1_interpolate(&x, |p| Vector3::new((1.0 - p.y) * p.x, (1.0 - p.y) * p.z, (1.0 - p.y).powi(2)));
        let vd = test_sequence(&x, &v, 0.1);
        for (g, &clamped) in x.mesh.clamped.iter().enumerate() {
            if clamped {
                assert_eq!(vd[g], Vector3::zeros());
            }
        }
    }

    #[test]
    fn test_sequence_h1_distance_decreases() {
        let x = fine_pair();
        let v = p1_interpolate(&x, |p| {
            Vector3::new((1.0 - p.y) * (3.0 * p.x).sin(), (1.0 - p.y) * (2.0 * p.z).cos(), (1.0 - p.y) * (p.x * p.z + 1.0))
        });
        let d: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&delta| p1_h1_distance(&x, &test_sequence(&x, &v, delta), &v)).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    }

    #[test]
    fn subtriangles_cover_the_triangle() {
        let p = [Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(0.0, 1.0)];
        let pts = subtriangle_points(&p, 1.0, 5);
        assert_eq!(pts.len(), 25);
        assert!((pts.iter().map(|q| q.1).sum::<f64>() - 1.0).abs() < 1e-14);
        let cx: f64 = pts.iter().map(|q| q.0.x * q.1).sum();
        assert!((cx - 2.0 / 3.0).abs() < 1e-14);
    }
}
