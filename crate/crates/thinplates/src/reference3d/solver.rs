//! Trilinear hexahedra enriched with incompatible modes, statically
//! condensed, for the variational problem on S_δ.

use nalgebra::{Cholesky, Matrix3, Point2, Point3, SMatrix, SVector, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{gauss_points_2, hex_shape, CellKinematics, DisplacementSample3D, Material};
use crate::limit_solvers::ForceModel;
use crate::linalg::{self, SpdSolver, TripletBuilder};
use crate::skeleton::Skeleton;

use super::mesher::{build_junction_mesh, JunctionMesh, MeshParams, NodeDof};

type Mat33 = SMatrix<f64, 33, 33>;
type Vec33 = SVector<f64, 33>;
type Mat24 = SMatrix<f64, 24, 24>;
type Vec24 = SVector<f64, 24>;

/// The 3D elasticity problem on the stitched mesh of S_δ.
#[derive(Debug, Clone)]
pub struct Structure3DProblem {
    pub skeleton: Skeleton,
    pub delta: f64,
    pub material: Material,
    pub forces: ForceModel,
    pub params: MeshParams,
    pub mesh: JunctionMesh,
}

impl Structure3DProblem {
    pub fn new(skeleton: &Skeleton, material: &Material, forces: &ForceModel, delta: f64, params: &MeshParams) -> Result<Self> {
        forces.check_faces(skeleton)?;
        let mesh = build_junction_mesh(skeleton, delta, params)?;
        Ok(Self { skeleton: skeleton.clone(), delta, material: *material, forces: forces.clone(), params: *params, mesh })
    }

    /// F_δ at a global point: the sum over the slabs containing it.
    pub fn volume_force(&self, x: &Point3<f64>) -> Vector3<f64> {
        let mut f = Vector3::zeros();
        for (fi, face) in self.skeleton.faces.iter().enumerate() {
            let l = face.to_local(x);
            let p = Point2::new(l.x, l.y);
            if l.z.abs() < self.delta && face.contains_local(&p, 0.0) {
                f += self.forces.volume_force(&self.skeleton, fi, &p, self.delta);
            }
        }
        f
    }

    /// Number of scalar unknowns.
    pub fn n_dofs(&self) -> usize {
        3 * self.mesh.n_free
    }
}

/// Solved displacement and diagnostics.
#[derive(Debug, Clone)]
pub struct Solution3D {
    /// u_δ (global components) with incompatible-mode amplitudes.
    pub sample: DisplacementSample3D,
    /// ℰ(u_δ, S_δ) = ∫ γ_ij γ_ij.
    pub energy: f64,
    /// ∫ σ:γ.
    pub stiffness_energy: f64,
    /// ∫ F_δ · u_δ.
    pub work: f64,
    /// ‖K u − f‖ / ‖f‖ of the condensed system.
    pub relative_residual: f64,
    pub n_dofs: usize,
}

impl Solution3D {
    /// |stiffness(u,u) − load(u)| relative to the load.
    pub fn energy_identity_error(&self) -> f64 {
        if self.work == 0.0 {
            self.stiffness_energy.abs()
        } else {
            (self.stiffness_energy - self.work).abs() / self.work.abs()
        }
    }
}

/// Element matrices of one cell in local components: 24 nodal unknowns
/// followed by 9 mode amplitudes (index 3a + i).
fn element(kin: &CellKinematics, material: &Material, force_local: &[Vector3<f64>; 8]) -> (Mat33, Vec33) {
    let (lambda, mu) = (material.lambda, material.mu);
    let gp = gauss_points_2();
    let mut k = Mat33::zeros();
    let mut f = Vec33::zeros();
    for g in 0..8 {
        let w = kin.weights[g];
        let mg = kin.mode_gradients(g);
        let grads: [Vector3<f64>; 11] = std::array::from_fn(|a| if a < 8 { kin.grads[g][a] } else { mg[a - 8] });
        for a in 0..11 {
            let da = grads[a];
            for b in 0..11 {
                let db = grads[b];
                let block = da * db.transpose() * lambda + Matrix3::identity() * (mu * da.dot(&db)) + db * da.transpose() * mu;
                for i in 0..3 {
                    for j in 0..3 {
                        k[(3 * a + i, 3 * b + j)] += w * block[(i, j)];
                    }
                }
            }
        }
        let xi = gp[g].0;
        let n = hex_shape(&xi);
        for a in 0..8 {
            for i in 0..3 {
                f[3 * a + i] += w * n[a] * force_local[g][i];
            }
        }
        for m in 0..3 {
            let bubble = 1.0 - xi[m] * xi[m];
            for i in 0..3 {
                f[24 + 3 * m + i] += w * bubble * force_local[g][i];
            }
        }
    }
    (k, f)
}

/// Condensed element: K_c = K_uu − K_ua K_aa⁻¹ K_au and f_c, plus the
/// recovery maps α = A f − B u.
struct Condensed {
    k: Mat24,
    f: Vec24,
    kaa_inv_kau: SMatrix<f64, 9, 24>,
    kaa_inv_fa: SVector<f64, 9>,
    f_full: Vec33,
}

fn condense(k: &Mat33, f: &Vec33) -> Result<Condensed> {
    let kuu: Mat24 = k.fixed_view::<24, 24>(0, 0).into_owned();
    let kua: SMatrix<f64, 24, 9> = k.fixed_view::<24, 9>(0, 24).into_owned();
    let kaa: SMatrix<f64, 9, 9> = k.fixed_view::<9, 9>(24, 24).into_owned();
    let chol = Cholesky::new(kaa).ok_or_else(|| Error::Solver("singular incompatible-mode block".into()))?;
    let kaa_inv_kau = chol.solve(&kua.transpose());
    let fa: SVector<f64, 9> = f.fixed_rows::<9>(24).into_owned();
    let kaa_inv_fa = chol.solve(&fa);
    let fu: Vec24 = f.fixed_rows::<24>(0).into_owned();
    Ok(Condensed { k: kuu - kua * kaa_inv_kau, f: fu - kua * kaa_inv_fa, kaa_inv_kau, kaa_inv_fa, f_full: *f })
}

/// Local-to-global rotation of the 24 nodal unknowns.
fn rotate(c: &Condensed, r: &Matrix3<f64>) -> (Mat24, Vec24) {
    let mut t = Mat24::zeros();
    for a in 0..8 {
        t.fixed_view_mut::<3, 3>(3 * a, 3 * a).copy_from(r);
    }
    (t * c.k * t.transpose(), t * c.f)
}

fn cell_condensed(problem: &Structure3DProblem, p: usize, c: usize) -> Result<Condensed> {
    let g = &problem.mesh.template.plates[p];
    let (i, j, k) = g.cell_ijk(c);
    let kin = g.cell_kinematics(i, j, k);
    let rt = g.rotation.transpose();
    let gp = gauss_points_2();
    let force: [Vector3<f64>; 8] = std::array::from_fn(|q| {
        let n = hex_shape(&gp[q].0);
        let x: Vector3<f64> = (0..8).map(|a| kin.nodes[a] * n[a]).sum();
        rt * problem.volume_force(&g.to_global(&x))
    });
    let (km, fm) = element(&kin, &problem.material, &force);
    condense(&km, &fm)
}

/// Solves the problem with u = 0 on Γ_{0,δ}.
pub fn solve_3d(problem: &Structure3DProblem) -> Result<Solution3D> {
    solve_3d_prescribed(problem, &|_, _, _| None)
}

/// Solves with additional prescribed nodal values: `prescribed(plate,
/// node, x)` returns the global displacement of a node to fix, or `None`.
/// Nodes on Γ_{0,δ} stay at zero.
pub fn solve_3d_prescribed(
    problem: &Structure3DProblem,
    prescribed: &(dyn Fn(usize, usize, &Point3<f64>) -> Option<Vector3<f64>> + Sync),
) -> Result<Solution3D> {
    let mesh = &problem.mesh;
    let plates = &mesh.template.plates;
    // Node roles with the extra prescriptions folded in; free nodes renumbered.
    let mut fixed_value: Vec<Vec<Option<Vector3<f64>>>> = Vec::with_capacity(plates.len());
    let mut role: Vec<Vec<NodeDof>> = mesh.node_dof.clone();
    {
        let mut remap = vec![None; mesh.n_free];
        let mut forced: Vec<Option<Vector3<f64>>> = vec![None; mesh.n_free];
        for (p, g) in plates.iter().enumerate() {
            for n in 0..g.n_nodes() {
                if let NodeDof::Free(d) = mesh.node_dof[p][n] {
                    if let Some(v) = prescribed(p, n, &g.global_node(n)) {
                        forced[d] = Some(v);
                    }
                }
            }
        }
        let mut next = 0;
        for d in 0..mesh.n_free {
            if forced[d].is_none() {
                remap[d] = Some(next);
                next += 1;
            }
        }
        for (p, g) in plates.iter().enumerate() {
            let mut fv = vec![None; g.n_nodes()];
            for n in 0..g.n_nodes() {
                match mesh.node_dof[p][n] {
                    NodeDof::Free(d) => match remap[d] {
                        Some(e) => role[p][n] = NodeDof::Free(e),
                        None => {
                            role[p][n] = NodeDof::Fixed;
                            fv[n] = forced[d];
                        }
                    },
                    NodeDof::Fixed => fv[n] = Some(Vector3::zeros()),
                    NodeDof::Inactive => {}
                }
            }
            fixed_value.push(fv);
        }
    }
    let n_free = role.iter().flatten().filter_map(|d| if let NodeDof::Free(e) = d { Some(*e + 1) } else { None }).max().unwrap_or(0);
    let n = 3 * n_free;
    check_clamping(problem, &role)?;

    let mut kb = TripletBuilder::new(n, n);
    let mut rhs = vec![0.0; n];
    for (p, g) in plates.iter().enumerate() {
        let cells: Vec<usize> = (0..g.n_cells()).filter(|&c| mesh.template.active[p][c]).collect();
        let elems: Vec<(usize, Mat24, Vec24)> = cells
            .par_iter()
            .map(|&c| {
                let cond = cell_condensed(problem, p, c)?;
                let (k, f) = rotate(&cond, &g.rotation);
                Ok((c, k, f))
            })
            .collect::<Result<_>>()?;
        for (c, k, f) in elems {
            let (i, j, kk) = g.cell_ijk(c);
            let nodes = g.cell_nodes(i, j, kk);
            for a in 0..8 {
                let NodeDof::Free(da) = role[p][nodes[a]] else { continue };
                for r in 0..3 {
                    rhs[3 * da + r] += f[3 * a + r];
                }
                for b in 0..8 {
                    match role[p][nodes[b]] {
                        NodeDof::Free(db) => {
                            for r in 0..3 {
                                for s in 0..3 {
                                    kb.push(3 * da + r, 3 * db + s, k[(3 * a + r, 3 * b + s)]);
                                }
                            }
                        }
                        NodeDof::Fixed => {
                            if let Some(v) = fixed_value[p][nodes[b]] {
                                for r in 0..3 {
                                    for s in 0..3 {
                                        rhs[3 * da + r] -= k[(3 * a + r, 3 * b + s)] * v[s];
                                    }
                                }
                            }
                        }
                        NodeDof::Inactive => {}
                    }
                }
            }
        }
    }
    let kmat = kb.build();
    let rhs_norm = linalg::norm(&rhs);
    let (u, relative_residual) = if n == 0 || rhs_norm == 0.0 {
        (vec![0.0; n], 0.0)
    } else {
        let solver = SpdSolver::new(&kmat).map_err(|e| Error::Solver(format!("3D stiffness is singular (insufficient clamping?): {e}")))?;
        let mut u = solver.solve(&rhs)?;
        let mut res: Vec<f64> = linalg::matvec(&kmat, &u).iter().zip(&rhs).map(|(a, b)| b - a).collect();
        if linalg::norm(&res) > 1e-12 * rhs_norm {
            let du = solver.solve(&res)?;
            for (a, b) in u.iter_mut().zip(&du) {
                *a += b;
            }
            res = linalg::matvec(&kmat, &u).iter().zip(&rhs).map(|(a, b)| b - a).collect();
        }
        let rel = linalg::norm(&res) / rhs_norm;
        if !(rel < 1e-9) {
            return Err(Error::Solver(format!("3D solve residual {rel:e} exceeds 1e-9")));
        }
        (u, rel)
    };

    let mut sample = mesh.template.clone();
    for (p, g) in plates.iter().enumerate() {
        for node in 0..g.n_nodes() {
            sample.values[p][node] = match role[p][node] {
                NodeDof::Free(d) => Vector3::new(u[3 * d], u[3 * d + 1], u[3 * d + 2]),
                NodeDof::Fixed => fixed_value[p][node].unwrap_or_else(Vector3::zeros),
                NodeDof::Inactive => Vector3::zeros(),
            };
        }
    }
    // Mode amplitudes and the work of the full (uncondensed) load.
    let mut modes = Vec::with_capacity(plates.len());
    let mut work = 0.0;
    for (p, g) in plates.iter().enumerate() {
        let parts: Vec<([f64; 9], f64)> = (0..g.n_cells())
            .into_par_iter()
            .map(|c| {
                if !sample.active[p][c] {
                    return Ok(([0.0; 9], 0.0));
                }
                let cond = cell_condensed(problem, p, c)?;
                let (i, j, k) = g.cell_ijk(c);
                let vals = sample.cell_values_local(p, i, j, k);
                let ul = Vec24::from_fn(|r, _| vals[r / 3][r % 3]);
                let alpha = cond.kaa_inv_fa - cond.kaa_inv_kau * ul;
                let w = cond.f_full.fixed_rows::<24>(0).dot(&ul) + cond.f_full.fixed_rows::<9>(24).dot(&alpha);
                Ok((std::array::from_fn(|r| alpha[r]), w))
            })
            .collect::<Result<_>>()?;
        let mut m = Vec::with_capacity(parts.len());
        for (a, w) in parts {
            m.push(a);
            work += w;
        }
        modes.push(m);
    }
    sample.modes = Some(modes);
    fill_inactive(&mut sample, &role, &problem.skeleton);

    let all = |_: &crate::fields::CellInfo| true;
    let energy = sample.energy_e(&all).value;
    let stiffness_energy = sample.elastic_energy(&problem.material, &all).value;
    Ok(Solution3D { sample, energy, stiffness_energy, work, relative_residual, n_dofs: n })
}

/// Every group of plates connected through shared nodes must hold a
/// prescribed node; otherwise rigid motions make the system singular.
fn check_clamping(problem: &Structure3DProblem, role: &[Vec<NodeDof>]) -> Result<()> {
    let np = role.len();
    let mut group: Vec<usize> = (0..np).collect();
    fn root(g: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while g[r] != r {
            r = g[r];
        }
        g[i] = r;
        r
    }
    for st in &problem.mesh.template.stitches {
        let a = root(&mut group, st.master.0);
        let b = root(&mut group, st.slave.0);
        group[a.max(b)] = a.min(b);
    }
    let mut held = vec![false; np];
    for p in 0..np {
        if role[p].contains(&NodeDof::Fixed) {
            let r = root(&mut group, p);
            held[r] = true;
        }
    }
    for p in 0..np {
        let r = root(&mut group, p);
        if !held[r] {
            return Err(Error::Solver(format!(
                "insufficient clamping: plate of face {} can move rigidly",
                problem.mesh.template.plates[p].face_id
            )));
        }
    }
    Ok(())
}

/// Gives nodes of dropped cells the value of the plate owning their
/// location.
fn fill_inactive(sample: &mut DisplacementSample3D, role: &[Vec<NodeDof>], skeleton: &Skeleton) {
    for p in 0..sample.plates.len() {
        for n in 0..sample.plates[p].n_nodes() {
            if role[p][n] != NodeDof::Inactive {
                continue;
            }
            let x = sample.plates[p].global_node(n);
            for q in 0..p {
                let gq = &sample.plates[q];
                let l = gq.to_local(&x);
                let face = &skeleton.faces[q];
                if l.z.abs() <= gq.delta * (1.0 + 1e-12) && face.contains_local(&Point2::new(l.x, l.y), skeleton.tol) {
                    let (s, t) = gq.inverse_map(&Point2::new(l.x, l.y));
                    let v = sample.interpolate_local(q, s.clamp(0.0, 1.0), t.clamp(0.0, 1.0), l.z);
                    sample.values[p][n] = gq.rotation * v;
                    break;
                }
            }
        }
    }
}
