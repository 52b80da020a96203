//! The two limit problems: coupled membrane plates on the extensional
//! space and coupled bending plates on 𝒟_I, with the force model, the
//! admissibility conditions on f_E and the limit stresses.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, Point2, Vector3};
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Material;
use crate::linalg::{self, SpdSolver};
use crate::mesh::MeshOptions;
use crate::skeleton::Skeleton;
use crate::spaces::{
    barycentric_point, build_spaces, inextensional_basis, limit_inextensional_basis, InextensionalBasis, XSpace, MIDPOINT_RULE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    #[default]
    One,
    Sin,
    Cos,
}

/// One-variable factor 1, sin(freq·x) or cos(freq·x).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Factor {
    #[serde(default)]
    pub kind: FactorKind,
    #[serde(default)]
    pub freq: f64,
}

impl Factor {
    pub fn sin(freq: f64) -> Self {
        Self { kind: FactorKind::Sin, freq }
    }

    pub fn cos(freq: f64) -> Self {
        Self { kind: FactorKind::Cos, freq }
    }

    fn eval(&self, x: f64) -> f64 {
        match self.kind {
            FactorKind::One => 1.0,
            FactorKind::Sin => (self.freq * x).sin(),
            FactorKind::Cos => (self.freq * x).cos(),
        }
    }
}

/// coef · x₁^px · x₂^py · fx(x₁) · fy(x₂) in face-local coordinates and
/// components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTerm {
    pub coef: [f64; 3],
    #[serde(default)]
    pub px: i32,
    #[serde(default)]
    pub py: i32,
    #[serde(default)]
    pub fx: Factor,
    #[serde(default)]
    pub fy: Factor,
}

/// A 3-vector field on one face, in face-local components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceField {
    #[default]
    Zero,
    Constant {
        value: [f64; 3],
    },
    Terms {
        terms: Vec<ForceTerm>,
    },
}

impl ForceField {
    pub fn eval(&self, p: &Point2<f64>) -> Vector3<f64> {
        match self {
            ForceField::Zero => Vector3::zeros(),
            ForceField::Constant { value } => Vector3::from(*value),
            ForceField::Terms { terms } => terms.iter().fold(Vector3::zeros(), |acc, t| {
                let s = p.x.powi(t.px) * p.y.powi(t.py) * t.fx.eval(p.x) * t.fy.eval(p.y);
                acc + Vector3::from(t.coef) * s
            }),
        }
    }

    /// The third component vanishes identically.
    pub fn normal_free(&self) -> bool {
        match self {
            ForceField::Zero => true,
            ForceField::Constant { value } => value[2] == 0.0,
            ForceField::Terms { terms } => terms.iter().all(|t| t.coef[2] == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaceLoad {
    #[serde(default)]
    pub f_i: ForceField,
    #[serde(default)]
    pub f_e: ForceField,
}

/// Per-face forces keyed by face id: F_δ = δ f_I + f_E on each plate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceModel {
    pub faces: BTreeMap<usize, FaceLoad>,
}

impl ForceModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_face(mut self, id: usize, f_i: ForceField, f_e: ForceField) -> Self {
        self.faces.insert(id, FaceLoad { f_i, f_e });
        self
    }

    fn load_of(&self, skeleton: &Skeleton, face: usize) -> Option<&FaceLoad> {
        self.faces.get(&skeleton.faces[face].id)
    }

    pub fn f_i(&self, skeleton: &Skeleton, face: usize, p: &Point2<f64>) -> Vector3<f64> {
        self.load_of(skeleton, face).map_or(Vector3::zeros(), |l| l.f_i.eval(p))
    }

    pub fn f_e(&self, skeleton: &Skeleton, face: usize, p: &Point2<f64>) -> Vector3<f64> {
        self.load_of(skeleton, face).map_or(Vector3::zeros(), |l| l.f_e.eval(p))
    }

    /// F_δ in global components at local point `p` of face `face`.
    pub fn volume_force(&self, skeleton: &Skeleton, face: usize, p: &Point2<f64>, delta: f64) -> Vector3<f64> {
        let local = self.f_i(skeleton, face, p) * delta + self.f_e(skeleton, face, p);
        skeleton.faces[face].rotation() * local
    }

    pub fn check_faces(&self, skeleton: &Skeleton) -> Result<()> {
        for id in self.faces.keys() {
            if skeleton.face_index(*id).is_none() {
                return Err(Error::Input(format!("force model refers to unknown face {id}")));
            }
        }
        Ok(())
    }
}

/// Report of the conditions f_{E,3} = 0 and ∫ f_E·V = 0 on (D_{I,0})^⊥.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    /// Face ids with a nonzero normal component of f_E.
    pub normal_violations: Vec<usize>,
    pub complement_dim: usize,
    /// ∫ f_E·V over a ρ-orthonormal basis of (D_{I,0})^⊥, normalized by
    /// ‖f_E‖_{L²}·‖V‖_{L²}.
    pub functionals: Vec<f64>,
    pub max_violation: f64,
    pub tolerance: f64,
    pub admissible: bool,
}

/// Checks the admissibility of f_E against the discrete D_I.
pub fn check_force_admissibility(space: &XSpace, basis: &InextensionalBasis, model: &ForceModel) -> Result<AdmissibilityReport> {
    let tolerance = 1e-10;
    let skel = &space.skeleton;
    let normal_violations: Vec<usize> = model.faces.iter().filter(|(_, l)| !l.f_e.normal_free()).map(|(id, _)| *id).collect();
    // Traces at junction nodes span the complement of D_{I,0}.
    let rows: Vec<usize> = (0..space.mesh.nodes.len())
        .filter(|&g| space.mesh.junction[g])
        .filter_map(|g| space.node_dof[g])
        .flat_map(|d0| d0..d0 + 3)
        .collect();
    let m = basis.dim();
    let mut functionals = Vec::new();
    let mut complement_dim = 0;
    if m > 0 && !rows.is_empty() {
        let dense_rows = DMatrix::from_fn(rows.len(), m, |_, _| 0.0);
        let mut mz = dense_rows;
        let pos: BTreeMap<usize, usize> = rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
        for (i, j, v) in basis.x.triplet_iter() {
            if let Some(&k) = pos.get(&i) {
                mz[(k, j)] += *v;
            }
        }
        let svd = mz.svd(false, true);
        let vt = svd.v_t.unwrap();
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > 1e-10 * smax.max(1e-300)).collect();
        let mut w = DMatrix::zeros(m, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            let col: Vec<f64> = (0..m).map(|j| vt[(k, j)]).collect();
            let s = basis.solve_gram(&col)?;
            for j in 0..m {
                w[(j, c)] = s[j];
            }
        }
        // ρ-orthonormalize the complement columns.
        let gw = linalg::to_dense(&basis.gram) * &w;
        let s = w.transpose() * gw;
        let s = (&s + s.transpose()) * 0.5;
        let eig = s.symmetric_eigen();
        let emax = eig.eigenvalues.max();
        let mass = space.mass();
        let f_e = space.load(|f, p| model.f_e(skel, f, p));
        let f_norm = l2_norm_of_force(space, |f, p| model.f_e(skel, f, p));
        for k in 0..eig.eigenvalues.len() {
            if eig.eigenvalues[k] <= 1e-12 * emax {
                continue;
            }
            complement_dim += 1;
            let c = &w * eig.eigenvectors.column(k) / eig.eigenvalues[k].sqrt();
            let v = basis.to_x(c.as_slice());
            let v_norm = linalg::bilinear(&mass, &v, &v).sqrt();
            let value = linalg::dot(&f_e, &v);
            let denom = f_norm * v_norm;
            functionals.push(if denom > 0.0 { value / denom } else { 0.0 });
        }
    }
    let max_violation = functionals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let admissible = normal_violations.is_empty() && max_violation <= tolerance;
    Ok(AdmissibilityReport { normal_violations, complement_dim, functionals, max_violation, tolerance, admissible })
}

fn l2_norm_of_force<F>(space: &XSpace, f: F) -> f64
where
    F: Fn(usize, &Point2<f64>) -> Vector3<f64>,
{
    let mut s = 0.0;
    for (face, fm) in space.mesh.faces.iter().enumerate() {
        for t in 0..fm.triangles.len() {
            let p = fm.triangle_points(t);
            let a = fm.triangle_area(t);
            for (l, w) in MIDPOINT_RULE {
                s += w * a * f(face, &barycentric_point(&p, &l)).norm_squared();
            }
        }
    }
    s.sqrt()
}

/// Membrane operator on X.
pub fn assemble_membrane(space: &XSpace, material: &Material) -> Result<CsrMatrix<f64>> {
    space.membrane_stiffness(material)
}

#[derive(Debug, Clone, Serialize)]
pub struct MembraneSolution {
    pub u_e: Vec<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
    /// max_V |<U_E, V>_ρ| / (|U_E|_ρ |V|_ρ) over the D_I basis.
    pub orthogonality: f64,
}

/// Solves the membrane problem on the ρ-orthogonal complement of D_I by
/// iterated regularization with (K + εG).
pub fn solve_membrane(
    space: &XSpace,
    basis: &InextensionalBasis,
    operator: &CsrMatrix<f64>,
    model: &ForceModel,
) -> Result<MembraneSolution> {
    let report = check_force_admissibility(space, basis, model)?;
    if !report.normal_violations.is_empty() {
        return Err(Error::Inadmissible(format!("f_E has a normal component on faces {:?}", report.normal_violations)));
    }
    if !report.admissible {
        let (k, v) =
            report.functionals.iter().enumerate().fold((0, 0.0f64), |(bk, bv), (k, v)| if v.abs() > bv.abs() { (k, *v) } else { (bk, bv) });
        return Err(Error::Inadmissible(format!(
            "orthogonality functional {k} of (D_I0)^perp equals {v:.3e} (tolerance {:.1e})",
            report.tolerance
        )));
    }
    let f = space.load(|face, p| model.f_e(&space.skeleton, face, p));
    solve_membrane_load(space, basis, operator, &f)
}

/// Membrane solve for an assembled load vector. The D_I component of the
/// load is removed first, which leaves it unchanged on D_E.
pub fn solve_membrane_load(
    space: &XSpace,
    basis: &InextensionalBasis,
    operator: &CsrMatrix<f64>,
    load: &[f64],
) -> Result<MembraneSolution> {
    let n = space.n_dofs;
    let project_out = |v: &[f64], use_gram_on_input: bool| -> Result<Vec<f64>> {
        if basis.dim() == 0 {
            return Ok(v.to_vec());
        }
        if use_gram_on_input {
            // Functional: F − G T G_I⁻¹ Tᵀ F.
            let c = basis.solve_gram(&linalg::transpose_matvec(&basis.x, v))?;
            let gtc = linalg::matvec(&space.gram, &basis.to_x(&c));
            Ok(v.iter().zip(&gtc).map(|(a, b)| a - b).collect())
        } else {
            // Vector: y − T G_I⁻¹ Tᵀ G y.
            let c = basis.project(space, v)?;
            let tc = basis.to_x(&c);
            Ok(v.iter().zip(&tc).map(|(a, b)| a - b).collect())
        }
    };
    let f = project_out(load, true)?;
    let f_norm = linalg::norm(&f);
    if f_norm == 0.0 {
        return Ok(MembraneSolution { u_e: vec![0.0; n], relative_residual: 0.0, iterations: 0, orthogonality: 0.0 });
    }
    let trace = |a: &CsrMatrix<f64>| a.triplet_iter().filter(|(i, j, _)| i == j).map(|(_, _, v)| *v).sum::<f64>();
    let eps = 1e-6 * trace(operator) / trace(&space.gram);
    let regularized = operator + &(&space.gram * eps);
    let solver = SpdSolver::new(&regularized)?;
    let mut y = vec![0.0; n];
    let mut iterations = 0;
    let mut rel = f64::INFINITY;
    while iterations < 100 {
        let ky = linalg::matvec(operator, &y);
        let r: Vec<f64> = f.iter().zip(&ky).map(|(a, b)| a - b).collect();
        rel = linalg::norm(&r) / f_norm;
        if rel <= 1e-13 {
            break;
        }
        let d = solver.solve(&r)?;
        for i in 0..n {
            y[i] += d[i];
        }
        iterations += 1;
    }
    let y = project_out(&y, false)?;
    let ky = linalg::matvec(operator, &y);
    let r: Vec<f64> = f.iter().zip(&ky).map(|(a, b)| a - b).collect();
    let relative_residual = linalg::norm(&r) / f_norm;
    if relative_residual > 1e-10 {
        return Err(Error::Solver(format!("membrane solve stalled at relative residual {rel:.3e}")));
    }
    let orthogonality = orthogonality(space, basis, &y);
    Ok(MembraneSolution { u_e: y, relative_residual, iterations, orthogonality })
}

fn orthogonality(space: &XSpace, basis: &InextensionalBasis, u: &[f64]) -> f64 {
    let un = linalg::bilinear(&space.gram, u, u).sqrt();
    if un == 0.0 || basis.dim() == 0 {
        return 0.0;
    }
    let gu = linalg::matvec(&space.gram, u);
    let tgu = linalg::transpose_matvec(&basis.x, &gu);
    (0..basis.dim())
        .map(|j| {
            let vn = basis.gram.get_entry(j, j).map_or(0.0, |e| e.into_value()).sqrt();
            tgu[j].abs() / (un * vn)
        })
        .fold(0.0, f64::max)
}

/// Bending operator on X and its restriction to the 𝒟_I basis.
pub struct BendingOperator {
    pub full: CsrMatrix<f64>,
    pub reduced: CsrMatrix<f64>,
}

pub fn assemble_bending(space: &XSpace, basis: &InextensionalBasis, material: &Material) -> Result<BendingOperator> {
    let full = space.bending_stiffness(material)?;
    let reduced = linalg::congruence(&basis.x, &full);
    Ok(BendingOperator { full, reduced })
}

#[derive(Debug, Clone, Serialize)]
pub struct BendingSolution {
    /// 𝒟_I basis coordinates.
    pub coefficients: Vec<f64>,
    pub u_i: Vec<f64>,
    pub relative_residual: f64,
    /// bilinear(U,U) and load(U).
    pub energy: f64,
    pub work: f64,
    pub trivial: bool,
}

pub fn solve_bending(
    space: &XSpace,
    basis: &InextensionalBasis,
    operator: &BendingOperator,
    model: &ForceModel,
) -> Result<BendingSolution> {
    let f = space.load(|face, p| model.f_i(&space.skeleton, face, p));
    solve_bending_load(space, basis, operator, &f)
}

pub fn solve_bending_load(space: &XSpace, basis: &InextensionalBasis, operator: &BendingOperator, load: &[f64]) -> Result<BendingSolution> {
    let m = basis.dim();
    if m == 0 {
        return Ok(BendingSolution {
            coefficients: Vec::new(),
            u_i: vec![0.0; space.n_dofs],
            relative_residual: 0.0,
            energy: 0.0,
            work: 0.0,
            trivial: true,
        });
    }
    let b = linalg::transpose_matvec(&basis.x, load);
    let bn = linalg::norm(&b);
    if bn == 0.0 {
        return Ok(BendingSolution {
            coefficients: vec![0.0; m],
            u_i: vec![0.0; space.n_dofs],
            relative_residual: 0.0,
            energy: 0.0,
            work: 0.0,
            trivial: false,
        });
    }
    let solver = SpdSolver::new(&operator.reduced)?;
    let mut c = solver.solve(&b)?;
    // One step of iterative refinement.
    let r: Vec<f64> = b.iter().zip(linalg::matvec(&operator.reduced, &c)).map(|(a, k)| a - k).collect();
    let d = solver.solve(&r)?;
    for i in 0..m {
        c[i] += d[i];
    }
    let kc = linalg::matvec(&operator.reduced, &c);
    let relative_residual = b.iter().zip(&kc).map(|(a, k)| (a - k).powi(2)).sum::<f64>().sqrt() / bn;
    let u_i = basis.to_x(&c);
    let energy = linalg::dot(&c, &kc);
    let work = linalg::dot(&b, &c);
    Ok(BendingSolution { coefficients: c, u_i, relative_residual, energy, work, trivial: false })
}

/// Limits of the unfolded stresses and of ∂ũ₃/∂t₃ at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StressLimit {
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
    pub du3_dt3: f64,
}

/// Evaluates the stress limits at local point `q` of triangle `t` of face
/// `face` and thickness coordinate `t3`; σ_i3 and ∂ũ_α/∂t₃ vanish.
pub fn limit_stress(
    space: &XSpace,
    u_e: &[f64],
    u_i: &[f64],
    material: &Material,
    face: usize,
    t: usize,
    q: &Point2<f64>,
    t3: f64,
) -> StressLimit {
    let e = space.evaluate(u_e, face, t, q);
    let i = space.evaluate(u_i, face, t, q);
    stress_from_derivatives(material, &e.strain, &i.hess_w, t3)
}

/// (3.18) with the shear term μ(∂₂U_{E,1} + ∂₁U_{E,2} − 2t₃∂₁₂U_{I,3}).
pub fn stress_from_derivatives(
    material: &Material,
    strain: &nalgebra::Matrix2<f64>,
    hess: &nalgebra::Matrix2<f64>,
    t3: f64,
) -> StressLimit {
    let c = material.plane_stress_modulus();
    let nu = material.poisson();
    let (lambda, mu) = (material.lambda, material.mu);
    let a11 = strain[(0, 0)] - t3 * hess[(0, 0)];
    let a22 = strain[(1, 1)] - t3 * hess[(1, 1)];
    let a12 = strain[(0, 1)] - t3 * hess[(0, 1)];
    StressLimit {
        s11: c * (a11 + nu * a22),
        s22: c * (a22 + nu * a11),
        s12: 2.0 * mu * a12,
        du3_dt3: lambda / (lambda + 2.0 * mu) * (-strain[(0, 0)] - strain[(1, 1)] + t3 * hess.trace()),
    }
}

/// Limit problem setup and results.
pub struct LimitSolution {
    pub space: XSpace,
    pub inextensional: InextensionalBasis,
    pub limit_inextensional: InextensionalBasis,
    pub material: Material,
    pub admissibility: AdmissibilityReport,
    pub membrane: MembraneSolution,
    pub bending: BendingSolution,
}

/// Which limit problems to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problems {
    Membrane,
    Bending,
    Both,
}

/// Builds the spaces and solves the requested limit problems.
pub fn solve_limit(
    skeleton: &Skeleton,
    model: &ForceModel,
    material: &Material,
    options: &MeshOptions,
    which: Problems,
) -> Result<LimitSolution> {
    model.check_faces(skeleton)?;
    let space = build_spaces(skeleton, options)?;
    let inextensional = inextensional_basis(&space)?;
    let limit_inextensional = limit_inextensional_basis(&space)?;
    let admissibility = check_force_admissibility(&space, &inextensional, model)?;
    let membrane = if which != Problems::Bending {
        let k = assemble_membrane(&space, material)?;
        solve_membrane(&space, &inextensional, &k, model)?
    } else {
        MembraneSolution { u_e: vec![0.0; space.n_dofs], relative_residual: 0.0, iterations: 0, orthogonality: 0.0 }
    };
    let bending = if which != Problems::Membrane {
        let op = assemble_bending(&space, &limit_inextensional, material)?;
        solve_bending(&space, &limit_inextensional, &op, model)?
    } else {
        solve_bending_load(
            &space,
            &limit_inextensional,
            &BendingOperator { full: CsrMatrix::zeros(0, 0), reduced: CsrMatrix::zeros(0, 0) },
            &vec![0.0; space.n_dofs],
        )?
    };
    Ok(LimitSolution { space, inextensional, limit_inextensional, material: *material, admissibility, membrane, bending })
}

/// Summary values of a limit solution.
#[derive(Debug, Clone, Serialize)]
pub struct LimitSummary {
    pub n_dofs: usize,
    pub inextensional_dim: usize,
    pub limit_inextensional_dim: usize,
    pub max_deflection: f64,
    pub max_membrane_displacement: f64,
    pub bending_energy: f64,
    pub membrane_residual: f64,
    pub bending_residual: f64,
}

impl LimitSolution {
    pub fn summary(&self) -> LimitSummary {
        let mut max_w: f64 = 0.0;
        let mut max_m: f64 = 0.0;
        for face in 0..self.space.n_faces() {
            for v in self.space.nodal_values(&self.bending.u_i, face) {
                max_w = max_w.max(v[2].abs());
            }
            for v in self.space.nodal_values(&self.membrane.u_e, face) {
                max_m = max_m.max(v.norm());
            }
        }
        LimitSummary {
            n_dofs: self.space.n_dofs,
            inextensional_dim: self.inextensional.dim(),
            limit_inextensional_dim: self.limit_inextensional.dim(),
            max_deflection: max_w,
            max_membrane_displacement: max_m,
            bending_energy: self.bending.energy,
            membrane_residual: self.membrane.relative_residual,
            bending_residual: self.bending.relative_residual,
        }
    }

    /// ∇̂U_I at every face node, averaged over the incident triangles.
    pub fn hat_gradient_nodes(&self, face: usize) -> Vec<Vector3<f64>> {
        let fm = &self.space.mesh.faces[face];
        let mut acc = vec![Vector3::zeros(); fm.nodes.len()];
        let mut count = vec![0usize; fm.nodes.len()];
        for (t, tri) in fm.triangles.iter().enumerate() {
            for &n in tri {
                acc[n] += self.space.hat_gradient_at(&self.bending.u_i, face, t, &fm.nodes[n]);
                count[n] += 1;
            }
        }
        acc.iter().zip(&count).map(|(a, c)| a / (*c).max(1) as f64).collect()
    }

    /// Writes `nodes_face<id>.csv` and `stress_face<id>.csv` per face.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for face in 0..self.space.n_faces() {
            let id = self.space.skeleton.faces[face].id;
            let fm = &self.space.mesh.faces[face];
            let mut w = csv::Writer::from_path(dir.join(format!("nodes_face{id}.csv")))?;
            w.write_record(["node", "x", "y", "z", "ue1", "ue2", "ue3", "ui3", "hat1", "hat2", "hat3"])?;
            let ue = self.space.nodal_values(&self.membrane.u_e, face);
            let ui = self.space.nodal_values(&self.bending.u_i, face);
            let hat = self.hat_gradient_nodes(face);
            for n in 0..fm.nodes.len() {
                let x = self.space.mesh.nodes[fm.node_global[n]];
                let vals = [x.x, x.y, x.z, ue[n][0], ue[n][1], ue[n][2], ui[n][2], hat[n][0], hat[n][1], hat[n][2]];
                let mut rec = vec![n.to_string()];
                rec.extend(vals.iter().map(|v| format!("{v:.12e}")));
                w.write_record(&rec)?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_path(dir.join(format!("stress_face{id}.csv")))?;
            w.write_record(["triangle", "x1", "x2", "t3", "s11", "s12", "s22", "du3_dt3"])?;
            for t in 0..fm.triangles.len() {
                let c = barycentric_point(&fm.triangle_points(t), &[1.0 / 3.0; 3]);
                for t3 in [-1.0, 0.0, 1.0] {
                    let s = limit_stress(&self.space, &self.membrane.u_e, &self.bending.u_i, &self.material, face, t, &c, t3);
                    w.write_record([
                        t.to_string(),
                        format!("{:.12e}", c.x),
                        format!("{:.12e}", c.y),
                        format!("{t3}"),
                        format!("{:.12e}", s.s11),
                        format!("{:.12e}", s.s12),
                        format!("{:.12e}", s.s22),
                        format!("{:.12e}", s.du3_dt3),
                    ])?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::{Matrix2, Vector2};

    fn square_space(h: f64) -> XSpace {
        let s = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
        build_spaces(&s, &MeshOptions::new(h)).unwrap()
    }

    fn material() -> Material {
        Material::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn membrane_probes_match_closed_forms() {
        let s = Skeleton::from_file(&fixtures::cantilever_square(1.0)).unwrap();
        let x = build_spaces(&s, &MeshOptions::new(0.25)).unwrap();
        let m = material();
        let k = assemble_membrane(&x, &m).unwrap();
        let (e, nu) = (m.young(), m.poisson());
        // The cantilever clamps x₂ = 0, where both probes vanish.
        let shear = x.interpolate(|_, p| Vector3::new(p.y, 0.0, 0.0), |_, _| Vector2::zeros());
        let v = linalg::bilinear(&k, &shear, &shear);
        assert!((v - e / (2.0 * (1.0 + nu))).abs() < 1e-12);
        let stretch = x.interpolate(|_, p| Vector3::new(0.0, p.y, 0.0), |_, _| Vector2::zeros());
        let v = linalg::bilinear(&k, &stretch, &stretch);
        assert!((v - e / (1.0 - nu * nu)).abs() < 1e-12);
        let m2 = Material::new(2.0, 2.0).unwrap();
        let k2 = assemble_membrane(&x, &m2).unwrap();
        assert!((linalg::bilinear(&k2, &shear, &shear) - 2.0 * linalg::bilinear(&k, &shear, &shear)).abs() < 1e-12);
        assert!(linalg::asymmetry(&k) < 1e-14);
    }

    #[test]
    fn bending_probes_match_closed_forms() {
        let s = Skeleton::from_file(&fixtures::cantilever_square(1.0)).unwrap();
        let x = build_spaces(&s, &MeshOptions::new(0.25)).unwrap();
        let m = material();
        let k = x.bending_stiffness(&m).unwrap();
        let (e, nu) = (m.young(), m.poisson());
        let d = e / (3.0 * (1.0 - nu * nu));
        let q = x.interpolate(|_, p| Vector3::new(0.0, 0.0, p.y * p.y), |_, p| Vector2::new(0.0, 2.0 * p.y));
        assert!((linalg::bilinear(&k, &q, &q) - 4.0 * d).abs() < 1e-10);
        let q = x.interpolate(|_, p| Vector3::new(0.0, 0.0, p.x * p.y), |_, p| Vector2::new(p.y, p.x));
        assert!((linalg::bilinear(&k, &q, &q) - d * (1.0 - nu) * 2.0).abs() < 1e-10);
    }

    #[test]
    fn stress_limits_match_substitutions() {
        let m = material();
        let c = m.plane_stress_modulus();
        let nu = m.poisson();
        let h = Matrix2::new(2.0, 0.0, 0.0, 0.0);
        let s = stress_from_derivatives(&m, &Matrix2::zeros(), &h, 0.5);
        assert!((s.s11 + c * 2.0 * 0.5).abs() < 1e-14);
        assert!((s.s22 + c * 2.0 * nu * 0.5).abs() < 1e-14);
        assert_eq!(s.s12, 0.0);
        let s = stress_from_derivatives(&m, &Matrix2::new(1.0, 0.0, 0.0, 0.0), &Matrix2::zeros(), 0.3);
        assert!((s.du3_dt3 + m.lambda / (m.lambda + 2.0 * m.mu)).abs() < 1e-15);
        let z = stress_from_derivatives(&m, &Matrix2::zeros(), &Matrix2::zeros(), 1.0);
        assert_eq!((z.s11, z.s12, z.s22, z.du3_dt3), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_loads_give_zero_solutions() {
        let x = square_space(0.25);
        let b = inextensional_basis(&x).unwrap();
        let k = assemble_membrane(&x, &material()).unwrap();
        let sol = solve_membrane(&x, &b, &k, &ForceModel::new()).unwrap();
        assert!(sol.u_e.iter().all(|v| *v == 0.0));
        let lb = limit_inextensional_basis(&x).unwrap();
        let op = assemble_bending(&x, &lb, &material()).unwrap();
        let sol = solve_bending(&x, &lb, &op, &ForceModel::new()).unwrap();
        assert!(sol.u_i.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uniform_in_plane_force_on_clamped_face_is_admissible() {
        let x = square_space(0.25);
        let b = inextensional_basis(&x).unwrap();
        let model = ForceModel::new().with_face(1, ForceField::Zero, ForceField::Constant { value: [1.0, 0.0, 0.0] });
        let r = check_force_admissibility(&x, &b, &model).unwrap();
        assert!(r.admissible && r.complement_dim == 0);
        let model = ForceModel::new().with_face(1, ForceField::Zero, ForceField::Constant { value: [0.0, 0.0, 1.0] });
        let r = check_force_admissibility(&x, &b, &model).unwrap();
        assert_eq!(r.normal_violations, vec![1]);
    }

    #[test]
    fn hinge_structure_admissibility() {
        let s = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
        let x = build_spaces(&s, &MeshOptions::new(0.2)).unwrap();
        let b = inextensional_basis(&x).unwrap();
        // Face 2 in-plane load orthogonal to 1 and x₂: passes.
        let legendre = ForceField::Terms {
            terms: vec![
                ForceTerm { coef: [1.0, 0.0, 0.0], px: 0, py: 0, fx: Factor::default(), fy: Factor::default() },
                ForceTerm { coef: [-6.0, 0.0, 0.0], px: 0, py: 1, fx: Factor::default(), fy: Factor::default() },
                ForceTerm { coef: [6.0, 0.0, 0.0], px: 0, py: 2, fx: Factor::default(), fy: Factor::default() },
            ],
        };
        let ok = ForceModel::new().with_face(2, ForceField::Zero, legendre);
        let r = check_force_admissibility(&x, &b, &ok).unwrap();
        assert_eq!(r.complement_dim, 2);
        assert!(r.admissible, "{r:?}");
        let bad = ForceModel::new().with_face(2, ForceField::Zero, ForceField::Constant { value: [0.0, 1.0, 0.0] });
        let r = check_force_admissibility(&x, &b, &bad).unwrap();
        assert!(!r.admissible);
        let k = assemble_membrane(&x, &material()).unwrap();
        assert!(matches!(solve_membrane(&x, &b, &k, &bad), Err(Error::Inadmissible(_))));
        let sol = solve_membrane(&x, &b, &k, &ok).unwrap();
        assert!(sol.relative_residual < 1e-10);
        assert!(sol.orthogonality < 1e-10, "{}", sol.orthogonality);
        let f = x.load(|face, p| ok.f_e(&s, face, p));
        let energy = linalg::bilinear(&k, &sol.u_e, &sol.u_e);
        assert!((energy - linalg::dot(&f, &sol.u_e)).abs() < 1e-10 * energy);
    }

    #[test]
    fn bending_energy_identity_and_galerkin() {
        let x = square_space(0.125);
        let lb = limit_inextensional_basis(&x).unwrap();
        let m = material();
        let op = assemble_bending(&x, &lb, &m).unwrap();
        assert!(linalg::asymmetry(&op.reduced) < 1e-13);
        let model = ForceModel::new().with_face(1, ForceField::Constant { value: [0.0, 0.0, 1.0] }, ForceField::Zero);
        let sol = solve_bending(&x, &lb, &op, &model).unwrap();
        assert!(sol.relative_residual < 1e-10);
        assert!((sol.energy - sol.work).abs() < 1e-10 * sol.energy);
        assert!(x.membrane_strain_sup(&sol.u_i) < 1e-10);
    }
}
