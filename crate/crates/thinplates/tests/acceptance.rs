//! Acceptance criteria 1–10. Each criterion prints one PASS/FAIL line with
//! the measured values next to the tolerances pinned below.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thinplates::decompose::{
    epd_fiber, fold, inplane_differences, thickness_differences, unfold, verify_estimates, BallOptions, EstimateReport,
};
use thinplates::fields::{everywhere, rigid, DisplacementSample3D, Material, PlateGrid3D};
use thinplates::fixtures;
use thinplates::limit_solvers::{solve_limit, Factor, ForceField, ForceModel, ForceTerm, LimitSolution, Problems};
use thinplates::linalg::{SpdSolver, TripletBuilder};
use thinplates::mesh::MeshOptions;
use thinplates::reference3d::{convergence_study, lemma_checks, ConvergenceRecord, MeshParams, RecoverySequence};
use thinplates::skeleton::{Skeleton, SkeletonFile};
use thinplates::spaces::{build_spaces, inextensional_basis, limit_inextensional_basis, split, z_from_parts};

const RIGID_RESIDUAL_TOL: f64 = 1e-12;
const RIGID_ENERGY_TOL: f64 = 1e-20;
const RIGID_BUDGET: Duration = Duration::from_secs(5);
const RATIO_SPREAD_TOL: f64 = 2.0;
const RATIO_BUDGET: Duration = Duration::from_secs(120);
const ISOMETRY_TOL: f64 = 1e-14;
const HINGE_RESIDUAL_TOL: f64 = 1e-10;
const MEMBRANE_STRAIN_TOL: f64 = 1e-10;
const MEMBRANE_RATE_MIN: f64 = 3.2;
const MEMBRANE_BUDGET: Duration = Duration::from_secs(60);
const DEFLECTION_TOL: f64 = 0.03;
const DEFLECTION_BUDGET: Duration = Duration::from_secs(120);
const ENERGY_SPREAD_TOL: f64 = 2.0;
const ENERGY_BUDGET: Duration = Duration::from_secs(600);
const LEMMA_FIELDS: usize = 50;
const LEMMA_ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];

const DELTAS_3D: [f64; 3] = [0.2, 0.1, 0.05];
const DELTAS_PLATE: [f64; 3] = [0.1, 0.05, 0.025];

fn list(values: &[f64]) -> String {
    format!("[{}]", values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", "))
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn unit_plate(n: usize, delta: f64) -> PlateGrid3D {
    PlateGrid3D::rectangle(1, (0.0, 1.0), (0.0, 1.0), n, n, 5, delta).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Sum of three plane waves with random amplitudes, wave vectors and phases.
fn random_smooth(rng: &mut ChaCha8Rng) -> impl Fn(&Vector3<f64>) -> Vector3<f64> + Sync + Clone {
    let modes: Vec<(Vector3<f64>, Vector3<f64>, f64)> =
        (0..3).map(|_| (random_vector(rng, -1.0, 1.0), random_vector(rng, 0.5, 3.0), rng.random_range(0.0..2.0 * PI))).collect();
    move |x| modes.iter().fold(Vector3::zeros(), |acc, (c, k, p)| acc + c * (k.dot(x) + p).sin())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut residual, mut energy): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let (a, b) = (random_vector(&mut rng, -1.0, 1.0), random_vector(&mut rng, -1.0, 1.0));
        let s = DisplacementSample3D::single(unit_plate(10, 0.1), rigid(a, b));
        let ue = epd_fiber(&s, 0).unwrap().to_sample();
        let mut diff = s.clone();
        diff.add_scaled(&ue, -1.0);
        let rel = (diff.l2_norm_sq(&everywhere).value / s.l2_norm_sq(&everywhere).value).sqrt();
        residual = residual.max(rel);
        energy = energy.max(ue.energy_e(&everywhere).value);
    }
    let t = start.elapsed();
    outcome(
        residual < RIGID_RESIDUAL_TOL && energy < RIGID_ENERGY_TOL && t < RIGID_BUDGET,
        format!("20 rigid fields: residual {residual:.2e} (< {RIGID_RESIDUAL_TOL:.0e}), E(U_e) {energy:.2e} (< {RIGID_ENERGY_TOL:.0e}), {t:.2?}"),
    )
}

/// Rows judged by max/min: one per numbered inequality. The parts of the
/// ball inequality are judged by growth only, since a part may decay.
const INEQUALITY_ROWS: [&str; 3] = ["epd_fiber", "kl_residual", "ball_combined"];
const PART_GROWTH_TOL: f64 = 1.1;

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fields: Vec<Box<dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync>> =
        vec![Box::new(|x: &Vector3<f64>| Vector3::new(-2.0 * x.x * x.z, 0.0, x.x * x.x))];
    for _ in 0..20 {
        fields.push(Box::new(random_smooth(&mut rng)));
    }
    let reports: Vec<EstimateReport> = fields
        .par_iter()
        .map(|f| {
            let mut report = EstimateReport::default();
            for delta in DELTAS_PLATE {
                let n = (2.0 / delta).round() as usize;
                let s = DisplacementSample3D::single(unit_plate(n, delta), f);
                report.extend(verify_estimates(&s, 0, &BallOptions::default()).unwrap());
            }
            report
        })
        .collect();
    let (mut spread, mut growth, mut failures) = (1.0f64, 1.0f64, Vec::new());
    for (k, report) in reports.iter().enumerate() {
        for b in report.boundedness() {
            if INEQUALITY_ROWS.contains(&b.inequality_id.as_str()) {
                spread = spread.max(b.spread);
                if !(b.spread < RATIO_SPREAD_TOL) {
                    failures.push(format!("field {k} {} spread {:.3}", b.inequality_id, b.spread));
                }
            } else {
                growth = growth.max(b.growth);
                if !(b.growth <= PART_GROWTH_TOL) {
                    failures.push(format!("field {k} {} growth {:.3}", b.inequality_id, b.growth));
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failures.is_empty() && t < RATIO_BUDGET,
        format!(
            "21 fields, delta {DELTAS_PLATE:?}: worst max/min {spread:.3} (< {RATIO_SPREAD_TOL}), worst part growth {growth:.3} (<= {PART_GROWTH_TOL}), {t:.2?}{}",
            if failures.is_empty() { String::new() } else { format!("; {failures:?}") }
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut bitwise, mut inplane, mut roundtrip) = (true, true, true);
    let mut isometry: f64 = 0.0;
    for k in 0..10 {
        let delta = if k % 2 == 0 { 0.125 } else { 0.0625 };
        let s = DisplacementSample3D::single(unit_plate(6, delta), random_smooth(&mut rng));
        let u = unfold(&s);
        let folded = thickness_differences(&s, 0);
        let unfolded = thickness_differences(&u.field, 0);
        bitwise &= folded.iter().zip(&unfolded).all(|(f, t)| *t == f * delta);
        inplane &= inplane_differences(&s, 0) == inplane_differences(&u.field, 0);
        roundtrip &= fold(&u).values == s.values;
        let lhs = delta * u.field.l2_norm_sq(&everywhere).value;
        let rhs = s.l2_norm_sq(&everywhere).value;
        isometry = isometry.max((lhs - rhs).abs() / rhs);
    }
    outcome(
        bitwise && inplane && roundtrip && isometry < ISOMETRY_TOL,
        format!(
            "10 fields: thickness factor bitwise {bitwise}, in-plane identical {inplane}, fold∘unfold identity {roundtrip}, isometry {isometry:.2e} (< {ISOMETRY_TOL:.0e})"
        ),
    )
}

fn criterion_4() -> Outcome {
    let skeleton = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
    let x = build_spaces(&skeleton, &MeshOptions::new(0.2)).unwrap();
    let b = inextensional_basis(&x).unwrap();
    let phi = 0.3;
    let z = z_from_parts(
        &x,
        &b.layout,
        &[[0.0; 3]; 2],
        |f, p| {
            if f == 1 {
                (phi * p.y, Vector2::new(0.0, phi))
            } else {
                (0.0, Vector2::zeros())
            }
        },
    );
    let residual = b.constraint_residual(&z);
    let hinge = x.interpolate(
        |f, p| if f == 1 { Vector3::new(0.0, 0.0, phi * p.y) } else { Vector3::zeros() },
        |f, _| if f == 1 { Vector2::new(0.0, phi) } else { Vector2::zeros() },
    );
    let (ue, _) = split(&x, &b, &hinge).unwrap();
    let extensional = ue.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let strain = (0..b.dim()).map(|j| x.membrane_strain_sup(&b.column(j))).fold(0.0f64, f64::max);
    outcome(
        residual < HINGE_RESIDUAL_TOL && strain < MEMBRANE_STRAIN_TOL,
        format!(
            "hinge constraint residual {residual:.2e} (< {HINGE_RESIDUAL_TOL:.0e}), extensional part {extensional:.2e}, basis dim {}, membrane strain sup {strain:.2e} (< {MEMBRANE_STRAIN_TOL:.0e})",
            b.dim()
        ),
    )
}

/// u = (sin πx sin πy, 0, 0) on the clamped unit square with the load
/// −div σ(u) of the plane-stress membrane law σ = c₁γ + c₂ trγ I.
fn manufactured_membrane(material: &Material) -> ForceModel {
    let c = material.plane_stress_modulus();
    let nu = material.poisson();
    let (c1, c2) = (c * (1.0 - nu), c * nu);
    let p2 = PI * PI;
    let term = |coef: [f64; 3], fx: Factor, fy: Factor| ForceTerm { coef, px: 0, py: 0, fx, fy };
    let f_e = ForceField::Terms {
        terms: vec![
            term([(c1 + c2 + 0.5 * c1) * p2, 0.0, 0.0], Factor::sin(PI), Factor::sin(PI)),
            term([0.0, -(0.5 * c1 + c2) * p2, 0.0], Factor::cos(PI), Factor::cos(PI)),
        ],
    };
    ForceModel::new().with_face(1, ForceField::Zero, f_e)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let material = Material::new(1.0, 1.0).unwrap();
    let skeleton = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
    let forces = manufactured_membrane(&material);
    let errors: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&n| {
            let sol = solve_limit(&skeleton, &forces, &material, &MeshOptions::uniform(1.0 / n as f64), Problems::Membrane).unwrap();
            sol.space.l2_error(&sol.membrane.u_e, |_, p| Vector3::new((PI * p.x).sin() * (PI * p.y).sin(), 0.0, 0.0))
        })
        .collect();
    let rates: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let t = start.elapsed();
    outcome(
        rates.iter().all(|&r| r >= MEMBRANE_RATE_MIN) && t < MEMBRANE_BUDGET,
        format!("L2 errors {}, reduction factors {rates:.2?} (>= {MEMBRANE_RATE_MIN}), {t:.2?}", list(&errors)),
    )
}

/// Centre deflection of D Δ²w = q on the clamped unit square by the
/// 13-point finite-difference stencil with mirrored ghost nodes.
fn fd_clamped_square(n: usize, q: f64, d: f64) -> f64 {
    let m = n - 1;
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| (i - 1) + m * (j - 1);
    let mut a = TripletBuilder::new(m * m, m * m);
    let stencil: [(i64, i64, f64); 13] = [
        (0, 0, 20.0),
        (1, 0, -8.0),
        (-1, 0, -8.0),
        (0, 1, -8.0),
        (0, -1, -8.0),
        (1, 1, 2.0),
        (1, -1, 2.0),
        (-1, 1, 2.0),
        (-1, -1, 2.0),
        (2, 0, 1.0),
        (-2, 0, 1.0),
        (0, 2, 1.0),
        (0, -2, 1.0),
    ];
    let mirror = |k: i64| -> Option<usize> {
        match k {
            -1 => Some(1),
            k if k == n as i64 + 1 => Some(n - 1),
            k if k <= 0 || k >= n as i64 => None,
            k => Some(k as usize),
        }
    };
    for j in 1..n {
        for i in 1..n {
            for &(di, dj, c) in &stencil {
                if let (Some(ii), Some(jj)) = (mirror(i as i64 + di), mirror(j as i64 + dj)) {
                    a.push(idx(i, j), idx(ii, jj), c);
                }
            }
        }
    }
    let rhs = vec![q * h.powi(4) / d; m * m];
    let w = SpdSolver::new(&a.build()).unwrap().solve(&rhs).unwrap();
    w[idx(n / 2, n / 2)]
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let material = Material::new(1.0, 1.0).unwrap();
    let d = material.young() / (3.0 * (1.0 - material.poisson().powi(2)));
    let (coarse, fine) = (fd_clamped_square(64, 1.0, d), fd_clamped_square(128, 1.0, d));
    let oracle = (4.0 * fine - coarse) / 3.0;
    let skeleton = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
    let forces = ForceModel::new().with_face(1, ForceField::Constant { value: [0.0, 0.0, 1.0] }, ForceField::Zero);
    let sol = solve_limit(&skeleton, &forces, &material, &MeshOptions::new(1.0 / 32.0), Problems::Bending).unwrap();
    let w = sol.summary().max_deflection;
    let rel = (w - oracle).abs() / oracle;
    let t = start.elapsed();
    outcome(
        rel < DEFLECTION_TOL && t < DEFLECTION_BUDGET,
        format!(
            "max deflection {w:.6e} vs finite-difference oracle {oracle:.6e} (coefficient {:.6e}), relative gap {rel:.3e} (< {DEFLECTION_TOL}), {t:.2?}",
            oracle * d
        ),
    )
}

fn study(file: SkeletonFile, forces: &ForceModel) -> ConvergenceRecord {
    let skeleton = Skeleton::from_file(&file).unwrap();
    let material = Material::new(1.0, 1.0).unwrap();
    let limit: LimitSolution = solve_limit(&skeleton, forces, &material, &MeshOptions::new(1.0 / 16.0), Problems::Both).unwrap();
    convergence_study(&limit, forces, &DELTAS_3D, &MeshParams::default()).unwrap()
}

fn bending_on_face_1() -> ForceModel {
    ForceModel::new().with_face(1, ForceField::Constant { value: [0.0, 0.0, 1.0] }, ForceField::Zero)
}

fn membrane_on_face_1() -> ForceModel {
    ForceModel::new().with_face(1, ForceField::Zero, ForceField::Constant { value: [1.0, 0.5, 0.0] })
}

struct Studies {
    cantilever: ConvergenceRecord,
    pair_bending: ConvergenceRecord,
    pair_membrane: ConvergenceRecord,
    elapsed: Duration,
}

fn run_studies() -> Studies {
    let start = Instant::now();
    let cantilever = study(fixtures::cantilever_square(1.0), &bending_on_face_1());
    let pair_bending = study(fixtures::right_angle_pair(), &bending_on_face_1());
    let pair_membrane = study(fixtures::right_angle_pair(), &membrane_on_face_1());
    Studies { cantilever, pair_bending, pair_membrane, elapsed: start.elapsed() }
}

fn criterion_7(s: &Studies) -> Outcome {
    let spreads = [
        ("single plate", s.cantilever.energy_spread()),
        ("two plates bending", s.pair_bending.energy_spread()),
        ("two plates membrane", s.pair_membrane.energy_spread()),
    ];
    outcome(
        spreads.iter().all(|(_, v)| *v < ENERGY_SPREAD_TOL) && s.elapsed < ENERGY_BUDGET,
        format!(
            "E/delta max/min over {DELTAS_3D:?}: {} (< {ENERGY_SPREAD_TOL}), {:.2?}",
            spreads.iter().map(|(n, v)| format!("{n} {v:.3}")).collect::<Vec<_>>().join(", "),
            s.elapsed
        ),
    )
}

fn trend_summary(r: &ConvergenceRecord) -> String {
    r.trends.iter().map(|t| format!("{} {}", t.metric, list(&t.values))).collect::<Vec<_>>().join("; ")
}

fn criterion_8(s: &Studies) -> Outcome {
    let failures: Vec<String> = [("bending", &s.pair_bending), ("membrane", &s.pair_membrane)]
        .iter()
        .flat_map(|(n, r)| r.failures().into_iter().map(move |f| format!("{n}: {f}")))
        .collect();
    outcome(
        failures.is_empty(),
        format!(
            "junction-excluded trends (10% slack); bending [{}]; membrane [{}]{}",
            trend_summary(&s.pair_bending),
            trend_summary(&s.pair_membrane),
            if failures.is_empty() { String::new() } else { format!("; failed {failures:?}") }
        ),
    )
}

fn criterion_9() -> Outcome {
    let skeleton = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
    let x = build_spaces(&skeleton, &MeshOptions::new(1.0 / 16.0)).unwrap();
    let b = limit_inextensional_basis(&x).unwrap();
    let v = fixtures::right_angle_bent_hinge(&x, 0.1);
    let params = MeshParams::default();
    let d: Vec<_> = DELTAS_3D.iter().map(|&delta| RecoverySequence::new(&x, &b, &v, delta).unwrap().distances(&params).unwrap()).collect();
    let ab: Vec<f64> = d.iter().map(|r| r.ab).collect();
    let k3: Vec<f64> = d.iter().map(|r| r.k3).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing(&ab) && decreasing(&k3),
        format!("hinge, junction-excluded: gamma_ab distance {}, gamma_k3 norm {} (strictly decreasing)", list(&ab), list(&k3)),
    )
}

fn criterion_10() -> Outcome {
    let r = lemma_checks(10, LEMMA_FIELDS, &LEMMA_ALPHAS).unwrap();
    let worst = r.poincare.iter().map(|c| c.lhs / c.rhs).fold(0.0f64, f64::max);
    outcome(
        r.passed(),
        format!(
            "weighted Poincaré {}/{} pass (worst lhs/rhs {worst:.3}), lifting trace error {:.2e} (< 1e-10), refinement levels {}, change {:.2e} (< 5%)",
            r.poincare.iter().filter(|c| c.pass).count(),
            r.poincare.len(),
            r.lifting_trace_error,
            list(&r.lifting_levels),
            r.lifting_change
        ),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, Outcome)> =
        vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3()), (4, criterion_4()), (5, criterion_5()), (6, criterion_6())];
    let studies = run_studies();
    results.push((7, criterion_7(&studies)));
    results.push((8, criterion_8(&studies)));
    results.push((9, criterion_9()));
    results.push((10, criterion_10()));
    for (k, o) in &results {
        println!("criterion {k:>2} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.passed).map(|(k, _)| *k).collect();
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
