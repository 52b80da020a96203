use thinplates::fields::Material;
use thinplates::fixtures;
use thinplates::limit_solvers::{solve_limit, ForceField, ForceModel, LimitSolution, Problems};
use thinplates::mesh::MeshOptions;
use thinplates::reference3d::{convergence_study, MeshParams};
use thinplates::skeleton::{Skeleton, SkeletonFile};
use thinplates::Error;

const DELTAS: [f64; 3] = [0.2, 0.1, 0.05];

fn limit(file: SkeletonFile, forces: &ForceModel) -> LimitSolution {
    let skeleton = Skeleton::from_file(&file).unwrap();
    let material = Material::new(1.0, 1.0).unwrap();
    solve_limit(&skeleton, forces, &material, &MeshOptions::new(1.0 / 16.0), Problems::Both).unwrap()
}

fn bending() -> ForceModel {
    ForceModel::new().with_face(1, ForceField::Constant { value: [0.0, 0.0, 1.0] }, ForceField::Zero)
}

fn membrane() -> ForceModel {
    ForceModel::new().with_face(1, ForceField::Zero, ForceField::Constant { value: [1.0, 0.5, 0.0] })
}

#[test]
fn single_plate_bending_distances_decrease() {
    let forces = bending();
    let l = limit(fixtures::cantilever_square(1.0), &forces);
    let r = convergence_study(&l, &forces, &DELTAS, &MeshParams::default()).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
    let rows = r.rows_for(true);
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[1].strain_distance_ab < w[0].strain_distance_ab));
    assert!(rows.windows(2).all(|w| w[1].strain_distance_a3 < w[0].strain_distance_a3));
    assert!(rows.windows(2).all(|w| w[1].sigma_i3_norm < w[0].sigma_i3_norm));
    assert!(r.energy_spread() < 2.0, "{}", r.energy_spread());
    // The δ²-scaled Korn ratio approaches a limit from below; it stays bounded.
    assert!(r.korn_spread() < 2.0, "{}", r.korn_spread());
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "delta,energy,energy_over_delta,strain_distance_ab,strain_distance_a3,strain_distance_33,sigma_i3_norm,korn_ratio,junction_excluded"
    );
    assert_eq!(lines.count(), 6);
}

#[test]
fn single_plate_membrane_strains_are_thickness_independent() {
    let forces = membrane();
    let l = limit(fixtures::cantilever_square(1.0), &forces);
    let r = convergence_study(&l, &forces, &DELTAS, &MeshParams::default()).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
    for row in &r.rows {
        assert!(row.t3_slope_norm < 1e-8, "{}", row.t3_slope_norm);
        assert!(row.strain_distance_ab < 0.1, "{}", row.strain_distance_ab);
    }
}

#[test]
fn junction_exclusion_only_removes_mass() {
    let forces = bending();
    let l = limit(fixtures::right_angle_pair(), &forces);
    let r = convergence_study(&l, &forces, &DELTAS[..2], &MeshParams::default()).unwrap();
    for (off, on) in r.rows_for(false).iter().zip(r.rows_for(true)) {
        assert_eq!(off.delta, on.delta);
        assert!(on.strain_distance_ab <= off.strain_distance_ab);
        assert!(on.strain_distance_a3 <= off.strain_distance_a3);
        assert!(on.strain_distance_33 <= off.strain_distance_33);
        assert!(on.sigma_i3_norm <= off.sigma_i3_norm);
    }
}

#[test]
fn delta_lists_are_validated() {
    let forces = bending();
    let l = limit(fixtures::cantilever_square(1.0), &forces);
    let p = MeshParams::default();
    assert!(matches!(convergence_study(&l, &forces, &[], &p), Err(Error::Input(_))));
    assert!(matches!(convergence_study(&l, &forces, &[0.05, 0.1], &p), Err(Error::Input(_))));
    let single = convergence_study(&l, &forces, &[0.1], &p).unwrap();
    assert_eq!(single.failures(), vec!["trend needs ≥ 2 deltas".to_string()]);
}
