//! δ → 0 convergence of the 3D solutions toward the limit models.

use std::io::Write;

use nalgebra::{Matrix2, Matrix3, Point2, Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::decompose::{structure_epd, verify_structure_estimates, BallOptions, ElementaryPlateDisplacement};
use crate::error::{Error, Result};
use crate::fields::{everywhere, gauss_points_2, hex_shape, sym, DisplacementSample3D, Material, PlateGrid3D};
use crate::limit_solvers::{stress_from_derivatives, ForceModel, LimitSolution};
use crate::linalg;
use crate::skeleton::Skeleton;
use crate::spaces::{split, XSpace};

use super::locate::TriangleLocator;
use super::mesher::MeshParams;
use super::solver::{solve_3d, Structure3DProblem};

/// Relative slack allowed by the monotone-trend checks.
pub const TREND_SLACK: f64 = 0.1;

/// Unfolded-strain distances to the limit expressions over one region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StrainDistances {
    /// ‖𝒯_δ(γ_αβ(u_δ)) − (γ_αβ(U_E) − t₃∂²_αβU_{I,3})‖.
    pub ab: f64,
    /// ‖𝒯_δ(γ_α3(u_δ))‖.
    pub a3: f64,
    /// ‖𝒯_δ(γ_33(u_δ)) − ∂ũ₃/∂t₃‖.
    pub s33: f64,
    /// ‖𝒯_δ(σ_i3(u_δ))‖.
    pub sigma_i3: f64,
    /// ‖∂_{t₃} of the fiberwise linear fit of 𝒯_δ(γ_αβ(u_δ))‖.
    pub t3_slope: f64,
    /// Number of cells in the region.
    pub cells: usize,
}

/// One δ of a convergence study, for one region variant.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub delta: f64,
    pub energy: f64,
    pub energy_over_delta: f64,
    pub strain_distance_ab: f64,
    pub strain_distance_a3: f64,
    pub strain_distance_33: f64,
    pub sigma_i3_norm: f64,
    pub korn_ratio: f64,
    pub junction_excluded: bool,
    pub t3_slope_norm: f64,
    /// ‖U_{E,δ} − U_E‖_ρ relative to ‖U_E‖_ρ (absolute when U_E = 0).
    pub split_distance_e: f64,
    /// ‖δU_{I,δ} − U_I‖_ρ relative to ‖U_I‖_ρ (absolute when U_I = 0).
    pub split_distance_i: f64,
}

/// Outcome of one monotone-trend check.
#[derive(Debug, Clone, Serialize)]
pub struct TrendFlag {
    pub metric: String,
    pub values: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRecord {
    pub deltas: Vec<f64>,
    /// Two rows per δ: all cells, then junction-excluded.
    pub rows: Vec<ConvergenceRow>,
    pub trends: Vec<TrendFlag>,
}

impl ConvergenceRecord {
    pub fn rows_for(&self, junction_excluded: bool) -> Vec<&ConvergenceRow> {
        self.rows.iter().filter(|r| r.junction_excluded == junction_excluded).collect()
    }

    /// Names of failed trend checks; a single δ cannot show a trend.
    pub fn failures(&self) -> Vec<String> {
        self.failures_for(true)
    }

    /// Trend flags evaluated on the rows with or without the junction layer.
    pub fn trends_for(&self, junction_excluded: bool) -> Vec<TrendFlag> {
        trend_flags(&self.rows, junction_excluded)
    }

    pub fn failures_for(&self, junction_excluded: bool) -> Vec<String> {
        if self.deltas.len() < 2 {
            return vec!["trend needs ≥ 2 deltas".to_string()];
        }
        self.trends_for(junction_excluded).into_iter().filter(|t| !t.passed).map(|t| t.metric).collect()
    }

    fn series(&self, f: impl Fn(&ConvergenceRow) -> f64) -> Vec<f64> {
        self.rows_for(true).into_iter().map(f).collect()
    }

    /// max/min of ℰ(u_δ)/δ along the δ list.
    pub fn energy_spread(&self) -> f64 {
        spread(&self.series(|r| r.energy_over_delta))
    }

    /// max/min of the δ²-scaled Korn ratio along the δ list.
    pub fn korn_spread(&self) -> f64 {
        spread(&self.series(|r| r.korn_ratio))
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "delta",
            "energy",
            "energy_over_delta",
            "strain_distance_ab",
            "strain_distance_a3",
            "strain_distance_33",
            "sigma_i3_norm",
            "korn_ratio",
            "junction_excluded",
        ])?;
        for r in &self.rows {
            w.write_record(&[
                format!("{}", r.delta),
                format!("{:.12e}", r.energy),
                format!("{:.12e}", r.energy_over_delta),
                format!("{:.12e}", r.strain_distance_ab),
                format!("{:.12e}", r.strain_distance_a3),
                format!("{:.12e}", r.strain_distance_33),
                format!("{:.12e}", r.sigma_i3_norm),
                format!("{:.12e}", r.korn_ratio),
                r.junction_excluded.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Values non-increasing along the list within `slack`; sequences that are
/// zero to rounding pass.
pub fn non_increasing(values: &[f64], slack: f64) -> bool {
    let scale = values.iter().cloned().fold(0.0, f64::max);
    if scale < 1e-14 {
        return true;
    }
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack) + 1e-14 * scale)
}

/// Values strictly decreasing along the list.
pub fn decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// Junction neighbourhood {dist(x̂, J) < η0 δ} of all non-clamped junction
/// edges, tested at the midsurface point of a cell.
pub fn near_junction(skeleton: &Skeleton, x: &nalgebra::Point3<f64>, delta: f64) -> bool {
    skeleton.junction_edges().any(|(k, e)| !e.clamped && skeleton.junction_region(k, delta, 1.0).contains(x))
}

/// Limit values at a face point: (γ_αβ(U_E) − t₃∂²U_{I,3}, ∂ũ₃/∂t₃).
pub fn limit_strain(
    space: &XSpace,
    locator: &TriangleLocator,
    u_e: &[f64],
    u_i: &[f64],
    material: &Material,
    face: usize,
    p: &Point2<f64>,
    t3: f64,
) -> (Matrix2<f64>, f64) {
    let t = locator.locate(space, face, p);
    let e = space.evaluate(u_e, face, t, p);
    let i = space.evaluate(u_i, face, t, p);
    let s = stress_from_derivatives(material, &e.strain, &i.hess_w, t3);
    (e.strain - i.hess_w * t3, s.du3_dt3)
}

/// Unfolded strain distances of a 3D sample to the limit fields, with or
/// without the junction neighbourhood.
pub fn strain_distances(
    sample: &DisplacementSample3D,
    limit: &LimitSolution,
    locator: &TriangleLocator,
    exclude_junctions: bool,
) -> StrainDistances {
    let space = &limit.space;
    let skeleton = &space.skeleton;
    let material = &limit.material;
    let (u_e, u_i) = (&limit.membrane.u_e, &limit.bending.u_i);
    let gp = gauss_points_2();
    let mut acc = [0.0; 5];
    let mut cells = 0;
    for (p, g) in sample.plates.iter().enumerate() {
        let face = skeleton.face_index(g.face_id).expect("plate face");
        let delta = g.delta;
        let columns = (g.nx() - 1) * (g.ny() - 1);
        let parts: Vec<Option<([f64; 5], usize)>> = (0..columns)
            .into_par_iter()
            .map(|col| {
                let (i, j) = (col % (g.nx() - 1), col / (g.nx() - 1));
                let mid = g.cell_center_local(i, j, 0);
                let mid_global = g.to_global(&Vector3::new(mid.x, mid.y, 0.0));
                if exclude_junctions && near_junction(skeleton, &mid_global, delta) {
                    return None;
                }
                let mut a = [0.0; 5];
                let mut n = 0;
                let mut fit: Vec<(f64, f64, Matrix2<f64>)> = Vec::new();
                for k in 0..g.nz - 1 {
                    let c = g.cell_index(i, j, k);
                    if !sample.active[p][c] {
                        continue;
                    }
                    n += 1;
                    let kin = g.cell_kinematics(i, j, k);
                    let vals = sample.cell_values_local(p, i, j, k);
                    let modes = sample.modes.as_ref().map(|m| &m[p][c]);
                    for q in 0..8 {
                        let w = kin.weights[q] / delta;
                        let shape = hex_shape(&gp[q].0);
                        let x: Vector3<f64> = (0..8).map(|m| kin.nodes[m] * shape[m]).sum();
                        let t3 = x.z / delta;
                        let gamma: Matrix3<f64> = sym(&kin.gradient(q, &vals, modes));
                        let (lab, l33) = limit_strain(space, locator, u_e, u_i, material, face, &Point2::new(x.x, x.y), t3);
                        let gab = gamma.fixed_view::<2, 2>(0, 0).into_owned();
                        a[0] += w * (gab - lab).norm_squared();
                        a[1] += w * 2.0 * (gamma[(0, 2)].powi(2) + gamma[(1, 2)].powi(2));
                        a[2] += w * (gamma[(2, 2)] - l33).powi(2);
                        let sigma = material.stress(&gamma);
                        a[3] += w * (sigma[(0, 2)].powi(2) + sigma[(1, 2)].powi(2) + sigma[(2, 2)].powi(2));
                        fit.push((w, t3, gab));
                    }
                }
                if n == 0 {
                    return None;
                }
                let wsum: f64 = fit.iter().map(|f| f.0).sum();
                let tbar = fit.iter().map(|f| f.0 * f.1).sum::<f64>() / wsum;
                let gbar = fit.iter().map(|f| f.2 * f.0).sum::<Matrix2<f64>>() / wsum;
                let stt: f64 = fit.iter().map(|f| f.0 * (f.1 - tbar).powi(2)).sum();
                let slope = fit.iter().map(|f| (f.2 - gbar) * (f.0 * (f.1 - tbar))).sum::<Matrix2<f64>>() / stt;
                a[4] = wsum * slope.norm_squared();
                Some((a, n))
            })
            .collect();
        for (a, n) in parts.into_iter().flatten() {
            for k in 0..5 {
                acc[k] += a[k];
            }
            cells += n;
        }
    }
    StrainDistances { ab: acc[0].sqrt(), a3: acc[1].sqrt(), s33: acc[2].sqrt(), sigma_i3: acc[3].sqrt(), t3_slope: acc[4].sqrt(), cells }
}

/// Bilinear interpolation of midsurface values at a local point, with the
/// gradient of the third component.
pub fn midsurface_interpolate(grid: &PlateGrid3D, values: &[Vector3<f64>], p: &Point2<f64>) -> (Vector3<f64>, Vector2<f64>) {
    let (s, t) = grid.inverse_map(p);
    let locate = |nodes: &[f64], v: f64| {
        let n = nodes.len();
        let idx = nodes.partition_point(|&x| x <= v).clamp(1, n - 1) - 1;
        (idx, (v - nodes[idx]) / (nodes[idx + 1] - nodes[idx]))
    };
    let (i, a) = locate(&grid.xi, s.clamp(0.0, 1.0));
    let (j, b) = locate(&grid.eta, t.clamp(0.0, 1.0));
    let nx = grid.nx();
    let v = |ii: usize, jj: usize| values[ii + nx * jj];
    let (v00, v10, v11, v01) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
    let value = v00 * ((1.0 - a) * (1.0 - b)) + v10 * (a * (1.0 - b)) + v11 * (a * b) + v01 * ((1.0 - a) * b);
    let ds = grid.xi[i + 1] - grid.xi[i];
    let dt = grid.eta[j + 1] - grid.eta[j];
    let d_a = ((v10.z - v00.z) * (1.0 - b) + (v11.z - v01.z) * b) / ds;
    let d_b = ((v01.z - v00.z) * (1.0 - a) + (v11.z - v10.z) * a) / dt;
    let jac = grid.map_jacobian(s, t);
    let grad = jac.try_inverse().unwrap_or_else(Matrix2::zeros).transpose() * Vector2::new(d_a, d_b);
    (value, grad)
}

/// 𝒰 of an e.d.p.s. interpolated into the skeleton space X.
pub fn epd_to_space(space: &XSpace, plates: &[ElementaryPlateDisplacement]) -> Vec<f64> {
    let by_face = |face: usize| {
        let id = space.skeleton.faces[face].id;
        plates.iter().find(|e| e.face_id == id).expect("plate for every face")
    };
    space.interpolate(
        |face, p| {
            let e = by_face(face);
            midsurface_interpolate(&e.grid, &e.u, p).0
        },
        |face, p| {
            let e = by_face(face);
            midsurface_interpolate(&e.grid, &e.u, p).1
        },
    )
}

fn rho_distance(space: &XSpace, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let num = linalg::bilinear(&space.gram, &d, &d).max(0.0).sqrt();
    let den = linalg::bilinear(&space.gram, b, b).max(0.0).sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Runs the 3D solve, decomposition and strain comparison for every δ.
pub fn convergence_study(limit: &LimitSolution, forces: &ForceModel, deltas: &[f64], params: &MeshParams) -> Result<ConvergenceRecord> {
    if deltas.is_empty() {
        return Err(Error::Input("empty delta list".into()));
    }
    if !decreasing(deltas) {
        return Err(Error::Input("delta list must be strictly decreasing".into()));
    }
    let skeleton = &limit.space.skeleton;
    let locator = TriangleLocator::new(&limit.space);
    let per_delta: Vec<[ConvergenceRow; 2]> = deltas
        .par_iter()
        .map(|&delta| {
            let problem = Structure3DProblem::new(skeleton, &limit.material, forces, delta, params)?;
            let sol = solve_3d(&problem)?;
            let edps = structure_epd(&sol.sample, skeleton, &BallOptions::default())?;
            let estimates = verify_structure_estimates(&sol.sample, &edps, &everywhere);
            let korn = estimates.rows.iter().find(|r| r.inequality_id == "korn").map_or(0.0, |r| r.ratio);
            let u = epd_to_space(&limit.space, &edps.plates);
            let (ue, ui) = split(&limit.space, &limit.inextensional, &u)?;
            let ui_scaled: Vec<f64> = ui.iter().map(|v| v * delta).collect();
            let split_e = rho_distance(&limit.space, &ue, &limit.membrane.u_e);
            let split_i = rho_distance(&limit.space, &ui_scaled, &limit.bending.u_i);
            let row = |excluded: bool| {
                let d = strain_distances(&sol.sample, limit, &locator, excluded);
                ConvergenceRow {
                    delta,
                    energy: sol.energy,
                    energy_over_delta: sol.energy / delta,
                    strain_distance_ab: d.ab,
                    strain_distance_a3: d.a3,
                    strain_distance_33: d.s33,
                    sigma_i3_norm: d.sigma_i3,
                    korn_ratio: korn,
                    junction_excluded: excluded,
                    t3_slope_norm: d.t3_slope,
                    split_distance_e: split_e,
                    split_distance_i: split_i,
                }
            };
            Ok([row(false), row(true)])
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ConvergenceRow> = per_delta.into_iter().flatten().collect();
    let trends = trend_flags(&rows, true);
    Ok(ConvergenceRecord { deltas: deltas.to_vec(), rows, trends })
}

fn trend_flags(rows: &[ConvergenceRow], junction_excluded: bool) -> Vec<TrendFlag> {
    let excluded: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.junction_excluded == junction_excluded).collect();
    let metrics: [(&str, fn(&ConvergenceRow) -> f64); 4] = [
        ("strain_distance_ab", |r| r.strain_distance_ab),
        ("strain_distance_a3", |r| r.strain_distance_a3),
        ("strain_distance_33", |r| r.strain_distance_33),
        ("sigma_i3_norm", |r| r.sigma_i3_norm),
    ];
    metrics
        .iter()
        .map(|(metric, f)| {
            let values: Vec<f64> = excluded.iter().map(|r| f(r)).collect();
            let passed = non_increasing(&values, TREND_SLACK);
            TrendFlag { metric: metric.to_string(), values, passed }
        })
        .collect()
}

/// max/min of a positive series (1 for a single value, ∞ when the minimum
/// vanishes but the maximum does not).
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_helpers() {
        assert!(non_increasing(&[1.0, 1.05, 0.5], 0.1));
        assert!(!non_increasing(&[1.0, 1.2], 0.1));
        assert!(non_increasing(&[0.0, 1e-17], 0.1));
        assert!(decreasing(&[0.2, 0.1, 0.05]));
        assert!(!decreasing(&[0.1, 0.1]));
        assert_eq!(spread(&[2.0, 1.0, 1.5]), 2.0);
        assert_eq!(spread(&[0.0, 0.0]), 1.0);
    }
}
