//! Weighted inequalities on plane sectors C_{1,θ0} = {r < 1, 0 < θ < θ0}:
//! the weighted Poincaré bound and the barycentric cone lifting of two ray
//! traces.

use std::f64::consts::PI;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance of the weighted Poincaré comparison.
pub const POINCARE_TOL: f64 = 1e-6;

/// Tensor polar grid on a sector; samples are stored ray by ray,
/// `values[j * radii.len() + i]` at (radii[i], angles[j]).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarGrid {
    pub radii: Vec<f64>,
    pub angles: Vec<f64>,
}

impl PolarGrid {
    /// `nr` radial and `ntheta` angular intervals on C_{1,θ0}.
    pub fn uniform(nr: usize, ntheta: usize, theta0: f64) -> Result<Self> {
        if nr == 0 || ntheta == 0 {
            return Err(Error::Input("polar grid needs at least one interval per direction".into()));
        }
        let radii = (0..=nr).map(|i| i as f64 / nr as f64).collect();
        let angles = (0..=ntheta).map(|j| theta0 * j as f64 / ntheta as f64).collect();
        Self::new(radii, angles)
    }

    pub fn new(radii: Vec<f64>, angles: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&radii) || radii[0] != 0.0 || !increasing(&angles) || angles[0] != 0.0 {
            return Err(Error::Input("polar grid must start at r = 0, θ = 0 and increase".into()));
        }
        Ok(Self { radii, angles })
    }

    pub fn theta0(&self) -> f64 {
        *self.angles.last().expect("non-empty angles")
    }

    pub fn len(&self) -> usize {
        self.radii.len() * self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples f(r, θ) on the grid.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let f = &f;
        self.angles.iter().flat_map(|&t| self.radii.iter().map(move |&r| f(r, t))).collect()
    }

    fn ray<'a>(&self, values: &'a [f64], j: usize) -> &'a [f64] {
        let n = self.radii.len();
        &values[j * n..(j + 1) * n]
    }

    /// Trapezoid weights in θ.
    fn angle_weights(&self) -> Vec<f64> {
        let a = &self.angles;
        (0..a.len())
            .map(|j| {
                let left = if j > 0 { a[j] - a[j - 1] } else { 0.0 };
                let right = if j + 1 < a.len() { a[j + 1] - a[j] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }
}

/// ∫_a^b r^e dr, with the logarithm for e = −1 (infinite when a = 0 and
/// e ≤ −1).
pub fn power_moment(a: f64, b: f64, e: f64) -> f64 {
    if (e + 1.0).abs() < 1e-14 {
        if a <= 0.0 {
            f64::INFINITY
        } else {
            (b / a).ln()
        }
    } else if e < -1.0 && a <= 0.0 {
        f64::INFINITY
    } else {
        (b.powf(e + 1.0) - a.powf(e + 1.0)) / (e + 1.0)
    }
}

/// ∫_a^b (p + q r)² r^e dr.
fn linear_square_moment(a: f64, b: f64, p: f64, q: f64, e: f64) -> f64 {
    let mut total = 0.0;
    for (c, k) in [(p * p, 0.0), (2.0 * p * q, 1.0), (q * q, 2.0)] {
        if c != 0.0 {
            total += c * power_moment(a, b, e + k);
        }
    }
    total
}

/// Coefficients (p, q) of the linear interpolant on [r_i, r_{i+1}].
fn segment(r: &[f64], f: &[f64], i: usize) -> (f64, f64) {
    let q = (f[i + 1] - f[i]) / (r[i + 1] - r[i]);
    (f[i] - q * r[i], q)
}

/// Both sides of the weighted Poincaré bound
/// ∫|φ|² r^{α−2} ≤ (4/α)‖φ‖² + (2/α²)‖∇φ‖² on C_{1,θ0}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareCheck {
    pub alpha: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Integrates both sides for the field that is linear in r between radial
/// nodes and in θ between rays. Radial integrals are exact; θ uses positive
/// trapezoid weights, so the bound holds ray by ray and survives the angular
/// sum.
pub fn weighted_poincare_check(grid: &PolarGrid, phi: &[f64], alpha: f64) -> Result<PoincareCheck> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Input(format!("α must lie in (0, 1], got {alpha}")));
    }
    if phi.len() != grid.len() {
        return Err(Error::Input(format!("expected {} samples, got {}", grid.len(), phi.len())));
    }
    let r = &grid.radii;
    let weights = grid.angle_weights();
    let (mut lhs, mut l2, mut grad) = (0.0, 0.0, 0.0);
    for (j, w) in weights.iter().enumerate() {
        let f = grid.ray(phi, j);
        for i in 0..r.len() - 1 {
            let (p, q) = segment(r, f, i);
            lhs += w * linear_square_moment(r[i], r[i + 1], p, q, alpha - 1.0);
            l2 += w * linear_square_moment(r[i], r[i + 1], p, q, 1.0);
            grad += w * q * q * power_moment(r[i], r[i + 1], 1.0);
        }
    }
    for j in 0..grid.angles.len() - 1 {
        let dt = grid.angles[j + 1] - grid.angles[j];
        let d: Vec<f64> = grid.ray(phi, j + 1).iter().zip(grid.ray(phi, j)).map(|(a, b)| (a - b) / dt).collect();
        for i in 0..r.len() - 1 {
            let (p, q) = segment(r, &d, i);
            grad += dt * linear_square_moment(r[i], r[i + 1], p, q, -1.0);
        }
    }
    let rhs = 4.0 / alpha * l2 + 2.0 / (alpha * alpha) * grad;
    Ok(PoincareCheck { alpha, lhs, rhs, pass: lhs <= rhs * (1.0 + POINCARE_TOL) })
}

/// Barycentric blend of the radial liftings of two ray traces.
#[derive(Debug, Clone, Serialize)]
pub struct ConeLifting {
    pub grid: PolarGrid,
    pub alpha: f64,
    pub values: Vec<f64>,
    /// max |w − u| on J_0.
    pub trace_error_0: f64,
    /// max |w − v| on J_θ0.
    pub trace_error_theta0: f64,
    /// ∫_{C_{1,θ0}} |∇w|² r^α.
    pub weighted_gradient: f64,
}

/// Angular weights a(θ), b(θ) = 1 − a(θ) of the blend and a'(θ).
fn blend_weights(theta: f64, theta0: f64) -> (f64, f64, f64) {
    let (s, s0) = (theta.sin(), (theta0 - theta).sin());
    let den = s + s0;
    let a = s0 / den;
    let da = (-(theta0 - theta).cos() * den - s0 * (theta.cos() - (theta0 - theta).cos())) / (den * den);
    (a, 1.0 - a, da)
}

/// Radial lifting of a trace sampled at the grid radii, reflected about
/// r = 1 beyond the unit ray.
pub fn radial_lifting(radii: &[f64], trace: &[f64], r: f64) -> f64 {
    let r = if r > 1.0 { (2.0 - r).max(0.0) } else { r.max(0.0) };
    let i = radii.partition_point(|&x| x <= r).clamp(1, radii.len() - 1) - 1;
    let t = ((r - radii[i]) / (radii[i + 1] - radii[i])).clamp(0.0, 1.0);
    trace[i] * (1.0 - t) + trace[i + 1] * t
}

/// w = U·sin(θ0 − θ)/(sin θ + sin(θ0 − θ)) + V·sin θ/(sin θ + sin(θ0 − θ)),
/// the polar form of the blend U·(x₁sinθ0 − x₂cosθ0)/(x₂(1 − cosθ0) +
/// x₁sinθ0) + V·x₂/(x₂(1 − cosθ0) + x₁sinθ0), with U(x) = u(|x|) and
/// V(x) = v(|x|). The weighted gradient integral is exact in r for the
/// piecewise-linear traces and uses 4-point Gauss rules on each angular
/// interval.
pub fn cone_lifting(grid: &PolarGrid, u: &[f64], v: &[f64], alpha: f64) -> Result<ConeLifting> {
    let theta0 = grid.theta0();
    if !(theta0 > 0.0 && theta0 < PI) {
        return Err(Error::Input(format!("θ0 must lie in (0, π), got {theta0}")));
    }
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::Input(format!("α must lie in (0, 2], got {alpha}")));
    }
    let n = grid.radii.len();
    if u.len() != n || v.len() != n {
        return Err(Error::Input(format!("traces need {n} samples at the grid radii")));
    }
    let values = grid.sample(|r, t| {
        let (a, b, _) = blend_weights(t, theta0);
        a * radial_lifting(&grid.radii, u, r) + b * radial_lifting(&grid.radii, v, r)
    });
    let last = grid.angles.len() - 1;
    let trace_error = |j: usize, trace: &[f64]| grid.ray(&values, j).iter().zip(trace).map(|(w, t)| (w - t).abs()).fold(0.0, f64::max);
    let (trace_error_0, trace_error_theta0) = (trace_error(0, u), trace_error(last, v));

    let (gx, gw) = gauss_legendre_4();
    let (mut aa, mut ab, mut bb, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..last {
        let (t0, t1) = (grid.angles[j], grid.angles[j + 1]);
        for (x, w) in gx.iter().zip(&gw) {
            let t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x;
            let wt = 0.5 * (t1 - t0) * w;
            let (a, b, da) = blend_weights(t, theta0);
            aa += wt * a * a;
            ab += wt * a * b;
            bb += wt * b * b;
            dd += wt * da * da;
        }
    }
    let r = &grid.radii;
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let mut weighted_gradient = 0.0;
    for i in 0..n - 1 {
        let (_, du) = segment(r, u, i);
        let (_, dv) = segment(r, v, i);
        let radial = du * du * aa + 2.0 * du * dv * ab + dv * dv * bb;
        weighted_gradient += radial * power_moment(r[i], r[i + 1], alpha + 1.0);
        let (p, q) = segment(r, &diff, i);
        weighted_gradient += dd * linear_square_moment(r[i], r[i + 1], p, q, alpha - 1.0);
    }
    Ok(ConeLifting { grid: grid.clone(), alpha, values, trace_error_0, trace_error_theta0, weighted_gradient })
}

fn gauss_legendre_4() -> ([f64; 4], [f64; 4]) {
    let (x0, x1) = (0.339_981_043_584_856_3, 0.861_136_311_594_052_6);
    let (w0, w1) = (0.652_145_154_862_546_1, 0.347_854_845_137_453_9);
    ([-x1, -x0, x0, x1], [w1, w0, w0, w1])
}

/// Smooth field Σ c_k r^{p_k} cos(m_k θ + ψ_k) + c₀ with random coefficients.
pub fn random_smooth_field(grid: &PolarGrid, rng: &mut impl Rng) -> Vec<f64> {
    let c0: f64 = rng.random_range(-1.0..1.0);
    let terms: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.0..3.0), rng.random_range(0.0..4.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    grid.sample(|r, t| c0 + terms.iter().map(|&(c, p, m, psi)| c * r.powf(p) * (m * t + psi).cos()).sum::<f64>())
}

/// Batch of sector checks: weighted Poincaré on random fields and the cone
/// lifting traces and refinement study.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub seed: u64,
    pub poincare: Vec<PoincareCheck>,
    /// Largest trace error of the cone liftings of random traces.
    pub lifting_trace_error: f64,
    /// ∫|∇w|²r^α for u(t) = t, v = 0, θ0 = π/2, α = 1 on refined grids.
    pub lifting_levels: Vec<f64>,
    /// Relative change of the last two refinement levels.
    pub lifting_change: f64,
}

/// Refinement levels (intervals per direction) of the lifting study.
pub const LIFTING_LEVELS: [usize; 4] = [8, 16, 32, 64];

impl LemmaReport {
    pub fn poincare_passed(&self) -> bool {
        self.poincare.iter().all(|c| c.pass)
    }

    pub fn lifting_passed(&self) -> bool {
        self.lifting_trace_error < 1e-10 && self.lifting_change < 0.05
    }

    pub fn passed(&self) -> bool {
        self.poincare_passed() && self.lifting_passed()
    }

    /// Failed check names.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .poincare
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.pass)
            .map(|(k, c)| format!("weighted_poincare field {} alpha {}", k, c.alpha))
            .collect();
        if self.lifting_trace_error >= 1e-10 {
            out.push(format!("cone_lifting trace error {:.3e}", self.lifting_trace_error));
        }
        if self.lifting_change >= 0.05 {
            out.push(format!("cone_lifting refinement change {:.3e}", self.lifting_change));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "alpha", "lhs", "rhs", "pass"])?;
        for c in &self.poincare {
            w.write_record(&[
                "weighted_poincare".to_string(),
                format!("{}", c.alpha),
                format!("{:.12e}", c.lhs),
                format!("{:.12e}", c.rhs),
                c.pass.to_string(),
            ])?;
        }
        w.write_record(&[
            "cone_lifting_trace".to_string(),
            String::new(),
            format!("{:.12e}", self.lifting_trace_error),
            "1e-10".to_string(),
            (self.lifting_trace_error < 1e-10).to_string(),
        ])?;
        let k = self.lifting_levels.len();
        w.write_record(&[
            "cone_lifting_refinement".to_string(),
            "1".to_string(),
            format!("{:.12e}", self.lifting_levels[k - 1]),
            format!("{:.12e}", self.lifting_levels[k - 2]),
            (self.lifting_change < 0.05).to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Runs the weighted Poincaré check on `n_fields` random smooth fields for
/// every α in `alphas` (sector angles drawn in (0.2, 3)), cone liftings of
/// random traces, and the lifting refinement study.
pub fn lemma_checks(seed: u64, n_fields: usize, alphas: &[f64]) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poincare = Vec::with_capacity(n_fields * alphas.len());
    let mut lifting_trace_error: f64 = 0.0;
    for _ in 0..n_fields {
        let theta0 = rng.random_range(0.2..3.0);
        let grid = PolarGrid::uniform(24, 16, theta0)?;
        let phi = random_smooth_field(&grid, &mut rng);
        for &alpha in alphas {
            poincare.push(weighted_poincare_check(&grid, &phi, alpha)?);
        }
        let u: Vec<f64> = grid.ray(&phi, 0).to_vec();
        let v: Vec<f64> = grid.ray(&phi, grid.angles.len() - 1).to_vec();
        let w = cone_lifting(&grid, &u, &v, 1.0)?;
        lifting_trace_error = lifting_trace_error.max(w.trace_error_0).max(w.trace_error_theta0);
    }
    let lifting_levels = LIFTING_LEVELS
        .iter()
        .map(|&n| {
            let g = PolarGrid::uniform(n, n, PI / 2.0)?;
            let v = vec![0.0; g.radii.len()];
            Ok(cone_lifting(&g, &g.radii, &v, 1.0)?.weighted_gradient)
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = lifting_levels.len();
    let lifting_change = ((lifting_levels[k - 1] - lifting_levels[k - 2]) / lifting_levels[k - 1]).abs();
    Ok(LemmaReport { seed, poincare, lifting_trace_error, lifting_levels, lifting_change })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments() {
        assert_relative_eq!(power_moment(0.0, 2.0, 1.0), 2.0);
        assert_relative_eq!(power_moment(1.0, std::f64::consts::E, -1.0), 1.0);
        assert!(power_moment(0.0, 1.0, -1.0).is_infinite());
        assert_relative_eq!(linear_square_moment(0.0, 1.0, 1.0, 1.0, 0.0), 7.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_on_quarter_disk() {
        let g = PolarGrid::uniform(8, 6, PI / 2.0).unwrap();
        let c = weighted_poincare_check(&g, &g.sample(|_, _| 1.0), 1.0).unwrap();
        assert_relative_eq!(c.lhs, PI / 2.0, epsilon = 1e-13);
        assert_relative_eq!(c.rhs, PI, epsilon = 1e-13);
        assert!(c.pass);
    }

    #[test]
    fn radius_field_closed_form() {
        let g = PolarGrid::uniform(4, 3, PI / 3.0).unwrap();
        for alpha in [0.25, 0.5, 1.0] {
            let c = weighted_poincare_check(&g, &g.sample(|r, _| r), alpha).unwrap();
            assert_relative_eq!(c.lhs, PI / 3.0 / (alpha + 2.0), epsilon = 1e-13);
            assert_relative_eq!(c.rhs, PI / 3.0 * (1.0 / alpha + 1.0 / (alpha * alpha)), epsilon = 1e-13);
            assert!(c.pass);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = PolarGrid::uniform(4, 4, PI / 2.0).unwrap();
        assert!(weighted_poincare_check(&g, &g.sample(|_, _| 1.0), 1.5).is_err());
        assert!(weighted_poincare_check(&g, &[1.0], 1.0).is_err());
        let flat = PolarGrid::uniform(4, 4, PI).unwrap();
        let z = vec![0.0; 5];
        assert!(cone_lifting(&flat, &z, &z, 1.0).is_err());
        assert!(PolarGrid::new(vec![0.5, 1.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn lifting_of_constants_and_zero() {
        let g = PolarGrid::uniform(5, 7, 2.0).unwrap();
        let c = vec![0.7; 6];
        let w = cone_lifting(&g, &c, &c, 1.0).unwrap();
        assert!(w.values.iter().all(|x| (x - 0.7).abs() < 1e-14));
        assert_eq!(w.weighted_gradient, 0.0);
        let z = vec![0.0; 6];
        let w = cone_lifting(&g, &z, &z, 0.5).unwrap();
        assert!(w.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lifting_reproduces_traces() {
        let g = PolarGrid::uniform(16, 9, 1.2).unwrap();
        let u: Vec<f64> = g.radii.iter().map(|r| (3.0 * r).sin()).collect();
        let v: Vec<f64> = g.radii.iter().map(|r| 1.0 - r * r).collect();
        let w = cone_lifting(&g, &u, &v, 1.0).unwrap();
        assert!(w.trace_error_0 < 1e-10 && w.trace_error_theta0 < 1e-10);
        assert!(w.weighted_gradient.is_finite());
    }

    #[test]
    fn blend_weight_derivative_matches_differences() {
        let t0 = 1.3;
        for t in [0.1, 0.6, 1.2] {
            let h = 1e-6;
            let fd = (blend_weights(t + h, t0).0 - blend_weights(t - h, t0).0) / (2.0 * h);
            assert_relative_eq!(blend_weights(t, t0).2, fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn lemma_batch_passes() {
        let r = lemma_checks(7, 5, &[0.25, 1.0]).unwrap();
        assert_eq!(r.poincare.len(), 10);
        assert!(r.passed(), "{:?}", r.failures());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 13);
    }

    #[test]
    fn lifting_gradient_is_refinement_stable() {
        let alpha = 1.0;
        let values: Vec<f64> = [4, 8, 16, 32]
            .iter()
            .map(|&n| {
                let g = PolarGrid::uniform(n, n, PI / 2.0).unwrap();
                let u: Vec<f64> = g.radii.clone();
                let v = vec![0.0; g.radii.len()];
                cone_lifting(&g, &u, &v, alpha).unwrap().weighted_gradient
            })
            .collect();
        let k = values.len();
        assert!(((values[k - 1] - values[k - 2]) / values[k - 1]).abs() < 0.05, "{values:?}");
    }
}
