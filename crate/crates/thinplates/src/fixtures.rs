//! Small reference skeletons used by tests, examples and the CLI.

use nalgebra::{Matrix3, Point3, Vector2, Vector3};

use crate::skeleton::{EdgeRecord, FaceRecord, SkeletonFile, DEFAULT_DELTA0, DEFAULT_ETA0};
use crate::spaces::XSpace;

fn face(id: usize, vertices: &[[f64; 3]], origin: [f64; 3], e1: [f64; 3], e2: [f64; 3]) -> FaceRecord {
    FaceRecord { id, vertices: vertices.to_vec(), origin, e1, e2 }
}

fn edge(a: [f64; 3], b: [f64; 3], faces: &[usize], clamped: bool) -> EdgeRecord {
    EdgeRecord { a, b, faces: faces.to_vec(), clamped }
}

fn file(faces: Vec<FaceRecord>, edges: Vec<EdgeRecord>) -> SkeletonFile {
    SkeletonFile { faces, edges, eta0: DEFAULT_ETA0, delta0: DEFAULT_DELTA0 }
}

const X: [f64; 3] = [1.0, 0.0, 0.0];
const Y: [f64; 3] = [0.0, 1.0, 0.0];
const Z: [f64; 3] = [0.0, 0.0, 1.0];

/// Square [0,a]² in the plane z = 0 with all four sides clamped.
pub fn clamped_square(a: f64) -> SkeletonFile {
    let v = [[0.0, 0.0, 0.0], [a, 0.0, 0.0], [a, a, 0.0], [0.0, a, 0.0]];
    let edges = (0..4).map(|i| edge(v[i], v[(i + 1) % 4], &[1], true)).collect();
    file(vec![face(1, &v, [0.0; 3], X, Y)], edges)
}

/// Square [0,a]² in the plane z = 0 clamped on the side x₂ = 0 only.
pub fn cantilever_square(a: f64) -> SkeletonFile {
    let v = [[0.0, 0.0, 0.0], [a, 0.0, 0.0], [a, a, 0.0], [0.0, a, 0.0]];
    file(vec![face(1, &v, [0.0; 3], X, Y)], vec![edge(v[0], v[1], &[1], true)])
}

/// Rectangle [0,lx]×[0,ly] in the plane z = 0 with all sides clamped.
pub fn clamped_rectangle(lx: f64, ly: f64) -> SkeletonFile {
    let v = [[0.0, 0.0, 0.0], [lx, 0.0, 0.0], [lx, ly, 0.0], [0.0, ly, 0.0]];
    let edges = (0..4).map(|i| edge(v[i], v[(i + 1) % 4], &[1], true)).collect();
    file(vec![face(1, &v, [0.0; 3], X, Y)], edges)
}

/// The same rectangle split into two coplanar faces along x = lx/2.
pub fn clamped_rectangle_split(lx: f64, ly: f64) -> SkeletonFile {
    let m = 0.5 * lx;
    let a = [[0.0, 0.0, 0.0], [m, 0.0, 0.0], [m, ly, 0.0], [0.0, ly, 0.0]];
    let b = [[m, 0.0, 0.0], [lx, 0.0, 0.0], [lx, ly, 0.0], [m, ly, 0.0]];
    let edges = vec![
        edge(a[0], a[1], &[1], true),
        edge(a[2], a[3], &[1], true),
        edge(a[3], a[0], &[1], true),
        edge(b[0], b[1], &[2], true),
        edge(b[1], b[2], &[2], true),
        edge(b[2], b[3], &[2], true),
        edge([m, 0.0, 0.0], [m, ly, 0.0], &[1, 2], false),
    ];
    file(vec![face(1, &a, [0.0; 3], X, Y), face(2, &b, [m, 0.0, 0.0], X, Y)], edges)
}

/// Two unit squares in z = 0 with no common edge.
pub fn disjoint_squares() -> SkeletonFile {
    let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
    let b = [[3.0, 0.0, 0.0], [4.0, 0.0, 0.0], [4.0, 1.0, 0.0], [3.0, 1.0, 0.0]];
    file(vec![face(1, &a, [0.0; 3], X, Y), face(2, &b, [3.0, 0.0, 0.0], X, Y)], vec![edge(a[0], a[1], &[1], true)])
}

/// Face 1: horizontal unit square z = 0, y ∈ [0,1], clamped along y = 1.
/// Face 2: vertical unit square y = 0, z ∈ [0,1]. They share the edge
/// from (0,0,0) to (1,0,0).
pub fn right_angle_pair() -> SkeletonFile {
    let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
    let b = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
    file(
        vec![face(1, &a, [0.0; 3], X, Y), face(2, &b, [0.0; 3], X, Z)],
        vec![edge(a[0], a[1], &[1, 2], false), edge(a[2], a[3], &[1], true)],
    )
}

/// Face 1: [−1,0]×[0,1] and face 2: [0,1]×[0,1], both in z = 0, sharing
/// the edge x = 0 and clamped along x = −1.
pub fn coplanar_pair() -> SkeletonFile {
    let a = [[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 1.0, 0.0]];
    let b = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
    file(
        vec![face(1, &a, [0.0; 3], X, Y), face(2, &b, [0.0; 3], X, Y)],
        vec![edge([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], &[1, 2], false), edge(a[3], a[0], &[1], true)],
    )
}

/// Three faces sharing the edge (0,0,0)–(1,0,0): two horizontal and one
/// vertical, clamped along the outer side y = 1 of face 1.
pub fn t_junction() -> SkeletonFile {
    let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
    let b = [[0.0, 0.0, 0.0], [0.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 0.0, 0.0]];
    let c = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
    file(
        vec![face(1, &a, [0.0; 3], X, Y), face(2, &b, [0.0; 3], X, Y), face(3, &c, [0.0; 3], X, Z)],
        vec![edge(a[0], a[1], &[1, 2, 3], false), edge(a[2], a[3], &[1], true)],
    )
}

/// Skeleton-space interpolant of a global displacement field given with its
/// global Jacobian; the deflection gradient is taken from the Jacobian.
pub fn interpolate_global<F, J>(space: &XSpace, value: F, jacobian: J) -> Vec<f64>
where
    F: Fn(usize, &Point3<f64>) -> Vector3<f64>,
    J: Fn(usize, &Point3<f64>) -> Matrix3<f64>,
{
    let faces = &space.skeleton.faces;
    space.interpolate(
        |f, p| faces[f].rotation().transpose() * value(f, &faces[f].to_global(p.x, p.y, 0.0)),
        |f, p| {
            let fc = &faces[f];
            let g = jacobian(f, &fc.to_global(p.x, p.y, 0.0)).transpose() * fc.e3;
            Vector2::new(fc.e1.dot(&g), fc.e2.dot(&g))
        },
    )
}

/// Bent hinge of [`right_angle_pair`]: face 1 deflects as c(1 − y)², face 2
/// moves rigidly by (0, 2cz, c). Continuous with continuous ∇̂ across the
/// junction and zero with its gradient on the clamped side.
pub fn right_angle_bent_hinge(space: &XSpace, c: f64) -> Vec<f64> {
    let horizontal = |f: usize| space.skeleton.faces[f].e3.z.abs() > 0.5;
    interpolate_global(
        space,
        |f, x| if horizontal(f) { Vector3::new(0.0, 0.0, c * (1.0 - x.y).powi(2)) } else { Vector3::new(0.0, 2.0 * c * x.z, c) },
        |f, x| {
            let mut j = Matrix3::zeros();
            if horizontal(f) {
                j[(2, 1)] = -2.0 * c * (1.0 - x.y);
            } else {
                j[(1, 2)] = 2.0 * c;
            }
            j
        },
    )
}
