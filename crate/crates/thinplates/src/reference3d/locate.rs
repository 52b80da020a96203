//! Point location in the skeleton mesh and evaluation of limit fields at
//! arbitrary face points.

use nalgebra::Point2;

use crate::spaces::XSpace;

/// Bucket grid over the triangles of every face.
#[derive(Debug, Clone)]
pub struct TriangleLocator {
    faces: Vec<FaceBuckets>,
}

#[derive(Debug, Clone)]
struct FaceBuckets {
    min: Point2<f64>,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl TriangleLocator {
    pub fn new(space: &XSpace) -> Self {
        let faces = space
            .mesh
            .faces
            .iter()
            .map(|fm| {
                let (mut min, mut max) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
                for p in &fm.nodes {
                    min = Point2::new(min.x.min(p.x), min.y.min(p.y));
                    max = Point2::new(max.x.max(p.x), max.y.max(p.y));
                }
                let nt = fm.triangles.len().max(1);
                let span = (max.x - min.x).max(max.y - min.y).max(1e-300);
                let per = (nt as f64).sqrt().ceil().max(1.0);
                let cell = span / per;
                let nx = ((max.x - min.x) / cell).floor() as usize + 1;
                let ny = ((max.y - min.y) / cell).floor() as usize + 1;
                let mut buckets = vec![Vec::new(); nx * ny];
                for t in 0..fm.triangles.len() {
                    let p = fm.triangle_points(t);
                    let lo = |c: f64, m: f64, n: usize| (((c - m) / cell).floor().max(0.0) as usize).min(n - 1);
                    let (x0, x1) =
                        (p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min), p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max));
                    let (y0, y1) =
                        (p.iter().map(|q| q.y).fold(f64::INFINITY, f64::min), p.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max));
                    for j in lo(y0, min.y, ny)..=lo(y1, min.y, ny) {
                        for i in lo(x0, min.x, nx)..=lo(x1, min.x, nx) {
                            buckets[i + nx * j].push(t);
                        }
                    }
                }
                FaceBuckets { min, cell, nx, ny, buckets }
            })
            .collect();
        Self { faces }
    }

    /// Triangle of face `face` containing `p` (the closest one when `p` lies
    /// marginally outside the face).
    pub fn locate(&self, space: &XSpace, face: usize, p: &Point2<f64>) -> usize {
        let fb = &self.faces[face];
        let fm = &space.mesh.faces[face];
        let i = (((p.x - fb.min.x) / fb.cell).floor().max(0.0) as usize).min(fb.nx - 1);
        let j = (((p.y - fb.min.y) / fb.cell).floor().max(0.0) as usize).min(fb.ny - 1);
        let outside = |t: usize| {
            let q = fm.triangle_points(t);
            let area2 = 2.0 * fm.triangle_area(t);
            (0..3)
                .map(|k| {
                    let a = q[(k + 1) % 3];
                    let b = q[(k + 2) % 3];
                    -((b - a).perp(&(p - a)) / area2)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut best = (f64::INFINITY, 0);
        for &t in &fb.buckets[i + fb.nx * j] {
            let o = outside(t);
            if o <= 1e-12 {
                return t;
            }
            if o < best.0 {
                best = (o, t);
            }
        }
        for t in 0..fm.triangles.len() {
            let o = outside(t);
            if o < best.0 {
                best = (o, t);
            }
        }
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mesh::MeshOptions;
    use crate::skeleton::Skeleton;
    use crate::spaces::{barycentric_point, build_spaces};

    #[test]
    fn finds_containing_triangles() {
        let s = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
        let x = build_spaces(&s, &MeshOptions::new(0.25)).unwrap();
        let loc = TriangleLocator::new(&x);
        for (f, fm) in x.mesh.faces.iter().enumerate() {
            for t in 0..fm.triangles.len() {
                let c = barycentric_point(&fm.triangle_points(t), &[0.2, 0.3, 0.5]);
                assert_eq!(loc.locate(&x, f, &c), t);
            }
        }
    }
}
