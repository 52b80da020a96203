//! Plate skeleton: planar polygonal faces glued along edges, hypothesis
//! validation, the distance weight ρ and junction neighborhoods.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Matrix3, Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLANARITY_TOL: f64 = 1e-10;
pub const ORTHONORMALITY_TOL: f64 = 1e-12;
pub const DEFAULT_ETA0: f64 = 2.0;
pub const DEFAULT_DELTA0: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FaceRecord {
    pub id: usize,
    pub vertices: Vec<[f64; 3]>,
    pub origin: [f64; 3],
    pub e1: [f64; 3],
    pub e2: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeRecord {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub faces: Vec<usize>,
    #[serde(default)]
    pub clamped: bool,
}

/// On-disk skeleton description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SkeletonFile {
    pub faces: Vec<FaceRecord>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
}

fn default_eta0() -> f64 {
    DEFAULT_ETA0
}

fn default_delta0() -> f64 {
    DEFAULT_DELTA0
}

impl SkeletonFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    /// Applies x ↦ Qx + t to every point and frame vector.
    pub fn transformed(&self, q: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let p = |a: &[f64; 3]| {
            let v = q * Vector3::from(*a) + t;
            [v.x, v.y, v.z]
        };
        let r = |a: &[f64; 3]| {
            let v = q * Vector3::from(*a);
            [v.x, v.y, v.z]
        };
        SkeletonFile {
            faces: self
                .faces
                .iter()
                .map(|f| FaceRecord {
                    id: f.id,
                    vertices: f.vertices.iter().map(p).collect(),
                    origin: p(&f.origin),
                    e1: r(&f.e1),
                    e2: r(&f.e2),
                })
                .collect(),
            edges: self.edges.iter().map(|e| EdgeRecord { a: p(&e.a), b: p(&e.b), faces: e.faces.clone(), clamped: e.clamped }).collect(),
            eta0: self.eta0,
            delta0: self.delta0,
        }
    }

    /// Renames face ids through `map` (old id → new id).
    pub fn reindexed(&self, map: &BTreeMap<usize, usize>) -> Self {
        let mut out = self.clone();
        for f in &mut out.faces {
            f.id = map[&f.id];
        }
        for e in &mut out.edges {
            for id in &mut e.faces {
                *id = map[id];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Face {
    pub id: usize,
    pub polygon: Vec<Point3<f64>>,
    pub origin: Point3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
    /// Polygon in local coordinates (x1, x2).
    pub local_polygon: Vec<Point2<f64>>,
    /// For each polygon side i (vertex i → i+1), the declared edge lying on it.
    pub side_edges: Vec<Option<usize>>,
}

impl Face {
    /// Columns e1, e2, e3: maps local components to global ones.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.e1, self.e2, self.e3])
    }

    pub fn to_local(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(d.dot(&self.e1), d.dot(&self.e2), d.dot(&self.e3))
    }

    pub fn to_local_2d(&self, p: &Point3<f64>) -> Point2<f64> {
        let l = self.to_local(p);
        Point2::new(l.x, l.y)
    }

    pub fn to_global(&self, x1: f64, x2: f64, x3: f64) -> Point3<f64> {
        self.origin + self.e1 * x1 + self.e2 * x2 + self.e3 * x3
    }

    pub fn n_sides(&self) -> usize {
        self.polygon.len()
    }

    pub fn side(&self, i: usize) -> (Point2<f64>, Point2<f64>) {
        let n = self.local_polygon.len();
        (self.local_polygon[i], self.local_polygon[(i + 1) % n])
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.local_polygon).abs()
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.polygon {
            for b in &self.polygon {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// Closed point-in-polygon test in local coordinates.
    pub fn contains_local(&self, p: &Point2<f64>, tol: f64) -> bool {
        if self.boundary_distance(p) <= tol {
            return true;
        }
        point_in_polygon(&self.local_polygon, p)
    }

    pub fn boundary_distance(&self, p: &Point2<f64>) -> f64 {
        (0..self.n_sides())
            .map(|i| {
                let (a, b) = self.side(i);
                segment_distance_2d(p, &a, &b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the 3D point lies on the closed face.
    pub fn contains_point(&self, p: &Point3<f64>, tol: f64) -> bool {
        let l = self.to_local(p);
        l.z.abs() <= tol && self.contains_local(&Point2::new(l.x, l.y), tol)
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub direction: Vector3<f64>,
    pub length: f64,
    pub incident_faces: Vec<usize>,
    pub clamped: bool,
}

impl Edge {
    pub fn is_junction(&self) -> bool {
        self.incident_faces.len() >= 2
    }

    /// Arclength parameter of the orthogonal projection, clamped to [0, L].
    pub fn project(&self, p: &Point3<f64>) -> f64 {
        (p - self.a).dot(&self.direction).clamp(0.0, self.length)
    }

    pub fn point_at(&self, s: f64) -> Point3<f64> {
        self.a + self.direction * s
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        (p - self.point_at(self.project(p))).norm()
    }

    pub fn midpoint(&self) -> Point3<f64> {
        self.point_at(0.5 * self.length)
    }
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub point: Point3<f64>,
    pub incident_edges: Vec<usize>,
    /// Indices (into `Skeleton::faces`) of faces containing the vertex.
    pub faces: Vec<usize>,
    pub multi_face: bool,
}

/// Validated, immutable skeleton.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub faces: Vec<Face>,
    pub edges: Vec<Edge>,
    pub vertices: Vec<Vertex>,
    pub eta0: f64,
    pub delta0: f64,
    /// Geometric tolerance, relative to the overall size.
    pub tol: f64,
}

impl Skeleton {
    pub fn from_file(file: &SkeletonFile) -> Result<Self> {
        build(file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        build(&SkeletonFile::from_json(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        build(&SkeletonFile::load(path)?)
    }

    pub fn face_index(&self, id: usize) -> Option<usize> {
        self.faces.iter().position(|f| f.id == id)
    }

    pub fn junction_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.is_junction())
    }

    pub fn clamped_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.clamped)
    }

    /// Points of 𝒩.
    pub fn multi_face_vertices(&self) -> Vec<Point3<f64>> {
        self.vertices.iter().filter(|v| v.multi_face).map(|v| v.point).collect()
    }

    pub fn diameter(&self) -> f64 {
        let pts: Vec<&Point3<f64>> = self.faces.iter().flat_map(|f| f.polygon.iter()).collect();
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max((*a - *b).norm());
            }
        }
        d
    }

    /// ρ(x̂) = dist(x̂, 𝒩) for a point given in the local chart of face `face`
    /// (index into `faces`). When 𝒩 is empty, the distance to the farthest
    /// skeleton point plus one.
    pub fn rho(&self, face: usize, p: &Point2<f64>) -> f64 {
        let x = self.faces[face].to_global(p.x, p.y, 0.0);
        self.rho_global(&x)
    }

    pub fn rho_global(&self, x: &Point3<f64>) -> f64 {
        let n = self.multi_face_vertices();
        if n.is_empty() {
            let far = self.faces.iter().flat_map(|f| f.polygon.iter()).map(|q| (q - x).norm()).fold(0.0, f64::max);
            return far + 1.0;
        }
        n.iter().map(|q| (q - x).norm()).fold(f64::INFINITY, f64::min)
    }

    pub fn junction_region(&self, edge: usize, delta: f64, factor: f64) -> JunctionRegion {
        junction_region(self, edge, delta, factor)
    }

    /// Kind of side `side` of face `face` (index into `faces`).
    pub fn side_kind(&self, face: usize, side: usize) -> SideKind {
        match self.faces[face].side_edges[side] {
            None => SideKind::Free,
            Some(e) => {
                let edge = &self.edges[e];
                if edge.clamped {
                    SideKind::Clamped
                } else if edge.is_junction() {
                    SideKind::Junction(e)
                } else {
                    SideKind::Free
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideKind {
    Free,
    Clamped,
    Junction(usize),
}

/// Membership predicate for {x : dist(x, J) < factor·η0·δ}.
#[derive(Debug, Clone)]
pub struct JunctionRegion {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

impl JunctionRegion {
    pub fn contains(&self, x: &Point3<f64>) -> bool {
        let d = self.b - self.a;
        let len2 = d.norm_squared();
        let s = if len2 > 0.0 { ((x - self.a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (x - (self.a + d * s)).norm() < self.radius
    }
}

pub fn junction_region(skeleton: &Skeleton, edge: usize, delta: f64, factor: f64) -> JunctionRegion {
    let e = &skeleton.edges[edge];
    JunctionRegion { a: e.a, b: e.b, radius: factor * skeleton.eta0 * delta }
}

/// Outcome of the H1–H3 checks.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub h1: bool,
    pub h2: bool,
    pub h3: bool,
    /// Face ids grouped by connected component of the adjacency graph.
    pub components: Vec<Vec<usize>>,
    /// Multi-face vertices violating H2, with the ids of the faces around them.
    pub h2_offenders: Vec<([f64; 3], Vec<usize>)>,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.h1 && self.h2 && self.h3
    }
}

fn connected_components(n: usize, links: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut c = i;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for &(a, b) in links {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

pub fn validate_hypotheses(skeleton: &Skeleton) -> ValidationReport {
    let nf = skeleton.faces.len();
    let mut messages = Vec::new();

    let mut links = Vec::new();
    for e in &skeleton.edges {
        for w in e.incident_faces.windows(2) {
            links.push((w[0], w[1]));
        }
    }
    let comps = connected_components(nf, &links);
    let h1 = comps.len() == 1;
    let components: Vec<Vec<usize>> = comps
        .iter()
        .map(|c| {
            let mut ids: Vec<usize> = c.iter().map(|&i| skeleton.faces[i].id).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    if !h1 {
        messages.push(format!("H1 failed: face adjacency graph has components {components:?}"));
    }

    let mut h2_offenders = Vec::new();
    for v in skeleton.vertices.iter().filter(|v| v.multi_face) {
        let local: Vec<usize> = v.faces.clone();
        let index: BTreeMap<usize, usize> = local.iter().enumerate().map(|(k, &f)| (f, k)).collect();
        let mut vlinks = Vec::new();
        for e in &skeleton.edges {
            if e.distance(&v.point) > skeleton.tol {
                continue;
            }
            let inc: Vec<usize> = e.incident_faces.iter().filter_map(|f| index.get(f).copied()).collect();
            for w in inc.windows(2) {
                vlinks.push((w[0], w[1]));
            }
        }
        if connected_components(local.len(), &vlinks).len() > 1 {
            let mut ids: Vec<usize> = local.iter().map(|&i| skeleton.faces[i].id).collect();
            ids.sort_unstable();
            let p = v.point;
            messages.push(format!("H2 failed at vertex ({}, {}, {}) with faces {ids:?}", p.x, p.y, p.z));
            h2_offenders.push(([p.x, p.y, p.z], ids));
        }
    }
    let h2 = h2_offenders.is_empty();

    let h3 = skeleton.edges.iter().any(|e| e.clamped);
    if !h3 {
        messages.push("H3 failed: no clamped edge".into());
    }
    ValidationReport { h1, h2, h3, components, h2_offenders, messages }
}

fn signed_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

fn point_in_polygon(poly: &[Point2<f64>], p: &Point2<f64>) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn segment_distance_2d(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + d * s)).norm()
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_intersect(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>, d: &Point2<f64>, tol: f64) -> bool {
    let r = b - a;
    let s = d - c;
    let denom = cross2(&r, &s);
    if denom.abs() > tol * r.norm() * s.norm() {
        let t = cross2(&(c - a), &s) / denom;
        let u = cross2(&(c - a), &r) / denom;
        return (-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&u);
    }
    segment_distance_2d(c, a, b) <= tol
        || segment_distance_2d(d, a, b) <= tol
        || segment_distance_2d(a, c, d) <= tol
        || segment_distance_2d(b, c, d) <= tol
}

fn to_point(a: &[f64; 3]) -> Point3<f64> {
    Point3::new(a[0], a[1], a[2])
}

fn build(file: &SkeletonFile) -> Result<Skeleton> {
    if file.faces.is_empty() {
        return Err(Error::Structural("skeleton has no faces".into()));
    }
    if !(file.eta0.is_finite() && file.eta0 > 0.0) {
        return Err(Error::Structural(format!("eta0 must be positive, got {}", file.eta0)));
    }
    if !(file.delta0.is_finite() && file.delta0 > 0.0) {
        return Err(Error::Structural(format!("delta0 must be positive, got {}", file.delta0)));
    }
    let mut ids = BTreeSet::new();
    for f in &file.faces {
        if !ids.insert(f.id) {
            return Err(Error::Structural(format!("duplicate face id {}", f.id)));
        }
    }
    let all_points: Vec<Point3<f64>> = file.faces.iter().flat_map(|f| f.vertices.iter().map(to_point)).collect();
    if all_points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(Error::Structural("non-finite vertex coordinate".into()));
    }
    let mut scale: f64 = 0.0;
    for a in &all_points {
        for b in &all_points {
            scale = scale.max((a - b).norm());
        }
    }
    if scale <= 0.0 {
        return Err(Error::Structural("degenerate skeleton".into()));
    }
    let tol = 1e-9 * scale;

    let mut faces = Vec::with_capacity(file.faces.len());
    for f in &file.faces {
        if f.vertices.len() < 3 {
            return Err(Error::Structural(format!("face {} has fewer than 3 vertices", f.id)));
        }
        let e1 = Vector3::from(f.e1);
        let e2 = Vector3::from(f.e2);
        if (e1.norm() - 1.0).abs() > ORTHONORMALITY_TOL
            || (e2.norm() - 1.0).abs() > ORTHONORMALITY_TOL
            || e1.dot(&e2).abs() > ORTHONORMALITY_TOL
        {
            return Err(Error::Structural(format!("face {} frame is not orthonormal", f.id)));
        }
        let e3 = e1.cross(&e2);
        let origin = to_point(&f.origin);
        let polygon: Vec<Point3<f64>> = f.vertices.iter().map(to_point).collect();
        let diam = polygon.iter().flat_map(|a| polygon.iter().map(move |b| (a - b).norm())).fold(0.0, f64::max);
        if diam <= 0.0 {
            return Err(Error::Structural(format!("face {} is degenerate", f.id)));
        }
        for p in &polygon {
            if (p - origin).dot(&e3).abs() > PLANARITY_TOL * diam {
                return Err(Error::Structural(format!("face {} is not planar", f.id)));
            }
        }
        let local_polygon: Vec<Point2<f64>> = polygon
            .iter()
            .map(|p| {
                let d = p - origin;
                Point2::new(d.dot(&e1), d.dot(&e2))
            })
            .collect();
        let n = local_polygon.len();
        let ftol = 1e-9 * diam;
        for i in 0..n {
            if (local_polygon[(i + 1) % n] - local_polygon[i]).norm() <= ftol {
                return Err(Error::Structural(format!("face {} has a zero-length side", f.id)));
            }
        }
        if signed_area(&local_polygon).abs() <= ftol * diam {
            return Err(Error::Structural(format!("face {} has zero area", f.id)));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (local_polygon[i], local_polygon[(i + 1) % n]);
                let (c, d) = (local_polygon[j], local_polygon[(j + 1) % n]);
                if segments_intersect(&a, &b, &c, &d, ftol) {
                    return Err(Error::Structural(format!("face {} polygon is not simple", f.id)));
                }
            }
        }
        faces.push(Face { id: f.id, polygon, origin, e1, e2, e3, local_polygon, side_edges: vec![None; n] });
    }

    let id_to_index: BTreeMap<usize, usize> = faces.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
    let mut edges = Vec::with_capacity(file.edges.len());
    for (k, e) in file.edges.iter().enumerate() {
        let a = to_point(&e.a);
        let b = to_point(&e.b);
        let length = (b - a).norm();
        if length <= tol {
            return Err(Error::Structural(format!("edge {k} has zero length")));
        }
        let mut incident = Vec::new();
        for id in &e.faces {
            let idx = *id_to_index.get(id).ok_or_else(|| Error::Structural(format!("edge {k} references unknown face {id}")))?;
            if !incident.contains(&idx) {
                incident.push(idx);
            }
        }
        incident.sort_unstable();
        if incident.is_empty() {
            return Err(Error::Structural(format!("edge {k} has no incident face")));
        }
        edges.push(Edge { a, b, direction: (b - a) / length, length, incident_faces: incident, clamped: e.clamped });
    }

    // Each incident face must carry the edge as one of its polygon sides, and
    // no face may carry it without being listed.
    for (k, e) in edges.iter().enumerate() {
        for (fi, face) in faces.iter_mut().enumerate() {
            let n = face.polygon.len();
            let mut found = None;
            for i in 0..n {
                let p = face.polygon[i];
                let q = face.polygon[(i + 1) % n];
                let same = ((p - e.a).norm() <= tol && (q - e.b).norm() <= tol) || ((p - e.b).norm() <= tol && (q - e.a).norm() <= tol);
                if same {
                    found = Some(i);
                }
            }
            let listed = e.incident_faces.contains(&fi);
            match (found, listed) {
                (Some(i), true) => {
                    if let Some(prev) = face.side_edges[i] {
                        return Err(Error::Structural(format!("edges {prev} and {k} both lie on side {i} of face {}", face.id)));
                    }
                    face.side_edges[i] = Some(k);
                }
                (None, true) => return Err(Error::Structural(format!("edge {k} is not a side of its incident face {}", face.id))),
                (Some(_), false) => return Err(Error::Structural(format!("edge {k} is a side of face {} but does not list it", face.id))),
                (None, false) => {}
            }
        }
    }

    let mut points: Vec<Point3<f64>> = Vec::new();
    let mut add = |p: Point3<f64>| {
        if !points.iter().any(|q| (q - p).norm() <= tol) {
            points.push(p);
        }
    };
    for f in &faces {
        for p in &f.polygon {
            add(*p);
        }
    }
    for e in &edges {
        add(e.a);
        add(e.b);
    }
    let vertices = points
        .into_iter()
        .map(|p| {
            let incident_edges: Vec<usize> =
                edges.iter().enumerate().filter(|(_, e)| (e.a - p).norm() <= tol || (e.b - p).norm() <= tol).map(|(k, _)| k).collect();
            let vf: Vec<usize> = faces.iter().enumerate().filter(|(_, f)| f.contains_point(&p, tol)).map(|(i, _)| i).collect();
            Vertex { point: p, incident_edges, multi_face: vf.len() >= 2, faces: vf }
        })
        .collect();

    Ok(Skeleton { faces, edges, vertices, eta0: file.eta0, delta0: file.delta0, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn single_clamped_square_passes() {
        let s = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
        let r = validate_hypotheses(&s);
        assert!(r.h1 && r.h2 && r.h3);
        assert!(s.multi_face_vertices().is_empty());
    }

    #[test]
    fn disjoint_squares_fail_h1() {
        let s = Skeleton::from_file(&fixtures::disjoint_squares()).unwrap();
        let r = validate_hypotheses(&s);
        assert!(!r.h1);
        assert_eq!(r.components.len(), 2);
    }

    #[test]
    fn t_junction_passes() {
        let s = Skeleton::from_file(&fixtures::t_junction()).unwrap();
        let r = validate_hypotheses(&s);
        assert!(r.passed(), "{:?}", r.messages);
        assert_eq!(s.junction_edges().count(), 1);
        assert_eq!(s.multi_face_vertices().len(), 2);
    }

    #[test]
    fn faces_touching_at_a_corner_fail_h2() {
        let mut f = fixtures::clamped_square(1.0);
        f.faces.push(FaceRecord {
            id: 7,
            vertices: vec![[1.0, 1.0, 0.0], [2.0, 1.0, 0.0], [2.0, 2.0, 0.0], [1.0, 2.0, 0.0]],
            origin: [1.0, 1.0, 0.0],
            e1: [1.0, 0.0, 0.0],
            e2: [0.0, 1.0, 0.0],
        });
        let s = Skeleton::from_file(&f).unwrap();
        let r = validate_hypotheses(&s);
        assert!(!r.h2 && !r.h1);
        assert_eq!(r.h2_offenders.len(), 1);
    }

    #[test]
    fn missing_clamp_fails_h3() {
        let mut f = fixtures::t_junction();
        for e in &mut f.edges {
            e.clamped = false;
        }
        let r = validate_hypotheses(&Skeleton::from_file(&f).unwrap());
        assert!(!r.h3 && r.h1);
    }

    #[test]
    fn non_planar_face_is_structural() {
        let mut f = fixtures::clamped_square(1.0);
        f.faces[0].vertices[2][2] = 1e-3;
        assert!(matches!(Skeleton::from_file(&f), Err(Error::Structural(_))));
    }

    #[test]
    fn zero_length_edge_is_structural() {
        let mut f = fixtures::clamped_square(1.0);
        f.edges[0].b = f.edges[0].a;
        assert!(matches!(Skeleton::from_file(&f), Err(Error::Structural(_))));
    }

    #[test]
    fn non_orthonormal_frame_is_structural() {
        let mut f = fixtures::clamped_square(1.0);
        f.faces[0].e2 = [0.1, 1.0, 0.0];
        assert!(matches!(Skeleton::from_file(&f), Err(Error::Structural(_))));
    }

    #[test]
    fn self_intersecting_polygon_is_structural() {
        let mut f = fixtures::clamped_square(1.0);
        f.faces[0].vertices = vec![[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        f.edges.clear();
        assert!(matches!(Skeleton::from_file(&f), Err(Error::Structural(_))));
    }

    #[test]
    fn rho_examples() {
        let s = Skeleton::from_file(&fixtures::coplanar_pair()).unwrap();
        let n = s.multi_face_vertices();
        assert!(n.iter().any(|p| p.coords.norm() < 1e-12));
        let f = s.face_index(1).unwrap();
        let r = s.rho(f, &Point2::new(-0.3, 0.4));
        assert!((r - 0.5).abs() < 1e-15);
        assert_eq!(s.rho(f, &Point2::new(0.0, 0.0)), 0.0);

        let single = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
        let v = single.rho(0, &Point2::new(0.5, 0.5));
        assert!(v.is_finite() && v > 1.0);
    }

    #[test]
    fn junction_region_examples() {
        let s = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
        let (j, _) = s.junction_edges().next().unwrap();
        let delta = 0.1;
        let region = s.junction_region(j, delta, 1.0);
        let eta = s.eta0 * delta;
        assert!(region.contains(&s.edges[j].midpoint()));
        assert!(!region.contains(&Point3::new(0.5, 2.0 * eta, 0.0)));
        assert!(region.contains(&Point3::new(0.5, 0.99 * eta, 0.0)));
    }
}
