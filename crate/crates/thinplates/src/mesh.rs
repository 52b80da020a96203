//! Conforming triangulations of the skeleton faces with nodes identified
//! across shared edges.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Point2, Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{segment_distance_2d, SideKind, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshOptions {
    pub mesh_size: f64,
    /// Refine toward multi-face vertices with spacings h/8, h/4, h/2.
    pub grading: bool,
}

impl MeshOptions {
    pub fn new(mesh_size: f64) -> Self {
        Self { mesh_size, grading: true }
    }

    pub fn uniform(mesh_size: f64) -> Self {
        Self { mesh_size, grading: false }
    }
}

/// Normalized node distribution on [0, 1], symmetric about 1/2.
pub fn distribution(length: f64, h: f64, graded: bool) -> Vec<f64> {
    let uniform = |n: usize| (0..=n).map(|i| i as f64 / n as f64).collect::<Vec<f64>>();
    if !graded || length < 4.0 * h {
        let n = ((length / h) - 1e-9).ceil().max(1.0) as usize;
        return uniform(n);
    }
    let ends = [h / 8.0, h / 4.0, h / 2.0];
    let end_len: f64 = ends.iter().sum();
    let middle = length - 2.0 * end_len;
    let m = ((middle / h) - 1e-9).ceil().max(1.0) as usize;
    let mut x = vec![0.0];
    for e in ends {
        let last = *x.last().unwrap();
        x.push(last + e);
    }
    for k in 1..m {
        x.push(end_len + middle * k as f64 / m as f64);
    }
    x.push(length - end_len);
    for e in ends.iter().rev() {
        let last = *x.last().unwrap();
        x.push(last + e);
    }
    let n = x.len() - 1;
    x[n] = length;
    // Symmetrize exactly.
    let mut t: Vec<f64> = x.iter().map(|v| v / length).collect();
    for i in 0..=n / 2 {
        let a = 0.5 * (t[i] + (1.0 - t[n - i]));
        t[i] = a;
        t[n - i] = 1.0 - a;
    }
    t
}

#[derive(Debug, Clone)]
pub struct MeshEdge {
    /// Local node ids ordered by increasing global id.
    pub a: usize,
    pub b: usize,
    pub tangent: Vector2<f64>,
    /// Fixed unit normal (tangent rotated by −90°).
    pub normal: Vector2<f64>,
    pub length: f64,
    pub midpoint: Point2<f64>,
    /// Polygon side carrying the edge, if on the boundary.
    pub side: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FaceMesh {
    /// Index into `Skeleton::faces`.
    pub face: usize,
    pub nodes: Vec<Point2<f64>>,
    pub node_global: Vec<usize>,
    /// Polygon sides containing each node.
    pub node_sides: Vec<Vec<usize>>,
    /// Counter-clockwise triangles.
    pub triangles: Vec<[usize; 3]>,
    /// Mesh edges of each triangle: (v0v1), (v1v2), (v2v0).
    pub tri_edges: Vec<[usize; 3]>,
    pub edges: Vec<MeshEdge>,
}

impl FaceMesh {
    pub fn triangle_points(&self, t: usize) -> [Point2<f64>; 3] {
        self.triangles[t].map(|n| self.nodes[n])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * ((b - a).perp(&(c - a)))
    }
}

#[derive(Debug, Clone)]
pub struct SkeletonMesh {
    pub faces: Vec<FaceMesh>,
    pub nodes: Vec<Point3<f64>>,
    /// (face, local node) pairs for every global node, ascending by face.
    pub node_owners: Vec<Vec<(usize, usize)>>,
    pub clamped: Vec<bool>,
    /// Global node lies on a junction edge.
    pub junction: Vec<bool>,
    pub options: MeshOptions,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = i;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Builds the conforming skeleton mesh.
pub fn build_mesh(skeleton: &Skeleton, options: &MeshOptions) -> Result<SkeletonMesh> {
    if !(options.mesh_size > 0.0) {
        return Err(Error::Input("mesh_size must be positive".into()));
    }
    let nf = skeleton.faces.len();
    for f in &skeleton.faces {
        if f.n_sides() > 4 {
            return Err(Error::Mesh(format!("face {} has {} sides; only triangles and quadrilaterals are meshed", f.id, f.n_sides())));
        }
    }
    let offsets: Vec<usize> = skeleton
        .faces
        .iter()
        .scan(0, |acc, f| {
            let o = *acc;
            *acc += f.n_sides();
            Some(o)
        })
        .collect();
    let total_sides: usize = skeleton.faces.iter().map(|f| f.n_sides()).sum();
    let mut uf = UnionFind::new(total_sides);
    for (fi, f) in skeleton.faces.iter().enumerate() {
        let o = offsets[fi];
        if f.n_sides() == 4 {
            uf.union(o, o + 2);
            uf.union(o + 1, o + 3);
        } else {
            uf.union(o, o + 1);
            uf.union(o, o + 2);
        }
    }
    for (k, _) in skeleton.edges.iter().enumerate() {
        let mut members = Vec::new();
        for (fi, f) in skeleton.faces.iter().enumerate() {
            for (s, e) in f.side_edges.iter().enumerate() {
                if *e == Some(k) {
                    members.push(offsets[fi] + s);
                }
            }
        }
        for w in members.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let multi = skeleton.multi_face_vertices();
    let touches_multi = |fi: usize, s: usize| {
        let f = &skeleton.faces[fi];
        let a = f.polygon[s];
        let b = f.polygon[(s + 1) % f.n_sides()];
        multi.iter().any(|p| (p - a).norm() <= skeleton.tol || (p - b).norm() <= skeleton.tol)
    };
    let mut class_len: BTreeMap<usize, f64> = BTreeMap::new();
    let mut class_graded: BTreeMap<usize, bool> = BTreeMap::new();
    let mut class_has_tri: BTreeMap<usize, bool> = BTreeMap::new();
    for (fi, f) in skeleton.faces.iter().enumerate() {
        for s in 0..f.n_sides() {
            let c = uf.find(offsets[fi] + s);
            let (a, b) = f.side(s);
            let len = (b - a).norm();
            let e = class_len.entry(c).or_insert(0.0);
            *e = e.max(len);
            *class_graded.entry(c).or_insert(false) |= options.grading && touches_multi(fi, s);
            *class_has_tri.entry(c).or_insert(false) |= f.n_sides() == 3;
        }
    }
    let class_dist: BTreeMap<usize, Vec<f64>> = class_len
        .iter()
        .map(|(&c, &len)| {
            let graded = class_graded[&c] && !class_has_tri[&c];
            (c, distribution(len, options.mesh_size, graded))
        })
        .collect();

    let mut faces = Vec::with_capacity(nf);
    for (fi, f) in skeleton.faces.iter().enumerate() {
        let o = offsets[fi];
        let (nodes, triangles) = if f.n_sides() == 4 {
            let d1 = &class_dist[&uf.find(o)];
            let d2 = &class_dist[&uf.find(o + 1)];
            quad_mesh(&f.local_polygon, d1, d2, f.id)?
        } else {
            let n = class_dist[&uf.find(o)].len() - 1;
            triangle_mesh(&f.local_polygon, n)
        };
        faces.push(FaceMesh {
            face: fi,
            nodes,
            node_global: Vec::new(),
            node_sides: Vec::new(),
            triangles,
            tri_edges: Vec::new(),
            edges: Vec::new(),
        });
    }

    // Global node identification through a spatial hash.
    let scale = skeleton.diameter().max(1e-300);
    let cell = 1e-7 * scale;
    let tol = 1e-9 * scale;
    let mut hash: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut nodes: Vec<Point3<f64>> = Vec::new();
    let mut node_owners: Vec<Vec<(usize, usize)>> = Vec::new();
    for (fi, fm) in faces.iter_mut().enumerate() {
        let f = &skeleton.faces[fi];
        let mut globals = Vec::with_capacity(fm.nodes.len());
        for (ln, p) in fm.nodes.iter().enumerate() {
            let x = f.to_global(p.x, p.y, 0.0);
            let key = ((x.x / cell).round() as i64, (x.y / cell).round() as i64, (x.z / cell).round() as i64);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = hash.get(&(key.0 + dx, key.1 + dy, key.2 + dz)) {
                            for &g in list {
                                if (nodes[g] - x).norm() <= tol {
                                    found = Some(g);
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            let g = match found {
                Some(g) => g,
                None => {
                    nodes.push(x);
                    node_owners.push(Vec::new());
                    hash.entry(key).or_default().push(nodes.len() - 1);
                    nodes.len() - 1
                }
            };
            node_owners[g].push((fi, ln));
            globals.push(g);
        }
        fm.node_global = globals;
        fm.node_sides = fm
            .nodes
            .iter()
            .map(|p| {
                (0..f.n_sides())
                    .filter(|&s| {
                        let (a, b) = f.side(s);
                        segment_distance_2d(p, &a, &b) <= skeleton.tol
                    })
                    .collect()
            })
            .collect();
    }

    let mut clamped = vec![false; nodes.len()];
    let mut junction = vec![false; nodes.len()];
    for (fi, fm) in faces.iter().enumerate() {
        for (ln, sides) in fm.node_sides.iter().enumerate() {
            for &s in sides {
                match skeleton.side_kind(fi, s) {
                    SideKind::Clamped => clamped[fm.node_global[ln]] = true,
                    SideKind::Junction(_) => junction[fm.node_global[ln]] = true,
                    SideKind::Free => {}
                }
            }
        }
    }

    for fm in faces.iter_mut() {
        let mut edge_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut edges = Vec::new();
        let mut tri_edges = Vec::with_capacity(fm.triangles.len());
        for tri in &fm.triangles {
            let mut ids = [0; 3];
            for k in 0..3 {
                let (p, q) = (tri[k], tri[(k + 1) % 3]);
                let (a, b) = if fm.node_global[p] < fm.node_global[q] { (p, q) } else { (q, p) };
                let id = *edge_ids.entry((a, b)).or_insert_with(|| {
                    let d = fm.nodes[b] - fm.nodes[a];
                    let length = d.norm();
                    let tangent = d / length;
                    let side = fm.node_sides[a].iter().find(|s| fm.node_sides[b].contains(s)).copied();
                    edges.push(MeshEdge {
                        a,
                        b,
                        tangent,
                        normal: Vector2::new(tangent.y, -tangent.x),
                        length,
                        midpoint: Point2::from((fm.nodes[a].coords + fm.nodes[b].coords) * 0.5),
                        side,
                    });
                    edges.len() - 1
                });
                ids[k] = id;
            }
            tri_edges.push(ids);
        }
        fm.edges = edges;
        fm.tri_edges = tri_edges;
    }

    Ok(SkeletonMesh { faces, nodes, node_owners, clamped, junction, options: *options })
}

fn orient(nodes: &[Point2<f64>], t: [usize; 3]) -> [usize; 3] {
    let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
    if (b - a).perp(&(c - a)) < 0.0 {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

fn quad_mesh(poly: &[Point2<f64>], d1: &[f64], d2: &[f64], id: usize) -> Result<(Vec<Point2<f64>>, Vec<[usize; 3]>)> {
    let map = |s: f64, t: f64| {
        Point2::from(
            poly[0].coords * ((1.0 - s) * (1.0 - t))
                + poly[1].coords * (s * (1.0 - t))
                + poly[2].coords * (s * t)
                + poly[3].coords * ((1.0 - s) * t),
        )
    };
    let (n1, n2) = (d1.len(), d2.len());
    let mut nodes = Vec::with_capacity(n1 * n2);
    for &t in d2 {
        for &s in d1 {
            nodes.push(map(s, t));
        }
    }
    let idx = |i: usize, j: usize| i + n1 * j;
    let mut tris = Vec::with_capacity(2 * (n1 - 1) * (n2 - 1));
    for j in 0..n2 - 1 {
        for i in 0..n1 - 1 {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            for t in [[a, b, c], [a, c, d]] {
                let t = orient(&nodes, t);
                let (p, q, r) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
                if (q - p).perp(&(r - p)).abs() <= 1e-14 * (q - p).norm_squared().max((r - p).norm_squared()) {
                    return Err(Error::Mesh(format!("degenerate triangle on face {id}")));
                }
                tris.push(t);
            }
        }
    }
    // A folded bilinear map shows up as inconsistent orientation.
    let sign = |t: &[usize; 3]| {
        let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
        (b - a).perp(&(c - a))
    };
    let raw_ok = (0..n2 - 1).all(|j| {
        (0..n1 - 1).all(|i| {
            let (a, b, c) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1));
            let s0 = sign(&[a, b, c]);
            let s1 = sign(&[idx(0, 0), idx(1, 0), idx(1, 1)]);
            s0 * s1 > 0.0
        })
    });
    if !raw_ok {
        return Err(Error::Mesh(format!("face {id} is not convex enough for a structured mesh")));
    }
    Ok((nodes, tris))
}

fn triangle_mesh(poly: &[Point2<f64>], n: usize) -> (Vec<Point2<f64>>, Vec<[usize; 3]>) {
    let mut nodes = Vec::new();
    let mut index = BTreeMap::new();
    for j in 0..=n {
        for i in 0..=(n - j) {
            let p = poly[0] + (poly[1] - poly[0]) * (i as f64 / n as f64) + (poly[2] - poly[0]) * (j as f64 / n as f64);
            index.insert((i, j), nodes.len());
            nodes.push(p);
        }
    }
    let mut tris = Vec::new();
    for j in 0..n {
        for i in 0..(n - j) {
            let a = index[&(i, j)];
            let b = index[&(i + 1, j)];
            let c = index[&(i, j + 1)];
            tris.push(orient(&nodes, [a, b, c]));
            if i + j + 1 < n {
                let d = index[&(i + 1, j + 1)];
                tris.push(orient(&nodes, [b, d, c]));
            }
        }
    }
    (nodes, tris)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::skeleton::{EdgeRecord, FaceRecord, SkeletonFile};

    #[test]
    fn distributions_are_symmetric() {
        for graded in [false, true] {
            let d = distribution(1.0, 0.1, graded);
            let n = d.len() - 1;
            for i in 0..=n {
                assert!((d[i] + d[n - i] - 1.0).abs() < 1e-15);
            }
            assert!(d.windows(2).all(|w| w[1] > w[0]));
        }
        let g = distribution(1.0, 0.1, true);
        assert!((g[1] - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn square_mesh_counts() {
        let s = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
        let m = build_mesh(&s, &MeshOptions::new(0.25)).unwrap();
        assert_eq!(m.nodes.len(), 25);
        assert_eq!(m.faces[0].triangles.len(), 32);
        assert_eq!(m.clamped.iter().filter(|c| **c).count(), 16);
        let area: f64 = (0..32).map(|t| m.faces[0].triangle_area(t)).sum();
        assert!((area - 1.0).abs() < 1e-14);
    }

    #[test]
    fn shared_edge_nodes_coincide() {
        let s = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
        let m = build_mesh(&s, &MeshOptions::new(0.2)).unwrap();
        let shared = m.node_owners.iter().filter(|o| o.len() == 2).count();
        let on_j = m.faces[0].nodes.iter().filter(|p| p.y.abs() < 1e-12).count();
        assert_eq!(shared, on_j);
        assert!(m.junction.iter().filter(|j| **j).count() == on_j);
    }

    #[test]
    fn triangle_face_mesh() {
        let f = SkeletonFile {
            faces: vec![FaceRecord {
                id: 1,
                vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                origin: [0.0; 3],
                e1: [1.0, 0.0, 0.0],
                e2: [0.0, 1.0, 0.0],
            }],
            edges: vec![EdgeRecord { a: [0.0, 0.0, 0.0], b: [1.0, 0.0, 0.0], faces: vec![1], clamped: true }],
            eta0: 2.0,
            delta0: 0.2,
        };
        let s = Skeleton::from_file(&f).unwrap();
        let m = build_mesh(&s, &MeshOptions::new(0.25)).unwrap();
        assert_eq!(m.faces[0].triangles.len(), 36);
        let area: f64 = (0..36).map(|t| m.faces[0].triangle_area(t)).sum();
        assert!((area - 0.5).abs() < 1e-14);
        assert!((0..36).all(|t| m.faces[0].triangle_area(t) > 0.0));
    }

    #[test]
    fn pentagon_is_rejected() {
        let f = SkeletonFile {
            faces: vec![FaceRecord {
                id: 1,
                vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.5, 0.5, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
                origin: [0.0; 3],
                e1: [1.0, 0.0, 0.0],
                e2: [0.0, 1.0, 0.0],
            }],
            edges: vec![],
            eta0: 2.0,
            delta0: 0.2,
        };
        let s = Skeleton::from_file(&f).unwrap();
        assert!(matches!(build_mesh(&s, &MeshOptions::new(0.25)), Err(Error::Mesh(_))));
    }
}
