//! Stitched multi-plate hex meshes of S_δ.
//!
//! Every face is meshed as a structured grid on its own slab. Junctions must
//! be perpendicular or coplanar. Near a perpendicular junction side the grid
//! perpendicular to the side carries the through-thickness planes of the
//! other plate, so the slabs meet conformingly. A cell whose center lies in
//! the slab of an earlier plate is dropped and the coincident nodes share
//! their degrees of freedom.

use std::collections::HashMap;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{DisplacementSample3D, PlateGrid3D, Stitch};
use crate::skeleton::{SideKind, Skeleton};

/// In-plane target cell size and number of through-thickness node planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub mesh_size: f64,
    pub nz: usize,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self { mesh_size: 1.0 / 16.0, nz: 5 }
    }
}

/// Role of a plate-grid node in the global system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeDof {
    /// Unknown node number (three scalar unknowns each).
    Free(usize),
    /// Prescribed value (zero on Γ_{0,δ}).
    Fixed,
    /// Belongs to dropped cells only.
    Inactive,
}

/// Geometry and numbering of the stitched mesh.
#[derive(Debug, Clone)]
pub struct JunctionMesh {
    /// Plate grids, active cells and stitches; values are zero.
    pub template: DisplacementSample3D,
    pub node_dof: Vec<Vec<NodeDof>>,
    /// Number of free nodes.
    pub n_free: usize,
    /// Skeleton face index of each plate.
    pub face_of_plate: Vec<usize>,
}

impl JunctionMesh {
    pub fn n_plates(&self) -> usize {
        self.template.plates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Junction {
    None,
    Coplanar(usize),
    Perpendicular(usize),
}

/// Parametric direction 0 (s, along side 0) or 1 (t, along side 3).
fn side_direction(side: usize) -> usize {
    if side.is_multiple_of(2) {
        0
    } else {
        1
    }
}

/// Grid corner where the parameter along grid side `side` is zero.
fn side_start(side: usize) -> usize {
    match side {
        0 => 0,
        1 => 1,
        2 => 3,
        _ => 0,
    }
}

/// Polygon vertices used as grid corners 0..3, counter-clockwise in the
/// face frame.
pub fn grid_corners(face: &crate::skeleton::Face) -> [usize; 4] {
    let p = &face.local_polygon;
    let area: f64 = (0..4).map(|i| p[i].coords.perp(&p[(i + 1) % 4].coords)).sum();
    if area > 0.0 {
        [0, 1, 2, 3]
    } else {
        [0, 3, 2, 1]
    }
}

/// Polygon side joining grid corners k and k + 1.
fn polygon_side(gc: &[usize; 4], k: usize) -> usize {
    let (a, b) = (gc[k], gc[(k + 1) % 4]);
    if (a + 1) % 4 == b {
        a
    } else {
        b
    }
}

/// Union-find over (face, direction) carrying the relative orientation.
struct OrientedUnion {
    parent: Vec<usize>,
    flip: Vec<bool>,
}

impl OrientedUnion {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), flip: vec![false; n] }
    }

    fn find(&mut self, i: usize) -> (usize, bool) {
        if self.parent[i] == i {
            return (i, false);
        }
        let (r, f) = self.find(self.parent[i]);
        self.parent[i] = r;
        self.flip[i] ^= f;
        (r, self.flip[i])
    }

    fn union(&mut self, a: usize, b: usize, reversed: bool) -> Result<()> {
        let (ra, fa) = self.find(a);
        let (rb, fb) = self.find(b);
        if ra == rb {
            if fa ^ fb != reversed {
                return Err(Error::Mesh("inconsistent orientation of shared junction sides".into()));
            }
            return Ok(());
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        self.flip[hi] = fa ^ fb ^ reversed;
        Ok(())
    }
}

/// Parametric nodes on [0, 1] for a direction of physical length `length`:
/// `m` equal steps of δ/m at each refined end, uniform cells of size ≤ h in
/// between.
pub fn refined_distribution(length: f64, h: f64, delta: f64, m: usize, ends: [bool; 2]) -> Result<Vec<f64>> {
    let a = if ends[0] { delta } else { 0.0 };
    let b = if ends[1] { length - delta } else { length };
    if b - a <= 1e-12 * length {
        return Err(Error::Mesh(format!("side of length {length} too short for junction layers of width {delta}")));
    }
    let mut x = Vec::new();
    if ends[0] {
        x.extend((0..m).map(|k| k as f64 * delta / m as f64));
    }
    let n = (((b - a) / h) - 1e-9).ceil().max(1.0) as usize;
    x.extend((0..=n).map(|k| a + (b - a) * k as f64 / n as f64));
    if ends[1] {
        x.extend((0..m).rev().map(|k| length - k as f64 * delta / m as f64));
    }
    Ok(x.into_iter().map(|v| v / length).collect())
}

fn classify_sides(skeleton: &Skeleton) -> Result<Vec<Vec<Junction>>> {
    let tol = 1e-9;
    for (_, e) in skeleton.junction_edges() {
        let normals: Vec<Vector3<f64>> = e.incident_faces.iter().map(|&f| skeleton.faces[f].rotation().column(2).into_owned()).collect();
        for a in 0..normals.len() {
            for b in a + 1..normals.len() {
                let c = normals[a].dot(&normals[b]).abs();
                if c > tol && (1.0 - c).abs() > tol {
                    return Err(Error::Mesh("3D meshing supports perpendicular or coplanar junctions only".into()));
                }
            }
        }
    }
    let mut out = Vec::new();
    for (fi, f) in skeleton.faces.iter().enumerate() {
        if f.n_sides() != 4 {
            return Err(Error::Mesh(format!("3D meshing needs quadrilateral faces, face {} has {} sides", f.id, f.n_sides())));
        }
        let n = f.rotation().column(2).into_owned();
        let gc = grid_corners(f);
        let mut kinds = Vec::new();
        for grid_side in 0..4 {
            let side = polygon_side(&gc, grid_side);
            let kind = match skeleton.side_kind(fi, side) {
                SideKind::Junction(e) => {
                    let edge = &skeleton.edges[e];
                    let (p, q) = f.side(side);
                    let pa = f.to_local_2d(&edge.a);
                    let pb = f.to_local_2d(&edge.b);
                    let t = skeleton.tol;
                    let full = ((pa - p).norm() < t && (pb - q).norm() < t) || ((pa - q).norm() < t && (pb - p).norm() < t);
                    if !full {
                        return Err(Error::Mesh(format!("junction edge {e} does not cover side {side} of face {}", f.id)));
                    }
                    let perpendicular =
                        edge.incident_faces.iter().any(|&g| g != fi && skeleton.faces[g].rotation().column(2).dot(&n).abs() < tol);
                    if perpendicular {
                        Junction::Perpendicular(e)
                    } else {
                        Junction::Coplanar(e)
                    }
                }
                _ => Junction::None,
            };
            kinds.push(kind);
        }
        if kinds.iter().any(|k| matches!(k, Junction::Perpendicular(_))) {
            for side in 0..4 {
                let (p, q) = f.side(side);
                let (_, r) = f.side((side + 1) % 4);
                if ((q - p).dot(&(r - q))).abs() > 1e-9 * (q - p).norm() * (r - q).norm() {
                    return Err(Error::Mesh(format!("face {} meets a perpendicular junction and must be a rectangle", f.id)));
                }
            }
        }
        out.push(kinds);
    }
    Ok(out)
}

/// Builds the stitched mesh of S_δ.
pub fn build_junction_mesh(skeleton: &Skeleton, delta: f64, params: &MeshParams) -> Result<JunctionMesh> {
    if !(params.mesh_size > 0.0 && params.mesh_size.is_finite()) {
        return Err(Error::Input("mesh_size must be positive".into()));
    }
    if params.nz < 3 || params.nz.is_multiple_of(2) {
        return Err(Error::Input(format!("nz must be odd and at least 3, got {}", params.nz)));
    }
    if !(delta > 0.0) || delta > skeleton.delta0 * (1.0 + 1e-12) {
        return Err(Error::Input(format!("delta {delta} must lie in (0, {}]", skeleton.delta0)));
    }
    let kinds = classify_sides(skeleton)?;
    let nf = skeleton.faces.len();
    let m = (params.nz - 1) / 2;

    // Per (face, direction): physical length and refined ends.
    let mut length = vec![0.0; 2 * nf];
    let mut ends = vec![[false; 2]; 2 * nf];
    for (fi, f) in skeleton.faces.iter().enumerate() {
        let gc = grid_corners(f);
        let len = |s: usize| (f.local_polygon[gc[(s + 1) % 4]] - f.local_polygon[gc[s]]).norm();
        length[2 * fi] = len(0).max(len(2));
        length[2 * fi + 1] = len(1).max(len(3));
        let perp = |s: usize| matches!(kinds[fi][s], Junction::Perpendicular(_));
        ends[2 * fi] = [perp(3), perp(1)];
        ends[2 * fi + 1] = [perp(0), perp(2)];
    }

    let mut uf = OrientedUnion::new(2 * nf);
    for (k, e) in skeleton.junction_edges() {
        let sides: Vec<(usize, usize)> = e
            .incident_faces
            .iter()
            .map(|&fi| {
                let f = &skeleton.faces[fi];
                let gc = grid_corners(f);
                let s = (0..4).find(|&s| f.side_edges[polygon_side(&gc, s)] == Some(k)).expect("junction side");
                (fi, s)
            })
            .collect();
        let (f0, s0) = sides[0];
        let start0 = skeleton.faces[f0].polygon[grid_corners(&skeleton.faces[f0])[side_start(s0)]];
        for &(fi, s) in &sides[1..] {
            let start = skeleton.faces[fi].polygon[grid_corners(&skeleton.faces[fi])[side_start(s)]];
            let reversed = (start - start0).norm() > skeleton.tol;
            uf.union(2 * f0 + side_direction(s0), 2 * fi + side_direction(s), reversed)?;
        }
    }

    // Class data in the root's orientation.
    let mut class_len: HashMap<usize, f64> = HashMap::new();
    let mut class_ends: HashMap<usize, [bool; 2]> = HashMap::new();
    for d in 0..2 * nf {
        let (r, flip) = uf.find(d);
        let e = if flip { [ends[d][1], ends[d][0]] } else { ends[d] };
        let l = class_len.entry(r).or_insert(0.0);
        *l = l.max(length[d]);
        let ce = class_ends.entry(r).or_insert([false; 2]);
        ce[0] |= e[0];
        ce[1] |= e[1];
    }
    let mut dist = vec![Vec::new(); 2 * nf];
    for d in 0..2 * nf {
        let (r, flip) = uf.find(d);
        let ce = class_ends[&r];
        let l = class_len[&r];
        if (ce[0] || ce[1]) && (length[d] - l).abs() > 1e-9 * l {
            return Err(Error::Mesh("faces sharing a refined junction direction must have equal lengths".into()));
        }
        let x = refined_distribution(l, params.mesh_size, delta, m, ce)?;
        dist[d] = if flip { x.iter().rev().map(|v| 1.0 - v).collect() } else { x };
    }

    let plates: Vec<PlateGrid3D> = (0..nf)
        .map(|fi| {
            let f = &skeleton.faces[fi];
            let gc = grid_corners(f);
            let corners = gc.map(|k| f.local_polygon[k]);
            PlateGrid3D::new(f.id, delta, corners, dist[2 * fi].clone(), dist[2 * fi + 1].clone(), params.nz, f.origin, f.rotation())
        })
        .collect::<Result<_>>()?;

    // Cell ownership.
    let in_slab = |q: usize, x: &Point3<f64>, tol: f64| {
        let f = &skeleton.faces[q];
        let l = f.to_local(x);
        l.z.abs() < delta + tol && f.contains_local(&Point2::new(l.x, l.y), tol)
    };
    let mut active = Vec::with_capacity(nf);
    for (p, g) in plates.iter().enumerate() {
        let a: Vec<bool> = (0..g.n_cells())
            .map(|c| {
                let x = g.cell_info(p, c).global_center;
                !(0..p).any(|q| {
                    let l = skeleton.faces[q].to_local(&x);
                    l.z.abs() < delta && skeleton.faces[q].contains_local(&Point2::new(l.x, l.y), 0.0)
                })
            })
            .collect();
        active.push(a);
    }

    // Node numbering with spatial hashing.
    let scale = skeleton.diameter().max(1.0);
    let tol = 1e-9 * scale;
    let key = |x: &Point3<f64>| -> [i64; 3] { [x.x, x.y, x.z].map(|c| (c / (1e3 * tol)).floor() as i64) };
    let mut table: HashMap<[i64; 3], Vec<(Point3<f64>, usize, usize, NodeDof)>> = HashMap::new();
    let mut node_dof = Vec::with_capacity(nf);
    let mut stitches = Vec::new();
    let mut n_free = 0;
    for (p, g) in plates.iter().enumerate() {
        let mut node_active = vec![false; g.n_nodes()];
        for c in 0..g.n_cells() {
            if active[p][c] {
                let (i, j, k) = g.cell_ijk(c);
                for n in g.cell_nodes(i, j, k) {
                    node_active[n] = true;
                }
            }
        }
        let fi = p;
        let clamped_edges: Vec<usize> = skeleton.clamped_edges().filter(|(_, e)| e.incident_faces.contains(&fi)).map(|(k, _)| k).collect();
        let mut dofs = vec![NodeDof::Inactive; g.n_nodes()];
        for n in 0..g.n_nodes() {
            if !node_active[n] {
                continue;
            }
            let (i, j, _) = g.node_ijk(n);
            let x = g.global_node(n);
            let mp = g.midsurface_point(i, j);
            let mid = g.to_global(&Vector3::new(mp.x, mp.y, 0.0));
            let clamped = clamped_edges.iter().any(|&k| skeleton.edges[k].distance(&mid) < skeleton.tol);
            let k0 = key(&x);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = table.get(&[k0[0] + dx, k0[1] + dy, k0[2] + dz]) {
                            for &(y, mp_, mn, d) in list {
                                if (y - x).norm() < tol {
                                    found = Some((mp_, mn, d));
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            let dof = match found {
                Some((mp_, mn, d)) => {
                    stitches.push(Stitch { master: (mp_, mn), slave: (p, n) });
                    if clamped {
                        if let NodeDof::Free(_) = d {
                            return Err(Error::Mesh("clamped node coincides with a free node of another plate".into()));
                        }
                    }
                    d
                }
                None => {
                    if (0..p).any(|q| in_slab(q, &x, tol)) {
                        return Err(Error::Mesh(format!(
                            "plate {} node at ({:.6}, {:.6}, {:.6}) lies in another slab without a matching node",
                            g.face_id, x.x, x.y, x.z
                        )));
                    }
                    let d = if clamped {
                        NodeDof::Fixed
                    } else {
                        n_free += 1;
                        NodeDof::Free(n_free - 1)
                    };
                    table.entry(k0).or_default().push((x, p, n, d));
                    d
                }
            };
            dofs[n] = dof;
        }
        node_dof.push(dofs);
    }

    let mut template = DisplacementSample3D::zeros(plates);
    template.active = active;
    template.stitches = stitches;
    Ok(JunctionMesh { template, node_dof, n_free, face_of_plate: (0..nf).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn refined_distribution_layers() {
        let x = refined_distribution(1.0, 0.25, 0.1, 2, [true, false]).unwrap();
        let expected = [0.0, 0.05, 0.1, 0.1 + 0.9 / 4.0, 0.1 + 0.9 / 2.0, 0.1 + 2.7 / 4.0, 1.0];
        assert_eq!(x.len(), expected.len());
        for (a, b) in x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(refined_distribution(0.15, 0.1, 0.1, 2, [true, true]).is_err());
    }

    #[test]
    fn single_plate_has_no_stitches() {
        let s = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
        let m = build_junction_mesh(&s, 0.1, &MeshParams { mesh_size: 0.25, nz: 3 }).unwrap();
        assert!(m.template.stitches.is_empty());
        assert!(m.template.active[0].iter().all(|&a| a));
        let g = &m.template.plates[0];
        assert_eq!(g.nx(), 5);
        let fixed = m.node_dof[0].iter().filter(|d| **d == NodeDof::Fixed).count();
        assert_eq!(fixed, 16 * 3);
        assert_eq!(m.n_free, 9 * 3);
    }

    #[test]
    fn right_angle_pair_is_conforming() {
        let s = Skeleton::from_file(&fixtures::right_angle_pair()).unwrap();
        let delta = 0.1;
        let m = build_junction_mesh(&s, delta, &MeshParams { mesh_size: 0.25, nz: 5 }).unwrap();
        let g1 = &m.template.plates[0];
        let g2 = &m.template.plates[1];
        assert!((g1.eta[1] - 0.05).abs() < 1e-15 && (g1.eta[2] - 0.1).abs() < 1e-15);
        assert!((g2.eta[1] - 0.05).abs() < 1e-15 && (g2.eta[2] - 0.1).abs() < 1e-15);
        assert!(m.template.active[0].iter().all(|&a| a));
        let dropped = m.template.active[1].iter().filter(|a| !**a).count();
        assert_eq!(dropped, (g2.nx() - 1) * 2 * 2);
        // Every stitched slave node shares the master's number.
        for st in &m.template.stitches {
            assert_eq!(m.node_dof[st.master.0][st.master.1], m.node_dof[st.slave.0][st.slave.1]);
            let a = m.template.plates[st.master.0].global_node(st.master.1);
            let b = m.template.plates[st.slave.0].global_node(st.slave.1);
            assert!((a - b).norm() < 1e-12);
        }
        // Plate 2 nodes on its x3 = 0 plane with z ≤ δ, and on the plane
        // z = δ with x3 < 0, are shared with plate 1.
        let expected = g2.nx() * 3 + g2.nx() * 2;
        assert_eq!(m.template.stitches.len(), expected);
    }

    #[test]
    fn t_junction_and_coplanar_pair_mesh() {
        for f in [fixtures::t_junction(), fixtures::coplanar_pair()] {
            let s = Skeleton::from_file(&f).unwrap();
            let m = build_junction_mesh(&s, 0.1, &MeshParams { mesh_size: 0.25, nz: 5 }).unwrap();
            assert!(!m.template.stitches.is_empty());
        }
    }

    #[test]
    fn rejects_oblique_junction_and_large_delta() {
        let mut f = fixtures::right_angle_pair();
        f.faces[1].vertices = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.5, 1.0], [0.0, 0.5, 1.0]];
        f.faces[1].e2 = [0.0, 0.5 / 1.25f64.sqrt(), 1.0 / 1.25f64.sqrt()];
        if let Ok(s) = Skeleton::from_file(&f) {
            assert!(matches!(build_junction_mesh(&s, 0.1, &MeshParams::default()), Err(Error::Mesh(_))));
        }
        let s = Skeleton::from_file(&fixtures::clamped_square(1.0)).unwrap();
        assert!(build_junction_mesh(&s, 0.5, &MeshParams::default()).is_err());
    }
}
