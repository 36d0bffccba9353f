//! Quadric-error edge collapse.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Matrix3;

use crate::geometry::Vec3;
use crate::mesh::TexturedMesh;

pub const DEFAULT_TARGET_VERTICES: usize = 100_000;

/// Minimum cosine between a face normal before and after a collapse.
const MIN_NORMAL_COSINE: f64 = 0.2;

/// Symmetric 4x4 plane quadric in upper-triangular order.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: &Vec3, d: f64, w: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Quadric([a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d].map(|v| v * w))
    }

    fn add(&mut self, o: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a += b;
        }
    }

    fn sum(a: &Quadric, b: &Quadric) -> Quadric {
        let mut q = *a;
        q.add(b);
        q
    }

    fn error(&self, p: &Vec3) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x + 2.0 * q[1] * x * y + 2.0 * q[2] * x * z + 2.0 * q[3] * x + q[4] * y * y + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    fn minimizer(&self) -> Option<Vec3> {
        let q = &self.0;
        let a = Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let scale = a.norm();
        if scale == 0.0 || a.determinant().abs() < 1e-10 * scale.powi(3) {
            return None;
        }
        a.try_inverse().map(|inv| -(inv * Vec3::new(q[3], q[6], q[8])))
    }
}

#[derive(Debug, PartialEq)]
struct Candidate {
    cost: f64,
    u: u32,
    v: u32,
    stamp: (u32, u32),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Min-heap on cost, then on vertex ids.
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.total_cmp(&self.cost).then_with(|| (o.u, o.v).cmp(&(self.u, self.v)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct Decimator {
    pos: Vec<Vec3>,
    quadric: Vec<Quadric>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<u32>>,
    alive: Vec<bool>,
    boundary: Vec<bool>,
    version: Vec<u32>,
}

impl Decimator {
    fn new(mesh: &TexturedMesh) -> Self {
        let n = mesh.vertex_count();
        let mut quadric = vec![Quadric::default(); n];
        let mut vert_faces = vec![Vec::new(); n];
        for (f, tri) in mesh.triangles.iter().enumerate() {
            let cross = mesh.face_cross(f);
            let area2 = cross.norm();
            if area2 > 0.0 {
                let nrm = cross / area2;
                let q = Quadric::plane(&nrm, -nrm.dot(&mesh.vertices[tri[0] as usize]), area2 / 2.0);
                for &v in tri {
                    quadric[v as usize].add(&q);
                }
            }
            for &v in tri {
                vert_faces[v as usize].push(f as u32);
            }
        }
        let mut boundary = vec![false; n];
        for (&(a, b), &count) in &mesh.edge_incidence() {
            if count != 2 {
                boundary[a as usize] = true;
                boundary[b as usize] = true;
            }
        }
        Self {
            pos: mesh.vertices.clone(),
            quadric,
            faces: mesh.triangles.clone(),
            face_alive: vec![true; mesh.triangle_count()],
            vert_faces,
            alive: vec![true; n],
            boundary,
            version: vec![0; n],
        }
    }

    fn neighbours(&self, v: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self.vert_faces[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&w| w != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn placement(&self, u: u32, v: u32) -> (Vec3, f64) {
        let q = Quadric::sum(&self.quadric[u as usize], &self.quadric[v as usize]);
        let (pu, pv) = (self.pos[u as usize], self.pos[v as usize]);
        let mut best = (pu, q.error(&pu));
        for p in q.minimizer().into_iter().chain([pv, (pu + pv) / 2.0]) {
            let e = q.error(&p);
            if e < best.1 {
                best = (p, e);
            }
        }
        (best.0, best.1.max(0.0))
    }

    fn candidate(&self, u: u32, v: u32) -> Candidate {
        let (u, v) = if u < v { (u, v) } else { (v, u) };
        Candidate {
            cost: self.placement(u, v).1,
            u,
            v,
            stamp: (self.version[u as usize], self.version[v as usize]),
        }
    }

    fn can_collapse(&self, u: u32, v: u32, p: &Vec3) -> bool {
        if self.boundary[u as usize] || self.boundary[v as usize] {
            return false;
        }
        let nu = self.neighbours(u);
        let nv = self.neighbours(v);
        let common: Vec<u32> = nu.iter().filter(|w| nv.binary_search(w).is_ok()).copied().collect();
        let shared_faces: Vec<u32> = self.vert_faces[u as usize]
            .iter()
            .filter(|&&f| self.faces[f as usize].contains(&v))
            .copied()
            .collect();
        // Link condition: only the two wing vertices are common neighbours.
        if shared_faces.len() != 2 || common.len() != 2 {
            return false;
        }
        let union = nu.len() + nv.len() - common.len() - 2;
        if union < 3 {
            return false;
        }
        for &w in [u, v].iter() {
            for &f in &self.vert_faces[w as usize] {
                let tri = self.faces[f as usize];
                if tri.contains(&u) && tri.contains(&v) {
                    continue;
                }
                let corners = tri.map(|x| self.pos[x as usize]);
                let old = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
                let moved = tri.map(|x| if x == u || x == v { *p } else { self.pos[x as usize] });
                let new = (moved[1] - moved[0]).cross(&(moved[2] - moved[0]));
                let (lo, ln) = (old.norm(), new.norm());
                if ln <= 1e-12 * lo.max(1e-300) || old.dot(&new) < MIN_NORMAL_COSINE * lo * ln {
                    return false;
                }
            }
        }
        true
    }

    /// Merges `v` into `u` at `p`.
    fn collapse(&mut self, u: u32, v: u32, p: Vec3) {
        let v_faces = std::mem::take(&mut self.vert_faces[v as usize]);
        for &f in &v_faces {
            let tri = &mut self.faces[f as usize];
            if tri.contains(&u) {
                self.face_alive[f as usize] = false;
                let tri = *tri;
                for &w in &tri {
                    if w != v {
                        self.vert_faces[w as usize].retain(|&g| g != f);
                    }
                }
            } else {
                for x in tri.iter_mut() {
                    if *x == v {
                        *x = u;
                    }
                }
                self.vert_faces[u as usize].push(f);
            }
        }
        self.vert_faces[u as usize].sort_unstable();
        self.pos[u as usize] = p;
        let qv = self.quadric[v as usize];
        self.quadric[u as usize].add(&qv);
        self.alive[v as usize] = false;
        self.version[u as usize] += 1;
        self.version[v as usize] += 1;
    }
}

/// Collapses edges by increasing quadric error until at most `target`
/// vertices remain (never below 4). Boundary vertices are kept fixed.
pub fn decimate(mesh: &TexturedMesh, target: usize) -> TexturedMesh {
    let target = target.max(4);
    if mesh.vertex_count() <= target {
        return mesh.clone();
    }
    let mut d = Decimator::new(mesh);
    let mut heap = BinaryHeap::new();
    let mut edges: Vec<(u32, u32)> = mesh.edge_incidence().into_keys().collect();
    edges.sort_unstable();
    for (a, b) in edges {
        heap.push(d.candidate(a, b));
    }
    let mut remaining = d.alive.iter().filter(|&&a| a).count();
    while remaining > target {
        let Some(c) = heap.pop() else { break };
        let (u, v) = (c.u, c.v);
        if !d.alive[u as usize] || !d.alive[v as usize] || c.stamp != (d.version[u as usize], d.version[v as usize]) {
            continue;
        }
        let (p, _) = d.placement(u, v);
        if !d.can_collapse(u, v, &p) {
            continue;
        }
        d.collapse(u, v, p);
        remaining -= 1;
        for w in d.neighbours(u) {
            heap.push(d.candidate(u, w));
        }
    }
    let keep: Vec<bool> = d.face_alive.clone();
    let out = TexturedMesh::new(d.pos, d.faces);
    let mut out = out.filter_triangles(|f| keep[f]);
    out.recompute_normals();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn target_above_count_is_identity() {
        let s = shapes::sphere(Vec3::zeros(), 3.0, 10, 20);
        let out = decimate(&s, s.vertex_count());
        assert_eq!(out.vertices, s.vertices);
        assert_eq!(out.triangles, s.triangles);
    }

    #[test]
    fn coplanar_patch_has_zero_error() {
        // Fan of coplanar triangles around a centre vertex.
        let mut verts = vec![Vec3::new(0.0, 0.0, 2.0)];
        for i in 0..6 {
            let a = i as f64 * std::f64::consts::TAU / 6.0;
            verts.push(Vec3::new(a.cos() + 0.1 * a.sin(), a.sin(), 2.0));
        }
        let tris: Vec<[u32; 3]> = (0..6).map(|i| [0, 1 + i as u32, 1 + ((i + 1) % 6) as u32]).collect();
        let mesh = TexturedMesh::new(verts, tris);
        let d = Decimator::new(&mesh);
        for w in 1..7 {
            let (p, cost) = d.placement(0, w);
            assert!(cost.abs() < 1e-12, "{cost}");
            assert!((p.z - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_keeps_shape_and_topology() {
        let s = shapes::sphere(Vec3::zeros(), 5.0, 60, 120);
        let v0 = s.signed_volume();
        let out = decimate(&s, 1000);
        assert!(out.vertex_count() <= 1000 && out.vertex_count() > 900);
        assert!(out.is_watertight());
        assert_eq!(out.euler_characteristic(), 2);
        assert_eq!(out.degenerate_triangle_count(), 0);
        assert!((out.signed_volume() / v0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn never_collapses_below_a_tetrahedron() {
        let s = shapes::sphere(Vec3::zeros(), 1.0, 6, 8);
        let out = decimate(&s, 0);
        assert!(out.vertex_count() >= 4);
        assert!(out.is_watertight());
        assert_eq!(out.component_count(), 1);
    }

    #[test]
    fn components_are_preserved() {
        let m = shapes::sphere(Vec3::zeros(), 2.0, 20, 40).merged(&shapes::sphere(Vec3::new(10.0, 0.0, 0.0), 2.0, 20, 40));
        let out = decimate(&m, 200);
        assert_eq!(out.component_count(), 2);
        assert!(out.is_watertight());
    }
}
