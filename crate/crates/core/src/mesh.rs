//! Indexed triangle meshes and the topology queries the pipeline relies on.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// Triangle mesh with optional per-corner texture coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TexturedMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex unit normals (area weighted).
    pub normals: Vec<Vec3>,
    /// Per-triangle corner UVs in `[0, 1]`, `v` pointing up.
    pub uvs: Option<Vec<[[f64; 2]; 3]>>,
    /// File name of the texture atlas image the UVs address.
    pub atlas: Option<String>,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn centre(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&Vec3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }
}

impl TexturedMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        let mut mesh = Self {
            vertices,
            triangles,
            ..Default::default()
        };
        mesh.recompute_normals();
        mesh
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, t: usize) -> Vec3 {
        let n = self.face_cross(t);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn face_area(&self, t: usize) -> f64 {
        self.face_cross(t).norm() * 0.5
    }

    pub fn face_centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    pub fn recompute_normals(&mut self) {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let n = self.face_cross(t);
            for &v in tri {
                normals[v as usize] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        self.normals = normals;
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Signed enclosed volume; positive for outward-facing closed meshes.
    pub fn signed_volume(&self) -> f64 {
        // Shift to the centroid for better conditioning.
        let origin = self.bounds().centre();
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let pa = self.vertices[a as usize] - origin;
                let pb = self.vertices[b as usize] - origin;
                let pc = self.vertices[c as usize] - origin;
                pa.dot(&pb.cross(&pc))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.face_area(t)).sum()
    }

    /// Number of triangles incident on each undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(u32, u32), u32> {
        let mut edges = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Edges not shared by exactly two triangles.
    pub fn non_manifold_edge_count(&self) -> usize {
        self.edge_incidence().values().filter(|&&n| n != 2).count()
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.non_manifold_edge_count() == 0
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &v in tri {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_incidence().len() as i64;
        v - e + self.triangles.len() as i64
    }

    pub fn degenerate_triangle_count(&self) -> usize {
        (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a == b || b == c || a == c || self.face_cross(t).norm() == 0.0
            })
            .count()
    }

    /// Connected component label per triangle (triangles sharing a vertex
    /// are connected), labels dense from 0 in order of first triangle.
    pub fn triangle_components(&self) -> (Vec<u32>, usize) {
        let mut uf = UnionFind::new(self.vertices.len());
        for &[a, b, c] in &self.triangles {
            uf.union(a as usize, b as usize);
            uf.union(a as usize, c as usize);
        }
        let mut label_of_root: HashMap<usize, u32> = HashMap::new();
        let labels = self
            .triangles
            .iter()
            .map(|tri| {
                let root = uf.find(tri[0] as usize);
                let next = label_of_root.len() as u32;
                *label_of_root.entry(root).or_insert(next)
            })
            .collect();
        (labels, label_of_root.len())
    }

    pub fn component_count(&self) -> usize {
        self.triangle_components().1
    }

    /// Keeps the triangles for which `keep` is true and drops unreferenced
    /// vertices; vertex order is preserved.
    pub fn filter_triangles(&self, keep: impl Fn(usize) -> bool) -> TexturedMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        let mut triangles = Vec::new();
        let mut uvs = self.uvs.as_ref().map(|_| Vec::new());
        let kept: Vec<usize> = (0..self.triangles.len()).filter(|&t| keep(t)).collect();
        let mut used = vec![false; self.vertices.len()];
        for &t in &kept {
            for &v in &self.triangles[t] {
                used[v as usize] = true;
            }
        }
        for (v, &u) in used.iter().enumerate() {
            if u {
                remap[v] = vertices.len() as u32;
                vertices.push(self.vertices[v]);
                if let Some(n) = self.normals.get(v) {
                    normals.push(*n);
                }
            }
        }
        for &t in &kept {
            let [a, b, c] = self.triangles[t];
            triangles.push([remap[a as usize], remap[b as usize], remap[c as usize]]);
            if let (Some(out), Some(src)) = (uvs.as_mut(), self.uvs.as_ref()) {
                out.push(src[t]);
            }
        }
        TexturedMesh {
            vertices,
            triangles,
            normals,
            uvs,
            atlas: self.atlas.clone(),
        }
    }

    /// Area-weighted uniform sample of surface points.
    pub fn sample_surface<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Vec3> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.face_area(t);
            cumulative.push(total);
        }
        (0..count)
            .map(|_| {
                let x = rng.gen::<f64>() * total;
                let t = cumulative.partition_point(|&c| c < x).min(self.triangles.len() - 1);
                let [a, b, c] = self.corners(t);
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    pub fn translated(mut self, offset: Vec3) -> Self {
        for v in &mut self.vertices {
            *v += offset;
        }
        self
    }

    /// Appends `other` as additional (disconnected) geometry.
    pub fn merged(mut self, other: &TexturedMesh) -> Self {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        self.uvs = None;
        self.recompute_normals();
        self
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Closed primitives used by the simulator and tests.
pub mod shapes {
    use super::*;

    /// Axis-aligned box mesh with outward faces.
    pub fn cuboid(min: Vec3, max: Vec3) -> TexturedMesh {
        let v = |x: usize, y: usize, z: usize| {
            Vec3::new(
                if x == 0 { min.x } else { max.x },
                if y == 0 { min.y } else { max.y },
                if z == 0 { min.z } else { max.z },
            )
        };
        let vertices = vec![
            v(0, 0, 0),
            v(1, 0, 0),
            v(1, 1, 0),
            v(0, 1, 0),
            v(0, 0, 1),
            v(1, 0, 1),
            v(1, 1, 1),
            v(0, 1, 1),
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TexturedMesh::new(vertices, triangles)
    }

    /// Latitude/longitude ellipsoid with semi-axes `radii`.
    pub fn ellipsoid(centre: Vec3, radii: Vec3, stacks: usize, slices: usize) -> TexturedMesh {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![centre + Vec3::new(0.0, 0.0, radii.z)];
        for i in 1..stacks {
            let theta = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let phi = std::f64::consts::TAU * j as f64 / slices as f64;
                vertices.push(
                    centre
                        + Vec3::new(
                            radii.x * theta.sin() * phi.cos(),
                            radii.y * theta.sin() * phi.sin(),
                            radii.z * theta.cos(),
                        ),
                );
            }
        }
        let south = vertices.len() as u32;
        vertices.push(centre - Vec3::new(0.0, 0.0, radii.z));
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        for j in 0..slices {
            triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        TexturedMesh::new(vertices, triangles)
    }

    pub fn sphere(centre: Vec3, radius: f64, stacks: usize, slices: usize) -> TexturedMesh {
        ellipsoid(centre, Vec3::repeat(radius), stacks, slices)
    }

    /// Closed vertical cylinder from `base` upwards.
    pub fn cylinder(base: Vec3, radius: f64, height: f64, segments: usize) -> TexturedMesh {
        let segments = segments.max(3);
        let mut vertices = Vec::new();
        for k in 0..2 {
            for j in 0..segments {
                let phi = std::f64::consts::TAU * j as f64 / segments as f64;
                vertices.push(base + Vec3::new(radius * phi.cos(), radius * phi.sin(), k as f64 * height));
            }
        }
        let bottom = vertices.len() as u32;
        vertices.push(base);
        let top = vertices.len() as u32;
        vertices.push(base + Vec3::new(0.0, 0.0, height));
        let s = segments as u32;
        let mut triangles = Vec::new();
        for j in 0..s {
            let jn = (j + 1) % s;
            triangles.push([j, jn, s + jn]);
            triangles.push([j, s + jn, s + j]);
            triangles.push([bottom, jn, j]);
            triangles.push([top, s + j, s + jn]);
        }
        TexturedMesh::new(vertices, triangles)
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::*;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cube_volume_area_and_topology() {
        let cube = cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        assert_relative_eq!(cube.signed_volume(), 6.0, epsilon = 1e-12);
        assert_relative_eq!(cube.surface_area(), 22.0, epsilon = 1e-12);
        assert!(cube.is_watertight());
        assert_eq!(cube.euler_characteristic(), 2);
        assert_eq!(cube.component_count(), 1);
    }

    #[test]
    fn sphere_is_closed_and_outward() {
        let s = sphere(Vec3::zeros(), 2.0, 32, 64);
        assert!(s.is_watertight());
        assert_eq!(s.euler_characteristic(), 2);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 8.0;
        assert!(s.signed_volume() > 0.97 * exact && s.signed_volume() < exact);
        let c = cylinder(Vec3::zeros(), 1.0, 3.0, 24);
        assert!(c.is_watertight());
        assert!(c.signed_volume() > 0.0);
    }

    #[test]
    fn components_and_filtering() {
        let a = cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let b = cuboid(Vec3::repeat(5.0), Vec3::repeat(6.0));
        let both = a.clone().merged(&b);
        let (labels, count) = both.triangle_components();
        assert_eq!(count, 2);
        let kept = both.filter_triangles(|t| labels[t] == 1);
        assert_eq!(kept.vertex_count(), 8);
        assert_eq!(kept.triangle_count(), 12);
        assert_relative_eq!(kept.signed_volume(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn surface_samples_lie_on_mesh() {
        use rand::SeedableRng;
        let cube = cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for p in cube.sample_surface(500, &mut rng) {
            let on_face = (0..3).any(|i| p[i].abs() < 1e-12 || (p[i] - 1.0).abs() < 1e-12);
            assert!(on_face && cube.bounds().contains(&p));
        }
    }
}
