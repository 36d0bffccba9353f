//! Marching cubes over the binary occupancy field.
//!
//! Samples sit at voxel centres, so every crossing lies at the centre of a
//! voxel face. Case polygons are derived per cube face rather than read from
//! a table: each face contributes segments that cut off its inside corners
//! (diagonal faces keep inside corners apart), segments chain into loops,
//! and loops are triangulated.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::{HullError, HullOctree, OccupancyGrid};
use crate::geometry::Vec3;
use crate::mesh::TexturedMesh;

/// Corner pairs of the 12 cube edges; corner bits are `x | y << 1 | z << 2`.
const EDGES: [(u8, u8); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Face corners, counter-clockwise seen from outside the cube.
const FACES: [[u8; 4]; 6] = [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];

fn edge_between(a: u8, b: u8) -> u8 {
    EDGES
        .iter()
        .position(|&(p, q)| (p, q) == (a, b) || (q, p) == (a, b))
        .expect("cube edge") as u8
}

fn edge_axis(e: u8) -> usize {
    e as usize / 4
}

/// Loops of crossing edges for one corner configuration.
fn case_loops(config: u8) -> Vec<Vec<u8>> {
    let inside = |c: u8| config >> c & 1 == 1;
    let mut next = [u8::MAX; 12];
    for face in FACES {
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            if inside(a) || !inside(b) {
                continue;
            }
            // Entering at edge k: leave at the first inside-to-outside edge.
            let mut j = k + 1;
            while !(inside(face[j % 4]) && !inside(face[(j + 1) % 4])) {
                j += 1;
            }
            let from = edge_between(a, b);
            let to = edge_between(face[j % 4], face[(j + 1) % 4]);
            next[from as usize] = to;
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12u8 {
        if next[start as usize] == u8::MAX || seen[start as usize] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !seen[e as usize] {
            seen[e as usize] = true;
            lp.push(e);
            e = next[e as usize];
        }
        loops.push(lp);
    }
    loops
}

fn share_face(a: u8, b: u8) -> bool {
    let (ea, eb) = (EDGES[a as usize], EDGES[b as usize]);
    FACES.iter().any(|f| {
        let has = |(p, q): (u8, u8)| f.contains(&p) && f.contains(&q);
        has(ea) && has(eb)
    })
}

/// Triangles over crossing edges; `CENTROID` stands for the loop centroid.
const CENTROID: u8 = 12;

fn triangulate(lp: &[u8]) -> Vec<[u8; 3]> {
    let n = lp.len();
    if n == 3 {
        return vec![[lp[0], lp[1], lp[2]]];
    }
    // Fan from a vertex whose diagonals stay off the cube faces, so no
    // interior edge can coincide with one in the neighbouring cell.
    for s in 0..n {
        let ok = (2..n - 1).all(|i| !share_face(lp[s], lp[(s + i) % n]));
        if ok {
            return (1..n - 1).map(|i| [lp[s], lp[(s + i) % n], lp[(s + i + 1) % n]]).collect();
        }
    }
    (0..n).map(|i| [CENTROID, lp[i], lp[(i + 1) % n]]).collect()
}

struct CaseTable {
    /// Per configuration: triangles and the loop each belongs to.
    cases: Vec<Vec<(Vec<[u8; 3]>, Vec<u8>)>>,
}

fn table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| CaseTable {
        cases: (0..=255u8)
            .map(|c| case_loops(c).into_iter().map(|lp| (triangulate(&lp), lp)).collect())
            .collect(),
    })
}

/// Vertex identity shared between neighbouring cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum VertexKey {
    /// Voxel face between lower voxel `p` and its `+axis` neighbour; `p` is
    /// offset by one so the outside padding layer is non-negative.
    Face { axis: u8, p: [u32; 3] },
    /// Centroid of loop `index` in cell `cell`.
    Centroid { cell: [u32; 3], index: u8 },
}

/// Closed, outward-oriented surface of the inside voxels at `max_depth`.
pub fn extract_surface(octree: &HullOctree) -> Result<TexturedMesh, HullError> {
    if !octree.has_inside() {
        return Err(HullError::EmptyVolume);
    }
    let grid = octree.to_grid();
    let size = octree.bounds.cell_size(octree.max_depth);
    let min = octree.bounds.min;
    Ok(mesh_from_grid(&grid, |key| match key {
        VertexKey::Face { axis, p } => {
            // Padded index p corresponds to voxel p - 1; its +axis face sits
            // at (p - 1 + 1) * size along the axis.
            let mut v = Vec3::new(
                min.x + (p[0] as f64 - 0.5) * size,
                min.y + (p[1] as f64 - 0.5) * size,
                min.z + (p[2] as f64 - 0.5) * size,
            );
            v[axis as usize] += 0.5 * size;
            v
        }
        VertexKey::Centroid { .. } => unreachable!("centroids are resolved from their loop"),
    }))
}

fn mesh_from_grid(grid: &OccupancyGrid, position: impl Fn(VertexKey) -> Vec3 + Sync) -> TexturedMesh {
    let n = grid.n as i64;
    let table = table();
    // Cells span voxel centres c..c+1 for c in -1..n; slabs along z.
    let slabs: Vec<Vec<[VertexKey; 3]>> = (-1..n)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in -1..n {
                for i in -1..n {
                    let mut config = 0u8;
                    for c in 0..8u8 {
                        let (dx, dy, dz) = ((c & 1) as i64, (c >> 1 & 1) as i64, (c >> 2 & 1) as i64);
                        if grid.get_signed(i + dx, j + dy, k + dz) {
                            config |= 1 << c;
                        }
                    }
                    if config == 0 || config == 255 {
                        continue;
                    }
                    let cell = [(i + 1) as u32, (j + 1) as u32, (k + 1) as u32];
                    let key_of = |e: u8, loop_index: u8| {
                        if e == CENTROID {
                            return VertexKey::Centroid { cell, index: loop_index };
                        }
                        let (a, _) = EDGES[e as usize];
                        let p = [
                            cell[0] + (a & 1) as u32,
                            cell[1] + (a >> 1 & 1) as u32,
                            cell[2] + (a >> 2 & 1) as u32,
                        ];
                        VertexKey::Face { axis: edge_axis(e) as u8, p }
                    };
                    for (li, (triangles, _)) in table.cases[config as usize].iter().enumerate() {
                        for t in triangles {
                            tris.push(t.map(|e| key_of(e, li as u8)));
                        }
                    }
                }
            }
            tris
        })
        .collect();

    let mut index: HashMap<VertexKey, u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles = Vec::new();
    let mut pending_centroids: Vec<(u32, VertexKey)> = Vec::new();
    for slab in &slabs {
        for tri in slab {
            let mut out = [0u32; 3];
            for (slot, key) in out.iter_mut().zip(tri) {
                *slot = *index.entry(*key).or_insert_with(|| {
                    let id = vertices.len() as u32;
                    match key {
                        VertexKey::Face { .. } => vertices.push(position(*key)),
                        VertexKey::Centroid { .. } => {
                            vertices.push(Vec3::zeros());
                            pending_centroids.push((id, *key));
                        }
                    }
                    id
                });
            }
            triangles.push(out);
        }
    }
    // A centroid is the mean of the other vertices of its fan.
    if !pending_centroids.is_empty() {
        let mut sums: HashMap<u32, (Vec3, u32, Vec<u32>)> = HashMap::new();
        for (id, _) in &pending_centroids {
            sums.insert(*id, (Vec3::zeros(), 0, Vec::new()));
        }
        for t in &triangles {
            if let Some(entry) = sums.get_mut(&t[0]) {
                // Fan triangles are [centroid, a, b]; each a appears once.
                entry.2.push(t[1]);
            }
        }
        for (id, _) in &pending_centroids {
            let entry = &sums[id];
            let mut acc = Vec3::zeros();
            for &v in &entry.2 {
                acc += vertices[v as usize];
            }
            vertices[*id as usize] = acc / entry.2.len() as f64;
        }
    }
    let mut mesh = TexturedMesh::new(vertices, triangles);
    mesh.recompute_normals();
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hull::CubeBounds;

    fn octree_from(n_depth: u8, side: f64, f: impl Fn(Vec3) -> bool) -> HullOctree {
        let bounds = CubeBounds::centred(Vec3::zeros(), side).unwrap();
        let n = 1usize << n_depth;
        let mut g = OccupancyGrid::new(n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    g.set(i, j, k, f(bounds.cell_centre(n_depth, [i as u32, j as u32, k as u32])));
                }
            }
        }
        HullOctree::from_grid(bounds, n_depth, &g)
    }

    #[test]
    fn every_case_closes_its_loops() {
        for c in 0..=255u8 {
            let loops = case_loops(c);
            let crossings = EDGES.iter().filter(|&&(a, b)| (c >> a & 1) != (c >> b & 1)).count();
            assert_eq!(loops.iter().map(|l| l.len()).sum::<usize>(), crossings, "config {c}");
            assert!(loops.iter().all(|l| l.len() >= 3));
        }
    }

    #[test]
    fn single_voxel_is_an_outward_octahedron() {
        let oct = octree_from(3, 8.0, |p| (p - Vec3::repeat(0.5)).norm() < 0.1);
        let mesh = extract_surface(&oct).unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.vertex_count(), 6);
        assert_eq!(mesh.triangle_count(), 8);
        // Octahedron through the face centres of a unit voxel.
        assert!((mesh.signed_volume() - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn single_inside_leaf_cube() {
        // One depth-1 leaf of an 8^3 grid: a 4^3 voxel block.
        let oct = octree_from(3, 8.0, |p| p.x < 0.0 && p.y < 0.0 && p.z < 0.0);
        assert_eq!(oct.node_counts(), (1, 7, 1));
        let mesh = extract_surface(&oct).unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.component_count(), 1);
        assert_eq!(mesh.euler_characteristic(), 2);
        let leaf = 64.0;
        let v = mesh.signed_volume();
        assert!(v > 0.0 && (v - leaf).abs() <= 0.3 * leaf, "{v}");
    }

    #[test]
    fn empty_octree_is_rejected() {
        let oct = octree_from(3, 8.0, |_| false);
        assert!(matches!(extract_surface(&oct), Err(HullError::EmptyVolume)));
    }

    #[test]
    fn ambiguous_configurations_stay_manifold() {
        // Checkerboard-like clusters exercise diagonal faces and interior
        // ambiguities.
        let oct = octree_from(4, 16.0, |p| {
            let (i, j, k) = ((p.x + 8.0) as i64, (p.y + 8.0) as i64, (p.z + 8.0) as i64);
            (3..13).contains(&i) && (3..13).contains(&j) && (3..13).contains(&k) && ((i + j + k) % 2 == 0 || (i * j + k) % 5 == 0)
        });
        let mesh = extract_surface(&oct).unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.degenerate_triangle_count(), 0);
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn sphere_area_and_volume() {
        let r = 10.0;
        let oct = octree_from(7, 24.0, |p| p.norm() < r);
        let mesh = extract_surface(&oct).unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
        // Vertices at voxel-face centres trace a corrugated surface, which
        // overstates the area of a smooth sphere by roughly 8%.
        let ratio = mesh.surface_area() / (4.0 * std::f64::consts::PI * r * r);
        assert!((1.0..1.10).contains(&ratio), "{ratio}");
        let vol = mesh.signed_volume();
        let want_v = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((vol / want_v - 1.0).abs() < 0.02, "{}", vol / want_v);
    }
}
