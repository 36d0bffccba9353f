use super::ExportError;
use crate::geometry::Vec3;
use crate::mesh::TexturedMesh;

const HEADER: &[u8] = b"scarab binary STL";

/// Triangle soup as stored in a binary STL.
#[derive(Debug, Clone, PartialEq)]
pub struct StlMesh {
    pub header: [u8; 80],
    pub normals: Vec<[f32; 3]>,
    pub triangles: Vec<[[f32; 3]; 3]>,
}

impl StlMesh {
    /// Indexed mesh with corners welded on exact bit equality, in order of
    /// first appearance.
    pub fn to_mesh(&self) -> TexturedMesh {
        let mut index = std::collections::HashMap::new();
        let mut vertices = Vec::new();
        let triangles = self
            .triangles
            .iter()
            .map(|t| {
                t.map(|p| {
                    let key = p.map(f32::to_bits);
                    *index.entry(key).or_insert_with(|| {
                        vertices.push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64));
                        (vertices.len() - 1) as u32
                    })
                })
            })
            .collect();
        TexturedMesh::new(vertices, triangles)
    }
}

fn push_vec(out: &mut Vec<u8>, v: [f32; 3]) {
    for c in v {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

/// Binary STL: 80-byte header, little-endian triangle count, then per
/// triangle a facet normal, three corners and a zero attribute word.
pub fn write_stl(mesh: &TexturedMesh) -> Result<Vec<u8>, ExportError> {
    if mesh.triangles.is_empty() {
        return Err(ExportError::EmptyMesh);
    }
    let n = mesh.triangle_count();
    let mut out = Vec::with_capacity(84 + 50 * n);
    let mut header = [0u8; 80];
    header[..HEADER.len()].copy_from_slice(HEADER);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    let f32s = |v: Vec3| [v.x as f32, v.y as f32, v.z as f32];
    let stored = |v: Vec3| Vec3::new(v.x as f32 as f64, v.y as f32 as f64, v.z as f32 as f64);
    for t in 0..n {
        // Normal of the triangle as stored, so re-reading and writing again
        // reproduces the same bytes.
        let [a, b, c] = mesh.corners(t).map(stored);
        let cross = (b - a).cross(&(c - a));
        let len = cross.norm();
        let normal = if len > 0.0 { cross / len } else { Vec3::zeros() };
        push_vec(&mut out, f32s(normal));
        for p in [a, b, c] {
            push_vec(&mut out, f32s(p));
        }
        out.extend_from_slice(&[0, 0]);
    }
    Ok(out)
}

pub fn read_stl(bytes: &[u8]) -> Result<StlMesh, ExportError> {
    if bytes.len() < 84 {
        return Err(ExportError::MalformedStl(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(ExportError::MalformedStl(format!(
            "count field says {count} triangles but body holds {} bytes",
            bytes.len() - 84
        )));
    }
    let mut header = [0u8; 80];
    header.copy_from_slice(&bytes[..80]);
    let read = |at: usize| -> [f32; 3] {
        std::array::from_fn(|k| f32::from_le_bytes(bytes[at + 4 * k..at + 4 * k + 4].try_into().unwrap()))
    };
    let mut normals = Vec::with_capacity(count);
    let mut triangles = Vec::with_capacity(count);
    for t in 0..count {
        let at = 84 + 50 * t;
        normals.push(read(at));
        triangles.push([read(at + 12), read(at + 24), read(at + 36)]);
    }
    Ok(StlMesh {
        header,
        normals,
        triangles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use proptest::prelude::*;

    #[test]
    fn single_triangle_layout() {
        let mesh = TexturedMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        );
        let bytes = write_stl(&mesh).unwrap();
        assert_eq!(bytes.len(), 134);
        assert_eq!(u32::from_le_bytes(bytes[80..84].try_into().unwrap()), 1);
        let normal: Vec<f32> = (0..3).map(|k| f32::from_le_bytes(bytes[84 + 4 * k..88 + 4 * k].try_into().unwrap())).collect();
        assert_eq!(normal, vec![0.0, 0.0, 1.0]);
        assert_eq!(&bytes[132..134], &[0, 0]);
        assert!(!bytes.starts_with(b"solid"));
    }

    #[test]
    fn empty_mesh_is_rejected() {
        assert!(matches!(write_stl(&TexturedMesh::default()), Err(ExportError::EmptyMesh)));
    }

    #[test]
    fn truncated_files_are_rejected() {
        let bytes = write_stl(&shapes::cuboid(Vec3::zeros(), Vec3::repeat(1.0))).unwrap();
        assert!(read_stl(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_stl(&bytes[..50]).is_err());
    }

    #[test]
    fn cube_round_trip_is_bit_exact() {
        let cube = shapes::cuboid(Vec3::new(-1.5, 0.25, 2.0), Vec3::new(3.0, 4.125, 7.5));
        let bytes = write_stl(&cube).unwrap();
        let back = read_stl(&bytes).unwrap();
        assert_eq!(back.triangles.len(), 12);
        let welded = back.to_mesh();
        assert_eq!(welded.vertex_count(), 8);
        assert_eq!(write_stl(&welded).unwrap(), bytes);
    }

    proptest! {
        #[test]
        fn corners_survive_as_f32(coords in prop::collection::vec(-1e4f64..1e4, 9..90)) {
            let n = coords.len() / 9;
            let vertices: Vec<Vec3> = (0..3 * n).map(|i| Vec3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2])).collect();
            let triangles: Vec<[u32; 3]> = (0..n as u32).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
            let mesh = TexturedMesh::new(vertices, triangles);
            let bytes = write_stl(&mesh).unwrap();
            let back = read_stl(&bytes).unwrap();
            prop_assert_eq!(back.triangles.len(), n);
            for t in 0..n {
                for (k, c) in mesh.corners(t).iter().enumerate() {
                    prop_assert_eq!(back.triangles[t][k], [c.x as f32, c.y as f32, c.z as f32]);
                }
            }
        }

        #[test]
        fn rewriting_a_read_mesh_reproduces_the_bytes(coords in prop::collection::vec(-1e3f64..1e3, 9..90)) {
            let n = coords.len() / 9;
            let vertices: Vec<Vec3> = (0..3 * n).map(|i| Vec3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2])).collect();
            let triangles: Vec<[u32; 3]> = (0..n as u32).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
            let bytes = write_stl(&TexturedMesh::new(vertices, triangles)).unwrap();
            prop_assert_eq!(write_stl(&read_stl(&bytes).unwrap().to_mesh()).unwrap(), bytes);
        }
    }
}
