use std::fmt::Write;

use super::{checked_uvs, fmt_f32, indexed_uvs, ExportError};
use crate::mesh::TexturedMesh;

const MATERIAL: &str = "specimen";

#[derive(Debug, Clone, PartialEq)]
pub struct ObjFiles {
    pub obj: String,
    /// Material file, present only when the mesh carries an atlas.
    pub mtl: Option<String>,
}

/// Wavefront OBJ with 1-based `v`/`vt`/`vn`/`f` records. UVs and the
/// material library `mtl_file` are written only for meshes with an atlas.
pub fn write_obj(mesh: &TexturedMesh, mtl_file: &str) -> Result<ObjFiles, ExportError> {
    let uvs = checked_uvs(mesh)?;
    let has_normals = mesh.normals.len() == mesh.vertex_count();
    let mut obj = String::from("# scarab mesh\n");
    if uvs.is_some() {
        let _ = writeln!(obj, "mtllib {mtl_file}");
    }
    let _ = writeln!(obj, "# {} vertices, {} faces", mesh.vertex_count(), mesh.triangle_count());
    for v in &mesh.vertices {
        let _ = writeln!(obj, "v {} {} {}", fmt_f32(v.x), fmt_f32(v.y), fmt_f32(v.z));
    }
    let uv_index = uvs.map(indexed_uvs);
    if let Some((points, _)) = &uv_index {
        for p in points {
            let _ = writeln!(obj, "vt {} {}", fmt_f32(p[0] as f64), fmt_f32(p[1] as f64));
        }
    }
    if has_normals {
        for n in &mesh.normals {
            let _ = writeln!(obj, "vn {} {} {}", fmt_f32(n.x), fmt_f32(n.y), fmt_f32(n.z));
        }
    }
    if uvs.is_some() {
        let _ = writeln!(obj, "usemtl {MATERIAL}");
    }
    for (t, tri) in mesh.triangles.iter().enumerate() {
        obj.push('f');
        for (k, &v) in tri.iter().enumerate() {
            let v = v + 1;
            match (&uv_index, has_normals) {
                (Some((_, faces)), true) => write!(obj, " {v}/{}/{v}", faces[t][k] + 1),
                (Some((_, faces)), false) => write!(obj, " {v}/{}", faces[t][k] + 1),
                (None, true) => write!(obj, " {v}//{v}"),
                (None, false) => write!(obj, " {v}"),
            }
            .unwrap();
        }
        obj.push('\n');
    }
    let mtl = uvs.map(|_| {
        let atlas = mesh.atlas.as_deref().unwrap_or_default();
        format!("newmtl {MATERIAL}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {atlas}\n")
    });
    Ok(ObjFiles { obj, mtl })
}
