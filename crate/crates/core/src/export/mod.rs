//! Model writers (STL, OBJ, X3D, HTML) and the on-disk project format.

mod html;
mod obj;
mod project;
mod stl;
mod x3d;

use thiserror::Error;

pub use html::{write_html_view, HtmlOptions, DEFAULT_RUNTIME_URL};
pub use obj::{write_obj, ObjFiles};
pub use project::{
    pose_file_name, ManifestError, PoseSidecar, ProjectManifest, ViewRecord, MANIFEST_FILE, SCHEDULE_FILE,
};
pub use stl::{read_stl, write_stl, StlMesh};
pub use x3d::write_x3d;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("malformed STL: {0}")]
    MalformedStl(String),
    #[error("mesh has {uvs} UV triangles for {faces} faces")]
    UvMismatch { uvs: usize, faces: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shortest decimal that reads back to the same 32-bit float.
pub(crate) fn fmt_f32(v: f64) -> String {
    let f = v as f32;
    if f == 0.0 {
        "0".to_string()
    } else {
        format!("{f}")
    }
}

/// Texture coordinate with six decimals (well under a texel on any atlas
/// this crate bakes), trailing zeros dropped.
pub(crate) fn fmt_uv(v: f32) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "" | "-0" => "0".to_string(),
        _ => s.to_string(),
    }
}

/// Corner UVs shared by identical single-precision values, in order of first
/// appearance, with per-face indices into that list.
pub(crate) fn indexed_uvs(uvs: &[[[f64; 2]; 3]]) -> (Vec<[f32; 2]>, Vec<[u32; 3]>) {
    let mut index = std::collections::HashMap::new();
    let mut points = Vec::new();
    let faces = uvs
        .iter()
        .map(|tri| {
            tri.map(|uv| {
                let p = [uv[0] as f32, uv[1] as f32];
                *index.entry(p.map(f32::to_bits)).or_insert_with(|| {
                    points.push(p);
                    (points.len() - 1) as u32
                })
            })
        })
        .collect();
    (points, faces)
}

pub(crate) fn checked_uvs(mesh: &crate::mesh::TexturedMesh) -> Result<Option<&[[[f64; 2]; 3]]>, ExportError> {
    match (&mesh.uvs, &mesh.atlas) {
        (Some(uvs), Some(_)) if uvs.len() != mesh.triangle_count() => Err(ExportError::UvMismatch {
            uvs: uvs.len(),
            faces: mesh.triangle_count(),
        }),
        (Some(uvs), Some(_)) => Ok(Some(uvs)),
        _ => Ok(None),
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips_at_single_precision() {
        for v in [0.1, -12.345678901, 1e-7, 123456.789, -0.0, 3.0] {
            let s = fmt_f32(v);
            assert_eq!(s.parse::<f32>().unwrap(), v as f32, "{s}");
        }
        assert_eq!(fmt_f32(-0.0), "0");
        assert_eq!(fmt_f32(0.5), "0.5");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(xml_escape(r#"a<b>&"c'"#), "a&lt;b&gt;&amp;&quot;c&apos;");
    }
}
