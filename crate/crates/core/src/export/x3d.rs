use std::fmt::Write;

use super::{checked_uvs, fmt_f32, fmt_uv, indexed_uvs, xml_escape, ExportError};
use crate::mesh::TexturedMesh;

/// X3D document with a single indexed face set. Texture coordinates and an
/// image texture are included when the mesh carries an atlas.
pub fn write_x3d(mesh: &TexturedMesh) -> Result<String, ExportError> {
    let uvs = checked_uvs(mesh)?;
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&x3d_element(mesh, uvs));
    Ok(out)
}

/// The `<X3D>` element alone, as inlined into HTML.
pub(crate) fn x3d_element(mesh: &TexturedMesh, uvs: Option<&[[[f64; 2]; 3]]>) -> String {
    let mut out = String::new();
    out.push_str("<X3D profile=\"Interchange\" version=\"3.3\">\n<Scene>\n<Shape>\n<Appearance>\n");
    out.push_str("<Material diffuseColor=\"1 1 1\"/>\n");
    let uv_index = uvs.map(indexed_uvs);
    if uv_index.is_some() {
        let url = xml_escape(&format!("\"{}\"", mesh.atlas.as_deref().unwrap_or_default()));
        let _ = writeln!(out, "<ImageTexture url=\"{url}\"/>");
    }
    out.push_str("</Appearance>\n<IndexedFaceSet solid=\"true\" ccw=\"true\" coordIndex=\"");
    join_faces(&mut out, mesh.triangles.iter().copied());
    out.push('"');
    if let Some((_, faces)) = &uv_index {
        out.push_str(" texCoordIndex=\"");
        join_faces(&mut out, faces.iter().copied());
        out.push('"');
    }
    out.push_str(">\n<Coordinate point=\"");
    for (i, v) in mesh.vertices.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{} {} {}", fmt_f32(v.x), fmt_f32(v.y), fmt_f32(v.z));
    }
    out.push_str("\"/>\n");
    if let Some((points, _)) = &uv_index {
        out.push_str("<TextureCoordinate point=\"");
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{} {}", fmt_uv(p[0]), fmt_uv(p[1]));
        }
        out.push_str("\"/>\n");
    }
    out.push_str("</IndexedFaceSet>\n</Shape>\n</Scene>\n</X3D>\n");
    out
}

fn join_faces(out: &mut String, faces: impl Iterator<Item = [u32; 3]>) {
    for (i, f) in faces.enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{} {} {} -1", f[0], f[1], f[2]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::export::fmt_uv;
    use crate::mesh::shapes;

    fn triangle() -> TexturedMesh {
        TexturedMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
    }

    #[test]
    fn triangle_face_index() {
        let doc = write_x3d(&triangle()).unwrap();
        let xml = roxmltree::Document::parse(&doc).unwrap();
        let ifs = xml.descendants().find(|n| n.has_tag_name("IndexedFaceSet")).unwrap();
        assert_eq!(ifs.attribute("coordIndex"), Some("0 1 2 -1"));
        assert!(ifs.attribute("texCoordIndex").is_none());
        let coord = xml.descendants().find(|n| n.has_tag_name("Coordinate")).unwrap();
        assert_eq!(coord.attribute("point"), Some("0 0 0 1 0 0 0 1 0"));
        assert!(xml.descendants().all(|n| !n.has_tag_name("ImageTexture")));
    }

    #[test]
    fn textured_model_is_well_formed() {
        let mut s = shapes::sphere(Vec3::zeros(), 2.0, 8, 16);
        s.uvs = Some((0..s.triangle_count()).map(|t| [[0.0, 0.0], [t as f64 / 1000.0, 0.5], [0.25, 1.0]]).collect());
        s.atlas = Some("a&b.png".into());
        let doc = write_x3d(&s).unwrap();
        let xml = roxmltree::Document::parse(&doc).unwrap();
        let tex = xml.descendants().find(|n| n.has_tag_name("ImageTexture")).unwrap();
        assert_eq!(tex.attribute("url"), Some("\"a&b.png\""));
        let ifs = xml.descendants().find(|n| n.has_tag_name("IndexedFaceSet")).unwrap();
        let idx: Vec<i64> = ifs.attribute("texCoordIndex").unwrap().split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!(idx.len(), 4 * s.triangle_count());
        let tc = xml.descendants().find(|n| n.has_tag_name("TextureCoordinate")).unwrap();
        let n_points = tc.attribute("point").unwrap().split(' ').count() / 2;
        assert!(idx.iter().all(|&i| i == -1 || (i as usize) < n_points));
        let coords = xml.descendants().find(|n| n.has_tag_name("Coordinate")).unwrap();
        assert_eq!(coords.attribute("point").unwrap().split(' ').count(), 3 * s.vertex_count());
    }

    #[test]
    fn texture_coordinates_are_written_to_six_decimals() {
        assert_eq!(fmt_uv(0.0), "0");
        assert_eq!(fmt_uv(1.0), "1");
        assert_eq!(fmt_uv(0.5), "0.5");
        assert_eq!(fmt_uv(0.123_456_79), "0.123457");
        assert_eq!(fmt_uv(-0.000_000_1), "0");
        for k in 0..1000 {
            let v = k as f32 / 997.0;
            assert!((fmt_uv(v).parse::<f32>().unwrap() - v).abs() <= 6e-7);
        }
    }
}
