use super::{checked_uvs, x3d::x3d_element, xml_escape, ExportError};
use crate::mesh::TexturedMesh;

pub const DEFAULT_RUNTIME_URL: &str = "https://www.x3dom.org/download/x3dom.js";

#[derive(Debug, Clone, PartialEq)]
pub struct HtmlOptions {
    pub title: String,
    /// Script implementing X3D in the browser.
    pub runtime_url: String,
}

impl Default for HtmlOptions {
    fn default() -> Self {
        Self {
            title: "specimen".into(),
            runtime_url: DEFAULT_RUNTIME_URL.into(),
        }
    }
}

/// Standalone HTML5 page with the model's X3D inlined in the body.
pub fn write_html_view(mesh: &TexturedMesh, options: &HtmlOptions) -> Result<String, ExportError> {
    let uvs = checked_uvs(mesh)?;
    let mut out = String::from("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    out.push_str(&format!("<title>{}</title>\n", xml_escape(&options.title)));
    out.push_str(&format!("<script src=\"{}\"></script>\n", xml_escape(&options.runtime_url)));
    out.push_str("<style>X3D { width: 100%; height: 90vh; }</style>\n</head>\n<body>\n");
    out.push_str(&x3d_element(mesh, uvs));
    out.push_str("</body>\n</html>\n");
    Ok(out)
}
