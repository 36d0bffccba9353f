use serde::{Deserialize, Serialize};

use super::HullError;
use crate::mesh::TexturedMesh;

/// Which connected components to remove.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentSelector {
    /// Remove all but the component with the most triangles.
    KeepLargest,
    /// Remove these component ids, numbered in order of first triangle.
    DropIds(Vec<usize>),
}

pub fn delete_components(mesh: &TexturedMesh, selector: &ComponentSelector) -> Result<TexturedMesh, HullError> {
    let (labels, count) = mesh.triangle_components();
    if count == 0 {
        return Err(HullError::WouldBeEmpty);
    }
    let keep: Vec<bool> = match selector {
        ComponentSelector::KeepLargest => {
            let mut sizes = vec![0usize; count];
            for &l in &labels {
                sizes[l as usize] += 1;
            }
            // Ties go to the lowest id.
            let best = (0..count).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
            (0..count).map(|c| c == best).collect()
        }
        ComponentSelector::DropIds(ids) => {
            let mut keep = vec![true; count];
            for &id in ids {
                *keep.get_mut(id).ok_or(HullError::UnknownComponent(id))? = false;
            }
            keep
        }
    };
    if !keep.iter().any(|&k| k) {
        return Err(HullError::WouldBeEmpty);
    }
    Ok(mesh.filter_triangles(|t| keep[labels[t] as usize]))
}
