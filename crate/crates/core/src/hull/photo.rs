//! Photo-consistency pruning of surface voxels.

use rayon::prelude::*;

use super::{HullError, HullOctree, OccupancyGrid};
use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::imaging::{sample_bilinear, RgbF};

pub const MAX_SWEEPS: usize = 10;

/// Minimum unoccluded views for a voxel to be judged.
const MIN_VISIBLE_VIEWS: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct PhotoView<'a> {
    pub image: &'a RgbF,
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub removed_per_sweep: Vec<usize>,
    pub initial_volume: f64,
    pub final_volume: f64,
}

struct Frame {
    min: Vec3,
    size: f64,
}

impl Frame {
    fn centre(&self, c: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.min.x + (c[0] as f64 + 0.5) * self.size,
            self.min.y + (c[1] as f64 + 0.5) * self.size,
            self.min.z + (c[2] as f64 + 0.5) * self.size,
        )
    }
}

fn is_surface(grid: &OccupancyGrid, c: [usize; 3]) -> bool {
    let (i, j, k) = (c[0] as i64, c[1] as i64, c[2] as i64);
    grid.get(c[0], c[1], c[2])
        && [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            .iter()
            .any(|&(dx, dy, dz)| !grid.get_signed(i + dx, j + dy, k + dz))
}

/// Walks voxels from `start` toward `target`; true when an inside voxel
/// outside the start's 26-neighbourhood blocks the way.
fn occluded(grid: &OccupancyGrid, frame: &Frame, start: [usize; 3], target: &Vec3) -> bool {
    let n = grid.n as i64;
    let origin = (frame.centre(start) - frame.min) / frame.size;
    let goal = (target - frame.min) / frame.size;
    let dir = goal - origin;
    let t_end = 1.0;
    let mut cell = start.map(|v| v as i64);
    let mut t_max = [0.0f64; 3];
    let mut t_delta = [0.0f64; 3];
    let mut step = [0i64; 3];
    for a in 0..3 {
        if dir[a] > 0.0 {
            step[a] = 1;
            t_delta[a] = 1.0 / dir[a];
            t_max[a] = (cell[a] as f64 + 1.0 - origin[a]) / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_delta[a] = -1.0 / dir[a];
            t_max[a] = (cell[a] as f64 - origin[a]) / dir[a];
        } else {
            t_max[a] = f64::INFINITY;
            t_delta[a] = f64::INFINITY;
        }
    }
    loop {
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[a] > t_end {
            return false;
        }
        cell[a] += step[a];
        t_max[a] += t_delta[a];
        if cell.iter().any(|&v| v < 0 || v >= n) {
            return false;
        }
        let far = (0..3).any(|k| (cell[k] - start[k] as i64).abs() > 1);
        if far && grid.get(cell[0] as usize, cell[1] as usize, cell[2] as usize) {
            return true;
        }
    }
}

/// Mean per-channel variance of the colours seen by unoccluded views.
fn colour_variance(grid: &OccupancyGrid, frame: &Frame, views: &[PhotoView], c: [usize; 3]) -> Option<f64> {
    let p = frame.centre(c);
    let mut samples: Vec<[f32; 3]> = Vec::new();
    for v in views {
        let pc = v.pose.to_camera(&p);
        if pc.z <= 0.0 {
            continue;
        }
        let px = v.intrinsics.project_camera(&pc);
        if !v.intrinsics.contains(px) {
            continue;
        }
        if occluded(grid, frame, c, &v.pose.camera_centre()) {
            continue;
        }
        samples.push(sample_bilinear(v.image, px[0], px[1]));
    }
    if samples.len() < MIN_VISIBLE_VIEWS {
        return None;
    }
    let n = samples.len() as f64;
    let mut total = 0.0;
    for ch in 0..3 {
        let mean = samples.iter().map(|s| s[ch] as f64).sum::<f64>() / n;
        total += samples.iter().map(|s| (s[ch] as f64 - mean).powi(2)).sum::<f64>() / n;
    }
    Some(total / 3.0)
}

/// Flips surface voxels whose colour variance across unoccluded views
/// exceeds `variance_threshold`, sweeping until nothing changes or
/// [`MAX_SWEEPS`] is reached. Each sweep judges every voxel against the
/// same snapshot.
pub fn photo_consistency_prune(
    octree: &HullOctree,
    views: &[PhotoView],
    variance_threshold: f64,
) -> Result<(HullOctree, PruneReport), HullError> {
    if views.len() < 3 {
        return Err(HullError::NotEnoughViews(views.len()));
    }
    let initial_volume = octree.volume();
    let mut grid = octree.to_grid();
    let frame = Frame {
        min: octree.bounds.min,
        size: octree.bounds.cell_size(octree.max_depth),
    };
    let n = grid.n;
    let mut removed_per_sweep = Vec::new();
    for _ in 0..MAX_SWEEPS {
        let flips: Vec<[usize; 3]> = (0..n)
            .into_par_iter()
            .flat_map_iter(|k| {
                let grid = &grid;
                let frame = &frame;
                (0..n).flat_map(move |j| (0..n).map(move |i| [i, j, k])).filter(move |&c| {
                    is_surface(grid, c)
                        && colour_variance(grid, frame, views, c).is_some_and(|var| var > variance_threshold)
                })
            })
            .collect();
        removed_per_sweep.push(flips.len());
        if flips.is_empty() {
            break;
        }
        for c in flips {
            grid.set(c[0], c[1], c[2], false);
        }
    }
    let pruned = if removed_per_sweep.iter().all(|&r| r == 0) {
        octree.clone()
    } else {
        HullOctree::from_grid(octree.bounds, octree.max_depth, &grid)
    };
    let final_volume = pruned.volume();
    Ok((
        pruned,
        PruneReport {
            removed_per_sweep,
            initial_volume,
            final_volume,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dda_sees_blockers_beyond_the_neighbourhood() {
        let mut g = OccupancyGrid::new(16);
        let frame = Frame { min: Vec3::zeros(), size: 1.0 };
        g.set(2, 8, 8, true);
        g.set(3, 8, 8, true);
        // Adjacent voxel is ignored.
        assert!(!occluded(&g, &frame, [2, 8, 8], &Vec3::new(100.0, 8.5, 8.5)));
        g.set(9, 8, 8, true);
        assert!(occluded(&g, &frame, [2, 8, 8], &Vec3::new(100.0, 8.5, 8.5)));
        assert!(!occluded(&g, &frame, [2, 8, 8], &Vec3::new(-100.0, 8.5, 8.5)));
        // Diagonal walk.
        g.set(6, 12, 8, true);
        assert!(occluded(&g, &frame, [2, 8, 8], &Vec3::new(102.5, 108.5, 8.5)));
    }
}
