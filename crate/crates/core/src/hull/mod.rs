//! Visual hull reconstruction: octree carving from silhouettes, optional
//! photo-consistency pruning, surface extraction, decimation and component
//! deletion.

mod components;
mod decimate;
mod octree;
mod photo;
mod surface;

use thiserror::Error;

pub use components::{delete_components, ComponentSelector};
pub use decimate::{decimate, DEFAULT_TARGET_VERTICES};
pub use octree::{
    carve, classify_point, Consensus, CubeBounds, HullOctree, HullView, Node, Occupancy, OccupancyGrid, CACHE_MAGIC,
    CACHE_VERSION,
};
pub use photo::{photo_consistency_prune, PhotoView, PruneReport, MAX_SWEEPS};
pub use surface::extract_surface;

#[derive(Debug, Error)]
pub enum HullError {
    #[error("no views to carve from")]
    NoViews,
    #[error("octree depth {0} is outside 3..=10")]
    InvalidDepth(u8),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("mask is {0}x{1} but the camera is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("photo-consistency needs at least 3 views, got {0}")]
    NotEnoughViews(usize),
    #[error("octree has no inside leaves")]
    EmptyVolume,
    #[error("selection would remove every component")]
    WouldBeEmpty,
    #[error("component id {0} does not exist")]
    UnknownComponent(usize),
    #[error("hull cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
