//! Reconstruction of small specimens from turntable and macro focus-stack
//! captures: capture planning and simulation, focus stacking, fiducial mat
//! pose estimation, silhouette extraction, octree visual-hull carving,
//! surface extraction and decimation, texture baking and model export.

pub mod bvh;
pub mod export;
pub mod fiducial;
pub mod geometry;
pub mod hull;
pub mod imaging;
pub mod mesh;
pub mod metrics;
pub mod plan;
pub mod silhouette;
pub mod sim;
pub mod stack;
pub mod texture;

pub use geometry::{backproject_pixel, project_point, CameraIntrinsics, Pose, Ray, Vec3};
pub use mesh::TexturedMesh;
