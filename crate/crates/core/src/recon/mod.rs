//! Disparity to point cloud, statistical outlier filtering, pixel-grid
//! meshes, PLY output and known-pose evaluation.

mod cloud;
mod eval;
mod mesh;
mod ply;

pub use cloud::{
    disparity_to_cloud, remove_outliers, remove_outliers_with, PointCloud, PointIndex, DEFAULT_NEIGHBORS, DEFAULT_MEDIAN_RATIO, DEFAULT_SIGMA,
};
pub use eval::{closest_on_triangle, evaluate_against_gt, DepthBin, EvalReport, GroundTruth};
pub use mesh::{grid_mesh, TriangleMesh};
pub use ply::{write_cloud_ply, write_mesh_ply};
