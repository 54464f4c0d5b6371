//! Underwater active stereo reconstruction.
//!
//! The crate covers the whole chain from a refraction-aware camera model to
//! textured point clouds:
//!
//! - [`tensor`]: small deterministic tensor library with reverse-mode
//!   differentiation, shared by the three networks.
//! - [`optics`]: flat-port refraction, its approximation by a radially
//!   distorted central camera, and the depth-dependent error of that
//!   approximation.
//! - [`rig`]: stereo rig geometry, rectification, triangulation and gray-code
//!   correspondence tooling.
//! - [`stereo`]: multi-scale Siamese patch similarity network, cost volumes,
//!   winner-takes-all selection and a block-matching baseline.
//! - [`segmentation`]: five-level encoder/decoder target extraction.
//! - [`restoration`]: bubble and projected-pattern synthesis plus the
//!   three-resolution removal network.
//! - [`recon`]: disparity to point cloud, outlier filtering, grid meshes and
//!   known-pose evaluation.
//! - [`pipeline`]: configuration and the commands behind the `uwstereo`
//!   binary.

pub mod error;
pub mod image;
pub mod io;
pub mod kv;
pub mod lm;
pub mod optics;
pub mod pipeline;
pub mod recon;
pub mod restoration;
pub mod rig;
pub mod segmentation;
pub mod stereo;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
