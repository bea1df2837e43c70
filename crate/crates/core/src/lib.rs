//! Novel LiDAR view synthesis at desk scale.
//!
//! The crate converts point clouds to and from range pseudo-images under an
//! explicit spinning-LiDAR sensor model, renders novel views with both a
//! ray-casting baseline and a trainable neural field (distance, intensity and
//! ray-drop heads), and scores synthesized views with point-cloud and
//! range-image metrics. Everything runs on the CPU in f64.

pub mod autodiff;
pub mod geom;

pub use geom::{Mat3, Vec3};
pub mod cli;
pub mod lidar;
pub mod metrics;
pub mod store;
pub mod synth;
