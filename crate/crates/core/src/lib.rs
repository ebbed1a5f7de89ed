//! Offline radar/camera fusion.
//!
//! The crate calibrates a 3x4 projection from a radar's Cartesian frame to
//! camera pixels, pairs the two sensor streams by timestamp, clusters radar
//! returns, associates clusters with camera boxes, tracks fused objects with
//! a constant-velocity Kalman filter and flags camera detections the radar
//! does not corroborate. A deterministic simulator provides ground truth for
//! all of it.

pub mod assignment;
pub mod calibration;
pub mod consistency;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod radar_proc;
pub mod simulator;
pub mod sync;
pub mod tracking;
