//! Gaze-guided global-focal transformer for chest radiograph classification.
//!
//! The crate provides a small autodiff tensor core, shifting-window
//! transformer blocks, the fused global-focal student-teacher system with
//! its visual-attention losses, eye-gaze heatmap preprocessing, evaluation
//! metrics, and the training/inference plumbing used by the `visattn` CLI.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gaze;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod param;
pub mod rng;
pub mod system;
pub mod tensor;
pub mod train;
pub mod window;
