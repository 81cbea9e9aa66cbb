//! Weakly supervised segmentation through counterfactual inpainting.
//!
//! A binary classifier is trained on image-level labels; a perturbation-based
//! encoder–decoder GAN then learns to remove whatever makes the classifier
//! call an image abnormal. The absolute difference between an input and its
//! counterfactual is thresholded into a segmentation mask. Attribution
//! baselines (RISE, Score-CAM, Layer-CAM) and a dual-condition counterfactual
//! baseline are evaluated under the same protocol.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod explain;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod report;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use grid::{Image, Mask};
