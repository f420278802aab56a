//! HIPS contrast synthesis and THOMAS-style multi-atlas thalamic
//! segmentation, with the evaluation and clinical statistics used to
//! validate them.

pub mod error;
pub mod fusion;
pub mod intensity;
pub mod linalg;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod registration;
pub mod segmentation;
pub mod special;
pub mod stats;
pub mod synthesis;
pub mod volume;

pub use error::{Error, Result};
