//! Core algorithms for event-driven motion-blur synthesis and blur-adaptive
//! multi-person 2D pose estimation.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`event`], [`img`]: storage types and on-disk formats.
//! - [`sim`]: synthetic scenes — articulated stick figures on continuous
//!   trajectories rendered to sharp frames, event streams, reference blur,
//!   and ground-truth poses.
//! - [`flow`]: per-slice dense flow by block-wise contrast maximization.
//! - [`blur`]: event-driven blur synthesis by forward-warp averaging, plus
//!   geometric augmentation.
//! - [`pose`]: center/keypoint heatmap + offset field codec and decoding.
//! - [`pseudo`]: pseudo-label generation with confidence-based single and
//!   mutual uncertainty masks.
//! - [`loss`]: masked heatmap / offset losses with analytic gradients.
//! - [`eval`]: OKS-based average precision / recall.
//! - [`adapt`]: toy differentiable predictor and the four-stage
//!   teacher/student adaptation protocol.

pub mod adapt;
pub mod blur;
pub mod error;
pub mod eval;
pub mod event;
pub mod flow;
pub mod img;
pub mod loss;
pub mod pose;
pub mod pseudo;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
