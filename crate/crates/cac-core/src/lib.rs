//! Context-aware classifier for semantic segmentation, desk scale.
//!
//! A from-scratch implementation of a segmentation head whose classifier
//! weights are conditioned on each sample: categorical prototypes pooled
//! from the feature map (from ground truth in the oracle case, from the
//! model's own prediction in the deployable case) are fused with the
//! shared classifier through small projectors and used as per-image
//! decision boundaries under scaled cosine similarity. Training distills
//! the oracle head into the estimated one with an entropy-aware,
//! class-wise KL loss.
//!
//! The crate bundles everything needed to study the mechanism end to end:
//! a reverse-mode tape over dense `f64` tensors, a finite-difference
//! gradient checker, a deterministic generator of contextual scenes where
//! a fixed classifier is provably suboptimal, a seeded training loop with
//! mIoU evaluation, and an ablation runner.
//!
//! With the default `parallel` feature, per-image forward/backward passes
//! in a batch run on rayon workers (capped by `CAC_THREADS`); gradients
//! are reduced in fixed image order, so results are bit-identical to the
//! sequential fallback.

pub mod ablation;
pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod head;
mod init;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
