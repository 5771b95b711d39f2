//! Retinal blood-vessel segmentation toolkit.
//!
//! Everything needed to go from a raw fundus photograph to an evaluated
//! vessel probability map lives here, built from first principles:
//!
//! - [`tensor`] — dense NCHW tensors with reverse-mode autodiff (atrous
//!   convolution, pooling, bilinear upsampling, channel softmax).
//! - [`preprocess`] — automatic color enhancement (exact and two fast
//!   approximations) and per-patch global contrast normalization.
//! - [`augment`] — balanced 64x64 patch sampling and the randomized
//!   flip / HSV-gamma / rotation / scaling augmentations.
//! - [`net`] — the segmentation network: a multi-scale atrous block feeding
//!   a conv-only encoder with cross-layer fusion and a bilinear decoder.
//! - [`train`] — Adam training with CSV logging and resumable checkpoints.
//! - [`predict`] — whole-image and sliding-window structure prediction with
//!   overlap averaging.
//! - [`metrics`] — FOV-restricted confusion counts, ROC/AUC and reports.
//! - [`dataset`] — PNM codecs, DRIVE/STARE/CHASE layouts and synthetic
//!   phantom generation for desk-scale experiments.
//!
//! The companion guide under `book/` walks through each stage; its code
//! listings compile and run as doc-tests of this crate.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
