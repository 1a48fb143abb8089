//! Balanced representation learning for long-tailed skeleton-based action
//! recognition.
//!
//! The crate is organised bottom-up:
//!
//! - [`skeleton`]: motion tensors, joint topology and the six modal streams
//! - [`container`]: the `SKL1` sample/score container format
//! - [`longtail`]: long-tailed split construction, class statistics, shot groups
//! - [`augment`]: flip, rotate, scale and uniform temporal sampling
//! - [`exploration`]: rebalanced partial mixup and the reverse (tail) oversampler
//! - [`loss`]: cross-entropy, action-aware loss, focal/weighted baselines, detached schedule
//! - [`backbone`]: a compact spatio-temporal GCN with hand-written reverse-mode gradients
//! - [`train`]: configuration, synthetic data, training, evaluation, ensembling, reports

// Validators use `!(x >= lo)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod backbone;
pub mod container;
pub mod error;
pub mod exploration;
pub mod longtail;
pub mod loss;
pub mod rng;
pub mod skeleton;
pub mod train;

pub use error::{Error, Result};
pub use exploration::SoftLabel;
pub use longtail::{ClassHistogram, DatasetManifest, ShotGroups};
pub use skeleton::{Modality, SkeletonGraph, SkeletonSequence};
