//! Compact spatio-temporal graph convolution classifier.
//!
//! Each block is `spatial aggregation (Â·X·W) -> per-channel affine -> ReLU
//! -> temporal convolution -> ReLU`; the head is global average pooling
//! over frames and joints, a masked mean over present persons, and a
//! linear classifier. Gradients are written by hand, layer by layer, in
//! reverse order.

mod adjacency;
pub mod checkpoint;
mod model;
mod optim;
mod params;
mod real;

pub use adjacency::{build_adjacency, NormalizedAdjacency};
pub use model::{backward, forward, ForwardCache, SampleInput};
pub use optim::{cosine_lr, Sgd, SgdConfig};
pub use params::{Param, ParamSet};
pub use real::{Precision, Real};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub joints: usize,
    pub frames: usize,
    pub persons: usize,
    pub num_classes: usize,
    /// Output width of each block.
    pub widths: Vec<usize>,
    pub temporal_kernel: usize,
    /// Temporal stride of each block (1 or 2).
    pub strides: Vec<usize>,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels < 1 || self.joints < 1 || self.frames < 1 || self.persons < 1 {
            return Err(config_err!("backbone input dimensions must be >= 1"));
        }
        if self.num_classes < 1 {
            return Err(config_err!("backbone needs at least one class"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(config_err!("block widths must be non-empty and >= 1"));
        }
        if self.widths.len() != self.strides.len() {
            return Err(config_err!(
                "{} widths but {} strides",
                self.widths.len(),
                self.strides.len()
            ));
        }
        if self.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(config_err!("temporal strides must be 1 or 2"));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return Err(config_err!("temporal kernel must be odd"));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        (self.temporal_kernel - 1) / 2
    }

    /// Frame count after each block.
    pub fn frames_after_blocks(&self) -> Vec<usize> {
        let (k, p) = (self.temporal_kernel, self.padding());
        let mut l = self.frames;
        self.strides
            .iter()
            .map(|&s| {
                l = (l + 2 * p).saturating_sub(k) / s + 1;
                l
            })
            .collect()
    }

    pub fn block_input_width(&self, block: usize) -> usize {
        if block == 0 {
            self.input_channels
        } else {
            self.widths[block - 1]
        }
    }
}
