//! WaveNet-style keyword detector: an initial causal convolution, a stack of
//! gated dilated causal convolution blocks with residual and skip
//! projections, and a rectified dense head with a 2-way softmax.

mod arch;
pub mod checkpoint;
mod forward;
pub mod kernels;
mod params;

pub use arch::{Architecture, ConvSpec};
pub use forward::{
    causal_dilated_conv, forward_with_cache, gated_block_forward, network_forward, BlockCache, ForwardCache,
    PosteriorTrace,
};
pub use params::{xavier_init, BlockParams, ConvParams, DenseParams, ModelParams};

use crate::error::Result;
use crate::features::{FeatureNorm, FeatureSequence};

/// Everything needed to score audio features: shape, weights and input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub params: ModelParams,
    pub norm: FeatureNorm,
}

impl Model {
    pub fn new(arch: Architecture, params: ModelParams, norm: FeatureNorm) -> Self {
        Self { arch, params, norm }
    }

    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = ModelParams::xavier(&arch, seed);
        let norm = FeatureNorm::identity(arch.input_dim);
        Ok(Self { arch, params, norm })
    }

    /// Normalizes raw LFBE frames and runs the batch forward pass.
    pub fn posteriors(&self, features: &FeatureSequence) -> Result<PosteriorTrace> {
        let normalized = FeatureSequence::new(self.norm.apply(&features.frames), features.hop_ms);
        network_forward(&normalized, &self.params, &self.arch)
    }
}
