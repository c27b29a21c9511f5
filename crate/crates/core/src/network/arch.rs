use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

/// Static description of the detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub initial_filter_size: usize,
    pub num_blocks: usize,
    pub block_filter_size: usize,
    pub dilation_cycle: Vec<usize>,
    /// Width of the residual stream between blocks.
    pub residual_channels: usize,
    /// Width of the filter/gate convolutions inside each block.
    pub dilation_channels: usize,
    pub skip_channels: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub gating_enabled: bool,
}

impl Default for Architecture {
    /// 24 gated blocks, dilations 1,2,4,8 repeating, residual 16, skip 32.
    fn default() -> Self {
        Self {
            input_dim: 20,
            initial_filter_size: 3,
            num_blocks: 24,
            block_filter_size: 3,
            dilation_cycle: vec![1, 2, 4, 8],
            residual_channels: 16,
            dilation_channels: 64,
            skip_channels: 32,
            head_hidden: 32,
            num_classes: 2,
            gating_enabled: true,
        }
    }
}

/// Filter size and dilation of one causal convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filter_size: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Past frames this layer reads beyond the current one.
    pub fn history(&self) -> usize {
        self.dilation * (self.filter_size - 1)
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KwsError::Config(format!("architecture: {m}")));
        if self.num_classes != 2 {
            return bad("num_classes must be 2");
        }
        if self.input_dim == 0
            || self.residual_channels == 0
            || self.dilation_channels == 0
            || self.skip_channels == 0
            || self.head_hidden == 0
        {
            return bad("all channel counts must be positive");
        }
        if self.initial_filter_size == 0 || self.block_filter_size == 0 {
            return bad("filter sizes must be positive");
        }
        if self.num_blocks > 0 && self.dilation_cycle.is_empty() {
            return bad("dilation_cycle must not be empty");
        }
        if self.dilation_cycle.contains(&0) {
            return bad("dilations must be >= 1");
        }
        Ok(())
    }

    pub fn block_dilation(&self, block: usize) -> usize {
        self.dilation_cycle[block % self.dilation_cycle.len()]
    }

    pub fn initial_conv(&self) -> ConvSpec {
        ConvSpec {
            filter_size: self.initial_filter_size,
            dilation: 1,
        }
    }

    pub fn block_conv(&self, block: usize) -> ConvSpec {
        ConvSpec {
            filter_size: self.block_filter_size,
            dilation: self.block_dilation(block),
        }
    }

    /// Every causal convolution in forward order (the initial layer first).
    pub fn conv_layers(&self) -> Vec<ConvSpec> {
        std::iter::once(self.initial_conv())
            .chain((0..self.num_blocks).map(|b| self.block_conv(b)))
            .collect()
    }

    /// Look-back span `sum_i d_i (s_i - 1)` in frames: output t depends on
    /// inputs `t - receptive_field ..= t`.
    pub fn receptive_field(&self) -> usize {
        self.conv_layers().iter().map(ConvSpec::history).sum()
    }

    /// Number of input frames that can influence one output frame.
    pub fn context_frames(&self) -> usize {
        self.receptive_field() + 1
    }

    /// Duration covered by the context at the given hop.
    pub fn context_seconds(&self, hop_ms: f32) -> f32 {
        self.context_frames() as f32 * hop_ms / 1000.0
    }

    /// Exact count of weights and biases.
    pub fn param_count(&self) -> usize {
        let conv = |s: usize, cin: usize, cout: usize| s * cin * cout + cout;
        let dense = |cin: usize, cout: usize| cin * cout + cout;
        let (r, d, k) = (
            self.residual_channels,
            self.dilation_channels,
            self.skip_channels,
        );
        let block = 2 * conv(self.block_filter_size, r, d) + dense(d, r) + dense(d, k);
        conv(self.initial_filter_size, self.input_dim, r)
            + self.num_blocks * block
            + dense(k, self.head_hidden)
            + dense(self.head_hidden, self.num_classes)
    }
}
