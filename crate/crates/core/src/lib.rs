//! Streaming keyword spotting with a dilated causal convolution detector.
//!
//! The crate covers the whole pipeline: LFBE feature extraction
//! ([`features`]), end-of-keyword labels ([`labeling`]), the gated residual
//! network ([`network`]), masked cross-entropy training with Adam
//! ([`training`]), cached frame-by-frame inference ([`streaming`]), FRR/FAH
//! evaluation ([`evaluation`]) and dataset handling ([`dataio`]).
// NaN-rejecting `!(x > 0.0)` checks are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod labeling;
pub mod network;
pub mod streaming;
pub mod tensor;
pub mod training;

pub use error::{KwsError, Result};
