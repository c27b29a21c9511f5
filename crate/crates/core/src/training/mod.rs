//! Masked cross-entropy training: backpropagation through the detector,
//! global-norm gradient clipping and Adam.

mod backward;
mod loss;
mod optim;
mod trainer;

pub use backward::{backward, GradientSet};
pub use loss::{masked_cross_entropy, weighted_masked_cross_entropy};
pub use optim::{adam_step, adam_step_tensors, clip_gradients, global_norm, AdamState};
pub use trainer::{mean_loss, train, Example, LossRecord, NullObserver, Split, TrainConfig, TrainObserver, TrainOutcome};
