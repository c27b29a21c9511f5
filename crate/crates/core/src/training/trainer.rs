use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{backward, GradientSet};
use super::loss::weighted_masked_cross_entropy;
use super::optim::{adam_step, clip_gradients, AdamState};
use crate::error::{KwsError, Result};
use crate::features::FeatureSequence;
use crate::labeling::LabelSequence;
use crate::network::{network_forward, Model};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub clip_norm: f32,
    /// Utterances per optimizer step (gradients are averaged).
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps; 0 means no cap.
    pub max_steps: usize,
    pub seed: u64,
    /// Loss weight of keyword-target frames.
    pub pos_weight: f32,
    /// Stop once the selection loss drops below this; 0 disables.
    pub target_loss: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            batch_size: 32,
            epochs: 20,
            max_steps: 0,
            seed: 0,
            pos_weight: 1.0,
            target_loss: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KwsError::Config(format!("training: {m}")));
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be >= 0");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if !(self.pos_weight > 0.0) {
            return bad("pos_weight must be > 0");
        }
        if !(self.target_loss >= 0.0) {
            return bad("target_loss must be >= 0");
        }
        Ok(())
    }
}

/// A normalized feature matrix and its frame labels.
#[derive(Debug, Clone)]
pub struct Example {
    pub features: Matrix,
    pub labels: LabelSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub split: Split,
    pub loss: f32,
}

/// Hooks for logging and checkpointing during [`train`].
pub trait TrainObserver {
    fn on_loss(&mut self, _record: &LossRecord) -> Result<()> {
        Ok(())
    }
    /// Called whenever the selection loss improves.
    fn on_best(&mut self, _model: &Model, _loss: f32) -> Result<()> {
        Ok(())
    }
    fn on_epoch_end(&mut self, _model: &Model, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

pub struct NullObserver;

impl TrainObserver for NullObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest selection loss.
    pub best: Model,
    pub last: Model,
    pub best_loss: f32,
    pub steps: usize,
    pub history: Vec<LossRecord>,
}

/// Mean masked cross-entropy over a set of examples.
pub fn mean_loss(model: &Model, examples: &[Example], pos_weight: f32) -> Result<f32> {
    let losses: Vec<Result<f32>> = examples
        .par_iter()
        .map(|ex| {
            let trace = network_forward(
                &FeatureSequence::new(ex.features.clone(), 10.0),
                &model.params,
                &model.arch,
            )?;
            weighted_masked_cross_entropy(&trace, &ex.labels, pos_weight)
        })
        .collect();
    let mut total = 0.0f32;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len().max(1) as f32)
}

fn check_dataset(examples: &[Example], model: &Model) -> Result<()> {
    let mut has_pos = false;
    let mut has_neg = false;
    for (i, ex) in examples.iter().enumerate() {
        if ex.features.cols() != model.arch.input_dim || ex.features.rows() != ex.labels.len() {
            return Err(KwsError::Shape(format!("example {i}: features/labels mismatch")));
        }
        has_pos |= ex.labels.targets.contains(&1);
        has_neg |= ex.labels.targets.iter().zip(&ex.labels.mask).any(|(&y, &m)| y == 0 && m == 1);
    }
    if !(has_pos && has_neg) {
        return Err(KwsError::Data(
            "training data needs both keyword and background frames".into(),
        ));
    }
    Ok(())
}

/// Trains `model` in place of a copy; deterministic for a fixed seed.
///
/// Model selection uses the dev loss, or the full training loss when `dev` is empty.
pub fn train(
    train_set: &[Example],
    dev_set: &[Example],
    model: Model,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(train_set, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = model;
    let mut adam = AdamState::new(&current.params);
    let mut best: Option<(f32, Model)> = None;
    let mut history = Vec::new();
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut selected_at = None;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if config.max_steps > 0 && step >= config.max_steps {
                break 'epochs;
            }
            let per_example: Vec<Result<(f32, GradientSet)>> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    backward(&ex.features, &ex.labels, &current.params, &current.arch, config.pos_weight)
                })
                .collect();
            let mut grads = GradientSet::zeros(&current.arch);
            let mut loss = 0.0f32;
            for result in per_example {
                let (l, g) = result.map_err(|e| KwsError::Divergence {
                    step,
                    message: e.to_string(),
                })?;
                loss += l;
                grads.add_assign(&g);
            }
            let n = batch.len() as f32;
            loss /= n;
            grads.scale(1.0 / n);
            if !loss.is_finite() {
                return Err(KwsError::Divergence {
                    step,
                    message: format!("loss {loss}"),
                });
            }
            let clipped = clip_gradients(&grads, config.clip_norm);
            adam_step(&mut current.params, &clipped, &mut adam, config)?;
            if !current.params.is_finite() {
                return Err(KwsError::Divergence {
                    step,
                    message: "non-finite parameters after update".into(),
                });
            }
            step += 1;
            let record = LossRecord {
                step,
                split: Split::Train,
                loss,
            };
            observer.on_loss(&record)?;
            history.push(record);
        }
        let loss = select(&mut best, &current, train_set, dev_set, config, step, observer, &mut history)?;
        selected_at = Some(step);
        observer.on_epoch_end(&current, epoch)?;
        if loss < config.target_loss {
            break;
        }
    }
    if selected_at != Some(step) {
        select(&mut best, &current, train_set, dev_set, config, step, observer, &mut history)?;
    }
    let (best_loss, best_model) = best.expect("selection ran");
    Ok(TrainOutcome {
        best: best_model,
        last: current,
        best_loss,
        steps: step,
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn select(
    best: &mut Option<(f32, Model)>,
    current: &Model,
    train_set: &[Example],
    dev_set: &[Example],
    config: &TrainConfig,
    step: usize,
    observer: &mut dyn TrainObserver,
    history: &mut Vec<LossRecord>,
) -> Result<f32> {
    let (split, loss) = if dev_set.is_empty() {
        (Split::Train, mean_loss(current, train_set, config.pos_weight)?)
    } else {
        (Split::Dev, mean_loss(current, dev_set, config.pos_weight)?)
    };
    if !loss.is_finite() {
        return Err(KwsError::Divergence {
            step,
            message: format!("{} loss {loss}", split.as_str()),
        });
    }
    if split == Split::Dev {
        let record = LossRecord { step, split, loss };
        observer.on_loss(&record)?;
        history.push(record);
    }
    if best.as_ref().is_none_or(|(b, _)| loss < *b) {
        observer.on_best(current, loss)?;
        *best = Some((loss, current.clone()));
    }
    Ok(loss)
}
