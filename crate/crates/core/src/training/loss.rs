use crate::error::{KwsError, Result};
use crate::labeling::LabelSequence;
use crate::network::PosteriorTrace;

const MIN_PROB: f32 = 1e-30;

/// Mean of `-ln p(target)` over frames with mask 1.
pub fn masked_cross_entropy(trace: &PosteriorTrace, labels: &LabelSequence) -> Result<f32> {
    weighted_masked_cross_entropy(trace, labels, 1.0)
}

/// As [`masked_cross_entropy`], with target-1 terms multiplied by `pos_weight`.
/// The normalizer stays the number of active frames.
pub fn weighted_masked_cross_entropy(
    trace: &PosteriorTrace,
    labels: &LabelSequence,
    pos_weight: f32,
) -> Result<f32> {
    if trace.len() != labels.len() || labels.mask.len() != labels.len() {
        return Err(KwsError::Shape(format!(
            "{} posteriors vs {} labels",
            trace.len(),
            labels.len()
        )));
    }
    let active = labels.active_frames();
    if active == 0 {
        return Err(KwsError::Data("label mask has no active frames".into()));
    }
    let mut total = 0.0f32;
    for ((p, &y), &m) in trace.probs.iter().zip(&labels.targets).zip(&labels.mask) {
        if m == 0 {
            continue;
        }
        let w = if y == 1 { pos_weight } else { 1.0 };
        total += -w * p[y as usize].max(MIN_PROB).ln();
    }
    Ok(total / active as f32)
}
