use rayon::prelude::*;

use super::manifest::ManifestEntry;
use super::wav::read_wav;
use crate::error::{KwsError, Result};
use crate::features::{FeatureSequence, LfbeExtractor};
use crate::labeling::{
    build_targets, locate_end_of_keyword, ms_to_frame, KeywordSpan, LabelSequence, LabelingConfig, VadConfig,
};

/// Keyword position from manifest annotations, falling back to the VAD.
pub fn keyword_span(entry: &ManifestEntry, features: &FeatureSequence, vad: &VadConfig) -> Result<KeywordSpan> {
    let len = features.len();
    if len == 0 {
        return Err(KwsError::Data(format!("{}: shorter than one frame", entry.audio_path.display())));
    }
    match entry.end_of_keyword_ms {
        Some(end_ms) => {
            let end_frame = ms_to_frame(end_ms, features.hop_ms, len);
            let start_frame = entry
                .start_of_keyword_ms
                .map(|s| ms_to_frame(s, features.hop_ms, len))
                .filter(|&s| s < end_frame);
            Ok(KeywordSpan { end_frame, start_frame })
        }
        None => locate_end_of_keyword(features, vad),
    }
}

pub fn labels_for(
    entry: &ManifestEntry,
    features: &FeatureSequence,
    labeling: &LabelingConfig,
    vad: &VadConfig,
) -> Result<LabelSequence> {
    if !entry.is_positive() {
        return Ok(LabelSequence::negative(features.len()));
    }
    let span = keyword_span(entry, features, vad)?;
    build_targets(features.len(), span, labeling)
}

/// Raw features and labels for one manifest entry.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub entry: ManifestEntry,
    pub features: FeatureSequence,
    pub labels: LabelSequence,
    pub duration_secs: f64,
}

/// Reads, featurizes and labels every entry in parallel, preserving order.
/// Positives where no keyword end can be found are skipped with a warning.
pub fn load_examples(
    entries: &[ManifestEntry],
    extractor: &LfbeExtractor,
    labeling: &LabelingConfig,
    vad: &VadConfig,
) -> Result<Vec<PreparedUtterance>> {
    let results: Vec<Result<Option<PreparedUtterance>>> = entries
        .par_iter()
        .map(|entry| {
            let audio = read_wav(&entry.audio_path)?;
            let features = extractor.compute(&audio)?;
            if features.is_empty() {
                log::warn!("skipping {}: shorter than one frame", entry.audio_path.display());
                return Ok(None);
            }
            match labels_for(entry, &features, labeling, vad) {
                Ok(labels) => Ok(Some(PreparedUtterance {
                    entry: entry.clone(),
                    features,
                    labels,
                    duration_secs: audio.duration_secs(),
                })),
                Err(KwsError::NoSpeech) => {
                    log::warn!("skipping {}: no speech detected", entry.audio_path.display());
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        if let Some(u) = r? {
            out.push(u);
        }
    }
    Ok(out)
}
