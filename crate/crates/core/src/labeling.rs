//! End-of-keyword frame labeling with background masking, plus the
//! energy VAD used to locate keyword ends when no annotation exists.

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::features::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// Targets only in a window around the keyword end.
    #[default]
    EndOfKeyword,
    /// Targets on every frame from keyword start to end.
    DefaultAligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub delta_before_frames: usize,
    pub delta_after_frames: usize,
    pub masking_enabled: bool,
    pub scheme: LabelScheme,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            delta_before_frames: 15,
            delta_after_frames: 15,
            masking_enabled: true,
            scheme: LabelScheme::EndOfKeyword,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordSpan {
    pub end_frame: usize,
    pub start_frame: Option<usize>,
}

impl KeywordSpan {
    pub fn end(end_frame: usize) -> Self {
        Self {
            end_frame,
            start_frame: None,
        }
    }
}

/// Per-frame targets and loss mask (1 = frame contributes to the loss).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub targets: Vec<u8>,
    pub mask: Vec<u8>,
}

impl LabelSequence {
    /// Negative utterance: all background, every frame counted.
    pub fn negative(len: usize) -> Self {
        Self {
            targets: vec![0; len],
            mask: vec![1; len],
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn active_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    /// Percentile of frame energies taken as the noise floor.
    pub floor_percentile: f32,
    /// Log-domain margin above the floor.
    pub margin: f32,
    /// Gaps of at most this many frames are bridged.
    pub hangover_frames: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            floor_percentile: 10.0,
            margin: 3.0,
            hangover_frames: 5,
        }
    }
}

/// Mean of the LFBE coefficients of each frame.
pub fn frame_energies(features: &FeatureSequence) -> Vec<f32> {
    let dim = features.dim().max(1) as f32;
    features
        .frames
        .iter_rows()
        .map(|row| row.iter().sum::<f32>() / dim)
        .collect()
}

fn percentile(values: &[f32], pct: f32) -> f32 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let rank = ((pct / 100.0) * (sorted.len() - 1) as f32).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Voiced regions as inclusive `(first, last)` frame pairs.
pub fn voiced_regions(energies: &[f32], vad: &VadConfig) -> Vec<(usize, usize)> {
    if energies.is_empty() {
        return Vec::new();
    }
    let threshold = percentile(energies, vad.floor_percentile) + vad.margin;
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for (t, &e) in energies.iter().enumerate() {
        if e <= threshold {
            continue;
        }
        match regions.last_mut() {
            Some((_, last)) if t - *last <= vad.hangover_frames + 1 => *last = t,
            _ => regions.push((t, t)),
        }
    }
    regions
}

/// End of the keyword: last frame of the last voiced region.
pub fn locate_end_of_keyword(features: &FeatureSequence, vad: &VadConfig) -> Result<KeywordSpan> {
    let regions = voiced_regions(&frame_energies(features), vad);
    match (regions.first(), regions.last()) {
        (Some(&(start, _)), Some(&(_, end))) => Ok(KeywordSpan {
            end_frame: end,
            start_frame: (start < end).then_some(start),
        }),
        _ => Err(KwsError::NoSpeech),
    }
}

pub fn build_targets(len: usize, span: KeywordSpan, config: &LabelingConfig) -> Result<LabelSequence> {
    if span.end_frame >= len {
        return Err(KwsError::Data(format!(
            "keyword end frame {} outside {len} frames",
            span.end_frame
        )));
    }
    let (first, last) = match config.scheme {
        LabelScheme::EndOfKeyword => (
            span.end_frame.saturating_sub(config.delta_before_frames),
            (span.end_frame + config.delta_after_frames).min(len - 1),
        ),
        LabelScheme::DefaultAligned => {
            let start = span.start_frame.ok_or_else(|| {
                KwsError::Config("default_aligned labeling requires a keyword start frame".into())
            })?;
            if start > span.end_frame {
                return Err(KwsError::Data(format!(
                    "keyword start {start} after end {}",
                    span.end_frame
                )));
            }
            (start, span.end_frame)
        }
    };
    let mut targets = vec![0u8; len];
    targets[first..=last].fill(1);
    let mask = if config.masking_enabled {
        targets.clone()
    } else {
        vec![1u8; len]
    };
    Ok(LabelSequence { targets, mask })
}

/// Frame index containing a time offset in milliseconds, clamped to the sequence.
pub fn ms_to_frame(ms: f64, hop_ms: f32, len: usize) -> usize {
    let frame = (ms / hop_ms as f64).floor().max(0.0) as usize;
    frame.min(len.saturating_sub(1))
}
