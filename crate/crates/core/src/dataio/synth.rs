//! Synthetic keyword corpus. The "keyword" is a fixed three-tone motif;
//! negatives hold background noise, the motif's first two tones only, the
//! motif reversed, or unrelated tones. Keyword start and end times are known
//! exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, Label, ManifestEntry};
use super::wav::write_wav;
use crate::error::Result;
use crate::features::{AudioBuffer, SAMPLE_RATE};

/// (frequency Hz, duration ms) of each keyword tone.
pub const KEYWORD_MOTIF: [(f32, f32); 3] = [(700.0, 120.0), (1400.0, 120.0), (1000.0, 160.0)];
const TONE_AMPLITUDE: f32 = 0.3;
const NOISE_AMPLITUDE: f32 = 0.01;

fn ms_to_samples(ms: f32) -> usize {
    (ms * SAMPLE_RATE as f32 / 1000.0).round() as usize
}

fn motif_ms(motif: &[(f32, f32)]) -> f32 {
    motif.iter().map(|&(_, d)| d).sum()
}

/// Adds `motif` at `start`, with 5 ms raised-cosine ramps on each tone.
fn add_motif(samples: &mut [f32], start: usize, motif: &[(f32, f32)], amp: f32) {
    let ramp = ms_to_samples(5.0);
    let mut pos = start;
    for &(freq, dur) in motif {
        let n = ms_to_samples(dur);
        for i in 0..n {
            let env = if i < ramp {
                0.5 - 0.5 * (std::f32::consts::PI * i as f32 / ramp as f32).cos()
            } else if n - i <= ramp {
                0.5 - 0.5 * (std::f32::consts::PI * (n - i) as f32 / ramp as f32).cos()
            } else {
                1.0
            };
            let phase = 2.0 * std::f32::consts::PI * freq * i as f32 / SAMPLE_RATE as f32;
            if let Some(s) = samples.get_mut(pos + i) {
                *s += amp * env * phase.sin();
            }
        }
        pos += n;
    }
}

fn background(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKind {
    Noise,
    /// First two tones of the keyword.
    Partial,
    Reversed,
    Distractor,
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub audio: AudioBuffer,
    pub label: Label,
    /// Keyword (start, end) in ms for positives.
    pub keyword_ms: Option<(f64, f64)>,
    pub kind: Option<NegativeKind>,
}

pub fn positive(rng: &mut ChaCha8Rng) -> SynthUtterance {
    let lead = rng.random_range(300.0..700.0f32);
    let tail = rng.random_range(300.0..600.0f32);
    let total = ms_to_samples(lead + motif_ms(&KEYWORD_MOTIF) + tail);
    let mut samples = background(total, rng);
    let amp = TONE_AMPLITUDE * rng.random_range(0.7..1.3f32);
    let start = ms_to_samples(lead);
    add_motif(&mut samples, start, &KEYWORD_MOTIF, amp);
    let start_ms = start as f64 * 1000.0 / SAMPLE_RATE as f64;
    let end_ms = start_ms + motif_ms(&KEYWORD_MOTIF) as f64;
    SynthUtterance {
        audio: AudioBuffer::new(samples, SAMPLE_RATE),
        label: Label::Positive,
        keyword_ms: Some((start_ms, end_ms)),
        kind: None,
    }
}

pub fn negative(kind: NegativeKind, rng: &mut ChaCha8Rng) -> SynthUtterance {
    let total_ms = rng.random_range(1100.0..1800.0f32);
    let mut samples = background(ms_to_samples(total_ms), rng);
    let amp = TONE_AMPLITUDE * rng.random_range(0.7..1.3f32);
    let motif: Vec<(f32, f32)> = match kind {
        NegativeKind::Noise => Vec::new(),
        NegativeKind::Partial => KEYWORD_MOTIF[..2].to_vec(),
        NegativeKind::Reversed => KEYWORD_MOTIF.iter().rev().copied().collect(),
        NegativeKind::Distractor => vec![(500.0, 150.0), (1800.0, 120.0), (850.0, 130.0)],
    };
    if !motif.is_empty() {
        let room = total_ms - motif_ms(&motif) - 100.0;
        let start = ms_to_samples(rng.random_range(100.0..room.max(101.0)));
        add_motif(&mut samples, start, &motif, amp);
    }
    SynthUtterance {
        audio: AudioBuffer::new(samples, SAMPLE_RATE),
        label: Label::Negative,
        keyword_ms: None,
        kind: Some(kind),
    }
}

/// `positives` keyword utterances followed by `negatives` cycling through every negative kind.
pub fn generate(positives: usize, negatives: usize, seed: u64) -> Vec<SynthUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        NegativeKind::Partial,
        NegativeKind::Noise,
        NegativeKind::Reversed,
        NegativeKind::Distractor,
    ];
    let mut out: Vec<SynthUtterance> = (0..positives).map(|_| positive(&mut rng)).collect();
    out.extend((0..negatives).map(|i| negative(kinds[i % kinds.len()], &mut rng)));
    out
}

/// Broadband noise with slowly wandering tones, used as an augmentation source.
pub fn noise_clip(seconds: f32, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f32) as usize;
    let tones: Vec<(f32, f32)> = (0..4)
        .map(|_| (rng.random_range(200.0..3000.0f32), rng.random_range(0.02..0.06f32)))
        .collect();
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / SAMPLE_RATE as f32;
            let hum: f32 = tones
                .iter()
                .map(|&(f, a)| a * (2.0 * std::f32::consts::PI * f * t * (1.0 + 0.05 * (0.7 * t).sin())).sin())
                .sum();
            hum + rng.random_range(-0.08..0.08f32)
        })
        .collect();
    AudioBuffer::new(samples, SAMPLE_RATE)
}

/// Writes `<name>/NNNN.wav` files and `<name>.jsonl` under `dir`; returns the entries.
pub fn write_split(dir: &Path, name: &str, utterances: &[SynthUtterance]) -> Result<Vec<ManifestEntry>> {
    let audio_dir = dir.join(name);
    std::fs::create_dir_all(&audio_dir)?;
    let mut entries = Vec::with_capacity(utterances.len());
    for (i, u) in utterances.iter().enumerate() {
        let rel = Path::new(name).join(format!("{i:04}.wav"));
        write_wav(&dir.join(&rel), &u.audio)?;
        entries.push(ManifestEntry {
            audio_path: rel,
            label: u.label,
            speaker_id: format!("synth-{name}-{}", i % 7),
            end_of_keyword_ms: u.keyword_ms.map(|(_, e)| e),
            start_of_keyword_ms: u.keyword_ms.map(|(s, _)| s),
            duration_ms: Some(u.audio.duration_secs() * 1000.0),
        });
    }
    write_manifest(&entries, &dir.join(format!("{name}.jsonl")))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positives_carry_exact_keyword_times() {
        let utts = generate(5, 0, 3);
        for u in &utts {
            let (start, end) = u.keyword_ms.unwrap();
            assert!((end - start - 400.0).abs() < 1e-9);
            assert!(end * 16.0 < u.audio.len() as f64);
            assert!(u.audio.samples.iter().all(|s| s.abs() <= 1.0));
        }
    }

    #[test]
    fn negatives_cycle_kinds() {
        let utts = generate(0, 8, 1);
        assert_eq!(utts[0].kind, Some(NegativeKind::Partial));
        assert_eq!(utts[5].kind, Some(NegativeKind::Noise));
        assert!(utts.iter().all(|u| u.label == Label::Negative && u.keyword_ms.is_none()));
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(2, 2, 42);
        let b = generate(2, 2, 42);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.audio, y.audio);
        }
    }
}
