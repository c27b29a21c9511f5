use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::features::AudioBuffer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub noise_source_paths: Vec<PathBuf>,
    pub snr_db: f32,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            noise_source_paths: Vec::new(),
            snr_db: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub audio: AudioBuffer,
    /// Gain applied to the noise segment.
    pub noise_scale: f32,
    /// Start of the noise segment within the noise clip.
    pub noise_offset: usize,
    pub clipped_fraction: f64,
}

fn mean_power(samples: impl Iterator<Item = f32>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for s in samples {
        sum += (s as f64) * (s as f64);
        n += 1;
    }
    sum / n.max(1) as f64
}

/// Adds a seeded, looped noise segment scaled so that
/// `10·log10(P_clean / P_noise) = snr_db`, powers taken over the clean utterance.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f32, seed: u64) -> Result<MixResult> {
    if clean.sample_rate != noise.sample_rate {
        return Err(KwsError::Data(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if noise.is_empty() || clean.is_empty() {
        return Err(KwsError::Data("cannot mix empty audio".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..noise.len());
    let segment: Vec<f32> = (0..clean.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let p_clean = mean_power(clean.samples.iter().copied());
    let p_noise = mean_power(segment.iter().copied());
    if p_clean == 0.0 {
        return Err(KwsError::Data("clean signal has zero power".into()));
    }
    if p_noise == 0.0 {
        return Err(KwsError::Data("noise segment has zero power".into()));
    }
    let scale = (p_clean / (p_noise * 10f64.powf(snr_db as f64 / 10.0))).sqrt() as f32;
    let mut clipped = 0usize;
    let samples = clean
        .samples
        .iter()
        .zip(&segment)
        .map(|(&c, &n)| {
            let v = c + scale * n;
            if v.abs() > 1.0 {
                clipped += 1;
            }
            v.clamp(-1.0, 1.0)
        })
        .collect();
    let clipped_fraction = clipped as f64 / clean.len() as f64;
    if clipped > 0 {
        log::debug!("mix at {snr_db} dB clipped {:.3}% of samples", 100.0 * clipped_fraction);
    }
    Ok(MixResult {
        audio: AudioBuffer::new(samples, clean.sample_rate),
        noise_scale: scale,
        noise_offset: offset,
        clipped_fraction,
    })
}
