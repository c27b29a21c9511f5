//! Log-Mel filterbank energy (LFBE) extraction.
//!
//! Pipeline per frame: pre-emphasis, Hamming window, zero-padded FFT,
//! power spectrum, triangular mel filterbank, `ln(x + log_floor)`.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::tensor::Matrix;

pub const SAMPLE_RATE: u32 = 16_000;
const PRE_EMPHASIS: f32 = 0.97;

/// Mono audio with samples scaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    /// 16-bit PCM scaled by 1/32768.
    pub fn from_pcm16(pcm: &[i16], sample_rate: u32) -> Self {
        Self {
            samples: pcm.iter().map(|&s| s as f32 / 32768.0).collect(),
            sample_rate,
        }
    }

    pub fn to_pcm16(&self) -> Vec<i16> {
        self.samples
            .iter()
            .map(|&s| (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            .collect()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub num_mels: usize,
    pub window_ms: f32,
    pub hop_ms: f32,
    pub fft_size: usize,
    pub mel_low_hz: f32,
    pub mel_high_hz: f32,
    pub log_floor: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            num_mels: 20,
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            mel_low_hz: 20.0,
            mel_high_hz: 8000.0,
            log_floor: 1e-7,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f32 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f32 / 1000.0).round() as usize
    }

    /// Number of frames produced for `num_samples` samples.
    pub fn num_frames(&self, num_samples: usize, sample_rate: u32) -> usize {
        let window = self.window_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        if num_samples < window {
            0
        } else {
            (num_samples - window) / hop + 1
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |m: String| Err(KwsError::Config(m));
        if sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.num_mels == 0 {
            return bad("num_mels must be positive".into());
        }
        if !(self.hop_ms > 0.0) || self.hop_samples(sample_rate) == 0 {
            return bad(format!("hop_ms {} too small", self.hop_ms));
        }
        if self.window_ms < self.hop_ms {
            return bad(format!(
                "window_ms ({}) must be >= hop_ms ({})",
                self.window_ms, self.hop_ms
            ));
        }
        if self.fft_size < self.window_samples(sample_rate) {
            return bad(format!(
                "fft_size {} shorter than the {}-sample window",
                self.fft_size,
                self.window_samples(sample_rate)
            ));
        }
        let nyquist = sample_rate as f32 / 2.0;
        if !(self.mel_low_hz >= 0.0 && self.mel_low_hz < self.mel_high_hz)
            || self.mel_high_hz > nyquist
        {
            return bad(format!(
                "mel range [{}, {}] Hz invalid for Nyquist {nyquist} Hz",
                self.mel_low_hz, self.mel_high_hz
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f32) -> f32 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f32) -> f32 {
    700.0 * (10f32.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the `fft_size/2 + 1` power-spectrum bins.
#[derive(Debug, Clone)]
pub struct Filterbank {
    /// num_mels x num_bins, non-negative.
    pub weights: Matrix,
    /// Filter edges in Hz: filter i spans `edges[i]..edges[i + 2]`, apex at `edges[i + 1]`.
    pub edges_hz: Vec<f32>,
    pub bin_hz: f32,
}

impl Filterbank {
    pub fn num_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.cols()
    }

    pub fn center_hz(&self, filter: usize) -> f32 {
        self.edges_hz[filter + 1]
    }

    /// (lower, upper) edge of a filter's support in Hz.
    pub fn band_hz(&self, filter: usize) -> (f32, f32) {
        (self.edges_hz[filter], self.edges_hz[filter + 2])
    }

    /// Bin index nearest a filter's apex.
    pub fn center_bin(&self, filter: usize) -> usize {
        (self.center_hz(filter) / self.bin_hz).round() as usize
    }
}

pub fn build_mel_filterbank(config: &FeatureConfig, sample_rate: u32) -> Result<Filterbank> {
    config.validate(sample_rate)?;
    let num_bins = config.fft_size / 2 + 1;
    let bin_hz = sample_rate as f32 / config.fft_size as f32;
    let mel_low = hz_to_mel(config.mel_low_hz);
    let mel_high = hz_to_mel(config.mel_high_hz);
    let step = (mel_high - mel_low) / (config.num_mels + 1) as f32;
    let mel_points: Vec<f32> = (0..config.num_mels + 2)
        .map(|i| mel_low + step * i as f32)
        .collect();

    let mut weights = Matrix::zeros(config.num_mels, num_bins);
    for filter in 0..config.num_mels {
        let (left, center, right) = (
            mel_points[filter],
            mel_points[filter + 1],
            mel_points[filter + 2],
        );
        let row = weights.row_mut(filter);
        for (bin, w) in row.iter_mut().enumerate() {
            let mel = hz_to_mel(bin as f32 * bin_hz);
            let rising = (mel - left) / (center - left);
            let falling = (right - mel) / (right - center);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(KwsError::Config(format!(
                "{} mel filters do not fit between {} and {} Hz with {}-point FFT (filter {filter} covers no bin)",
                config.num_mels, config.mel_low_hz, config.mel_high_hz, config.fft_size
            )));
        }
    }
    Ok(Filterbank {
        weights,
        edges_hz: mel_points.into_iter().map(mel_to_hz).collect(),
        bin_hz,
    })
}

/// Time-major LFBE frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Matrix,
    pub hop_ms: f32,
}

impl FeatureSequence {
    pub fn new(frames: Matrix, hop_ms: f32) -> Self {
        Self { frames, hop_ms }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// One row per frame, comma-separated.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.frames.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Reusable LFBE extractor holding the filterbank, window and FFT plan.
#[derive(Clone)]
pub struct LfbeExtractor {
    config: FeatureConfig,
    sample_rate: u32,
    filterbank: Filterbank,
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for LfbeExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LfbeExtractor")
            .field("config", &self.config)
            .field("sample_rate", &self.sample_rate)
            .finish_non_exhaustive()
    }
}

impl LfbeExtractor {
    pub fn new(config: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        let filterbank = build_mel_filterbank(config, sample_rate)?;
        let n = config.window_samples(sample_rate);
        let window = (0..n)
            .map(|i| {
                let denom = (n.max(2) - 1) as f32;
                0.54 - 0.46 * (2.0 * std::f32::consts::PI * i as f32 / denom).cos()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            config: config.clone(),
            sample_rate,
            filterbank,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.filterbank
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop_len(&self) -> usize {
        self.config.hop_samples(self.sample_rate)
    }

    /// LFBE vector of one window of samples (`samples.len() == window_len`).
    pub fn frame(&self, samples: &[f32], out: &mut [f32]) {
        debug_assert_eq!(samples.len(), self.window.len());
        let mut buf = vec![Complex::new(0.0f32, 0.0); self.config.fft_size];
        let mut prev = samples.first().copied().unwrap_or(0.0);
        for (i, (&s, &w)) in samples.iter().zip(&self.window).enumerate() {
            let emphasized = if i == 0 { s } else { s - PRE_EMPHASIS * prev };
            prev = s;
            buf[i] = Complex::new(emphasized * w, 0.0);
        }
        self.fft.process(&mut buf);
        let power: Vec<f32> = buf[..self.filterbank.num_bins()]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        for (m, o) in out.iter_mut().enumerate() {
            let energy: f32 = self
                .filterbank
                .weights
                .row(m)
                .iter()
                .zip(&power)
                .map(|(w, p)| w * p)
                .sum();
            *o = (energy + self.config.log_floor).ln();
        }
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<FeatureSequence> {
        if audio.sample_rate != self.sample_rate {
            return Err(KwsError::Data(format!(
                "audio at {} Hz, extractor built for {} Hz",
                audio.sample_rate, self.sample_rate
            )));
        }
        let t = self.config.num_frames(audio.len(), self.sample_rate);
        let hop = self.hop_len();
        let win = self.window_len();
        let mut frames = Matrix::zeros(t, self.config.num_mels);
        for i in 0..t {
            let start = i * hop;
            self.frame(&audio.samples[start..start + win], frames.row_mut(i));
        }
        Ok(FeatureSequence::new(frames, self.config.hop_ms))
    }
}

pub fn compute_lfbe(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureSequence> {
    LfbeExtractor::new(config, audio.sample_rate)?.compute(audio)
}

/// Incremental framing for live audio; produces the same frames as
/// [`LfbeExtractor::compute`] on the concatenated input.
#[derive(Debug, Clone)]
pub struct FrameStream {
    extractor: LfbeExtractor,
    pending: Vec<f32>,
}

impl FrameStream {
    pub fn new(extractor: LfbeExtractor) -> Self {
        Self {
            extractor,
            pending: Vec::new(),
        }
    }

    /// Appends samples and returns every frame that became complete.
    pub fn push(&mut self, samples: &[f32]) -> Vec<Vec<f32>> {
        self.pending.extend_from_slice(samples);
        let win = self.extractor.window_len();
        let hop = self.extractor.hop_len();
        let mut out = Vec::new();
        let mut start = 0;
        while self.pending.len() - start >= win {
            let mut frame = vec![0.0; self.extractor.config.num_mels];
            self.extractor
                .frame(&self.pending[start..start + win], &mut frame);
            out.push(frame);
            start += hop;
        }
        self.pending.drain(..start.min(self.pending.len()));
        out
    }

    pub fn reset(&mut self) {
        self.pending.clear();
    }
}

/// Per-coefficient affine normalization fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and standard deviation over every frame of every sequence.
    pub fn fit<'a, I>(sequences: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureSequence>,
    {
        let mut sum = vec![0f64; dim];
        let mut sq = vec![0f64; dim];
        let mut n = 0usize;
        for seq in sequences {
            if seq.dim() != dim {
                return Err(KwsError::Shape(format!(
                    "feature dim {} != {dim}",
                    seq.dim()
                )));
            }
            for row in seq.frames.iter_rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(KwsError::Data(
                "cannot fit normalization on zero frames".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / n as f64 - m * m).max(0.0).sqrt().max(1e-3)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    #[inline]
    pub fn apply_frame(&self, frame: &[f32], out: &mut [f32]) {
        for (((o, &x), m), s) in out.iter_mut().zip(frame).zip(&self.mean).zip(&self.std) {
            *o = (x - m) / s;
        }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(features.rows(), features.cols());
        for t in 0..features.rows() {
            self.apply_frame(features.row(t), out.row_mut(t));
        }
        out
    }
}
