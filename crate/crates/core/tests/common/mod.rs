//! Test oracles shared by the integration tests: a straightforward f64
//! re-implementation of the detector and synthetic dataset helpers.
#![allow(dead_code)]

use kws_core::dataio::synth::{self, SynthUtterance};
use kws_core::features::{compute_lfbe, FeatureConfig, FeatureNorm, FeatureSequence};
use kws_core::labeling::{build_targets, ms_to_frame, KeywordSpan, LabelSequence, LabelingConfig};
use kws_core::network::{Architecture, Model, ModelParams};
use kws_core::tensor::Matrix;
use kws_core::training::{backward, Example};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Small architecture for gradient checks and randomized trials.
pub fn tiny_arch(blocks: usize, filter: usize, cycle: &[usize], gating: bool) -> Architecture {
    Architecture {
        input_dim: 3,
        initial_filter_size: filter,
        num_blocks: blocks,
        block_filter_size: filter,
        dilation_cycle: cycle.to_vec(),
        residual_channels: 2,
        dilation_channels: 3,
        skip_channels: 2,
        head_hidden: 3,
        num_classes: 2,
        gating_enabled: gating,
    }
}

/// Random architecture with widths in small ranges.
pub fn random_arch(rng: &mut ChaCha8Rng) -> Architecture {
    let cycles: [&[usize]; 4] = [&[1], &[1, 2], &[1, 2, 4, 8], &[1, 3, 9]];
    Architecture {
        input_dim: rng.random_range(1..=20),
        initial_filter_size: rng.random_range(1..=4),
        num_blocks: rng.random_range(1..=8),
        block_filter_size: rng.random_range(2..=4),
        dilation_cycle: cycles[rng.random_range(0..cycles.len())].to_vec(),
        residual_channels: rng.random_range(1..=16),
        dilation_channels: rng.random_range(1..=24),
        skip_channels: rng.random_range(1..=16),
        head_hidden: rng.random_range(1..=16),
        num_classes: 2,
        gating_enabled: rng.random_bool(0.8),
    }
}

/// Parameters with every weight and bias drawn from `±scale`.
pub fn random_params(arch: &Architecture, scale: f32, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::zeros(arch);
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
    p
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0f32)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Parameter tensors widened to f64, in declaration order.
pub fn widen(params: &ModelParams) -> Vec<Vec<f64>> {
    params
        .tensors()
        .iter()
        .map(|t| t.data.iter().map(|&v| v as f64).collect())
        .collect()
}

/// f64 reference network. Written directly from the layer equations,
/// sharing no code with the library.
pub struct Reference<'a> {
    pub arch: &'a Architecture,
}

fn conv(x: &[Vec<f64>], w: &[f64], b: &[f64], s: usize, cin: usize, cout: usize, d: usize) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|t| {
            (0..cout)
                .map(|o| {
                    let mut acc = b[o];
                    for k in 0..s {
                        if t < k * d {
                            continue;
                        }
                        for i in 0..cin {
                            acc += x[t - k * d][i] * w[(k * cin + i) * cout + o];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn dense(x: &[Vec<f64>], w: &[f64], b: &[f64], cin: usize, cout: usize) -> Vec<Vec<f64>> {
    conv(x, w, b, 1, cin, cout, 1)
}

impl Reference<'_> {
    /// Keyword and background probabilities per frame.
    pub fn forward(&self, p: &[Vec<f64>], input: &Matrix) -> Vec<[f64; 2]> {
        let a = self.arch;
        let (r, dc, k) = (a.residual_channels, a.dilation_channels, a.skip_channels);
        let x: Vec<Vec<f64>> = input.iter_rows().map(|row| row.iter().map(|&v| v as f64).collect()).collect();
        let mut h = conv(&x, &p[0], &p[1], a.initial_filter_size, a.input_dim, r, 1);
        let mut skip = vec![vec![0.0; k]; x.len()];
        for b in 0..a.num_blocks {
            let base = 2 + 8 * b;
            let d = a.dilation_cycle[b % a.dilation_cycle.len()];
            let s = a.block_filter_size;
            let f = conv(&h, &p[base], &p[base + 1], s, r, dc, d);
            let g = conv(&h, &p[base + 2], &p[base + 3], s, r, dc, d);
            let z: Vec<Vec<f64>> = f
                .iter()
                .zip(&g)
                .map(|(fr, gr)| {
                    fr.iter()
                        .zip(gr)
                        .map(|(&fv, &gv)| {
                            let gate = if a.gating_enabled { 1.0 / (1.0 + (-gv).exp()) } else { 1.0 };
                            fv.tanh() * gate
                        })
                        .collect()
                })
                .collect();
            let res = dense(&z, &p[base + 4], &p[base + 5], dc, r);
            let sk = dense(&z, &p[base + 6], &p[base + 7], dc, k);
            for t in 0..x.len() {
                for c in 0..r {
                    h[t][c] += res[t][c];
                }
                for c in 0..k {
                    skip[t][c] += sk[t][c];
                }
            }
        }
        let n = p.len();
        let relu = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            m.into_iter().map(|row| row.into_iter().map(|v| v.max(0.0)).collect()).collect()
        };
        let hidden = relu(dense(&relu(skip), &p[n - 4], &p[n - 3], k, a.head_hidden));
        let logits = dense(&hidden, &p[n - 2], &p[n - 1], a.head_hidden, 2);
        logits
            .iter()
            .map(|l| {
                let m = l[0].max(l[1]);
                let (e0, e1) = ((l[0] - m).exp(), (l[1] - m).exp());
                [e0 / (e0 + e1), e1 / (e0 + e1)]
            })
            .collect()
    }

    pub fn loss(&self, p: &[Vec<f64>], input: &Matrix, labels: &LabelSequence, pos_weight: f64) -> f64 {
        let probs = self.forward(p, input);
        let mut total = 0.0;
        let mut n = 0usize;
        for ((pr, &y), &m) in probs.iter().zip(&labels.targets).zip(&labels.mask) {
            if m == 1 {
                let w = if y == 1 { pos_weight } else { 1.0 };
                total -= w * pr[y as usize].ln();
                n += 1;
            }
        }
        total / n as f64
    }
}

/// Synthetic utterances featurized and labeled, plus a normalization fitted on them.
pub struct SynthSet {
    pub utterances: Vec<SynthUtterance>,
    pub raw: Vec<FeatureSequence>,
    pub labels: Vec<LabelSequence>,
    pub end_frames: Vec<Option<usize>>,
}

pub fn synth_set(positives: usize, negatives: usize, seed: u64) -> SynthSet {
    let utterances = synth::generate(positives, negatives, seed);
    let cfg = FeatureConfig::default();
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    let mut end_frames = Vec::new();
    for u in &utterances {
        let f = compute_lfbe(&u.audio, &cfg).unwrap();
        let len = f.len();
        match u.keyword_ms {
            Some((_, end_ms)) => {
                let end = ms_to_frame(end_ms, f.hop_ms, len);
                labels.push(build_targets(len, KeywordSpan::end(end), &LabelingConfig::default()).unwrap());
                end_frames.push(Some(end));
            }
            None => {
                labels.push(LabelSequence::negative(len));
                end_frames.push(None);
            }
        }
        raw.push(f);
    }
    SynthSet {
        utterances,
        raw,
        labels,
        end_frames,
    }
}

impl SynthSet {
    pub fn fit_norm(&self) -> FeatureNorm {
        FeatureNorm::fit(&self.raw, self.raw[0].dim()).unwrap()
    }

    pub fn examples(&self, norm: &FeatureNorm) -> Vec<Example> {
        self.raw
            .iter()
            .zip(&self.labels)
            .map(|(f, l)| Example {
                features: norm.apply(&f.frames),
                labels: l.clone(),
            })
            .collect()
    }
}

/// Smoothed keyword posteriors of `model` on raw features.
pub fn smoothed_scores(model: &Model, raw: &FeatureSequence, w_smooth: usize) -> Vec<f32> {
    let trace = model.posteriors(raw).unwrap();
    kws_core::evaluation::smooth_trace(&trace, &kws_core::evaluation::SmoothingConfig { w_smooth })
}

/// Outcome of comparing analytic gradients with f64 central differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// `(tensor name, index, analytic, numeric)` for every gradient outside tolerance.
    pub failures: Vec<(String, usize, f32, f64)>,
    pub max_abs_err: f64,
}

/// Checks every scalar gradient of `backward` against central differences
/// of the reference loss: pass when `|g - fd| <= max(rel * |fd|, abs_floor)`.
pub fn gradient_check(
    arch: &Architecture,
    seed: u64,
    labels: &LabelSequence,
    pos_weight: f32,
    h: f64,
    rel: f64,
    abs_floor: f64,
) -> GradCheck {
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let params = random_params(arch, 0.6, &mut rng);
    let input = random_matrix(labels.len(), arch.input_dim, &mut rng);
    let (_, grads) = backward(&input, labels, &params, arch, pos_weight).unwrap();
    let reference = Reference { arch };
    let base = widen(&params);
    let names = ModelParams::tensor_names(arch.num_blocks);
    let mut out = GradCheck::default();
    for (ti, g) in grads.tensors().iter().enumerate() {
        for j in 0..g.data.len() {
            let mut plus = base.clone();
            plus[ti][j] += h;
            let mut minus = base.clone();
            minus[ti][j] -= h;
            let fd = (reference.loss(&plus, &input, labels, pos_weight as f64)
                - reference.loss(&minus, &input, labels, pos_weight as f64))
                / (2.0 * h);
            let err = (g.data[j] as f64 - fd).abs();
            out.checked += 1;
            out.max_abs_err = out.max_abs_err.max(err);
            if err > (rel * fd.abs()).max(abs_floor) {
                out.failures.push((names[ti].clone(), j, g.data[j], fd));
            }
        }
    }
    out
}
