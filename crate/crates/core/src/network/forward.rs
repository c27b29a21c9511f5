use super::arch::Architecture;
use super::kernels::{accumulate, relu, sigmoid, softmax2};
use super::params::{BlockParams, ConvParams, DenseParams, ModelParams};
use crate::error::{KwsError, Result};
use crate::features::FeatureSequence;
use crate::tensor::Matrix;

/// Per-frame `(background, keyword)` probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTrace {
    pub probs: Vec<[f32; 2]>,
}

impl PosteriorTrace {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn keyword(&self) -> Vec<f32> {
        self.probs.iter().map(|p| p[1]).collect()
    }
}

fn check_conv(input: &Matrix, conv: &ConvParams, dilation: usize) -> Result<()> {
    if dilation == 0 {
        return Err(KwsError::Shape("dilation must be >= 1".into()));
    }
    if conv.weight.shape.len() != 3 || conv.bias.shape != [conv.c_out()] {
        return Err(KwsError::Shape(format!(
            "conv weight {:?} / bias {:?} malformed",
            conv.weight.shape, conv.bias.shape
        )));
    }
    if input.cols() != conv.c_in() {
        return Err(KwsError::Shape(format!(
            "input has {} channels, conv expects {}",
            input.cols(),
            conv.c_in()
        )));
    }
    Ok(())
}

/// Causal convolution with left zero padding: `out[t] = b + Σ_k in[t - k·d] · W[k]`.
pub fn causal_dilated_conv(input: &Matrix, conv: &ConvParams, dilation: usize) -> Result<Matrix> {
    check_conv(input, conv, dilation)?;
    Ok(conv_unchecked(input, conv, dilation))
}

pub(crate) fn conv_unchecked(input: &Matrix, conv: &ConvParams, dilation: usize) -> Matrix {
    let (c_in, c_out) = (conv.c_in(), conv.c_out());
    let tap_len = c_in * c_out;
    let mut out = Matrix::zeros(input.rows(), c_out);
    for t in 0..input.rows() {
        let row = out.row_mut(t);
        row.copy_from_slice(&conv.bias.data);
        for k in 0..conv.filter_size() {
            let lag = k * dilation;
            if lag > t {
                break;
            }
            let w = &conv.weight.data[k * tap_len..(k + 1) * tap_len];
            accumulate(input.row(t - lag), w, row);
        }
    }
    out
}

pub(crate) fn dense_unchecked(input: &Matrix, dense: &DenseParams) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), dense.c_out());
    for t in 0..input.rows() {
        let row = out.row_mut(t);
        row.copy_from_slice(&dense.bias.data);
        accumulate(input.row(t), &dense.weight.data, row);
    }
    out
}

/// Activations of one block kept for backpropagation.
#[derive(Debug, Clone)]
pub struct BlockCache {
    /// tanh of the filter convolution.
    pub filter_act: Matrix,
    /// sigmoid of the gate convolution; absent when gating is disabled.
    pub gate_act: Option<Matrix>,
    /// Gated output fed to both projections.
    pub z: Matrix,
}

fn block_forward(
    x: &Matrix,
    block: &BlockParams,
    dilation: usize,
    gating: bool,
) -> (Matrix, Matrix, BlockCache) {
    let mut filter_act = conv_unchecked(x, &block.filter, dilation);
    filter_act.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
    let gate_act = gating.then(|| {
        let mut g = conv_unchecked(x, &block.gate, dilation);
        g.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
        g
    });
    let z = match &gate_act {
        Some(g) => {
            let mut z = filter_act.clone();
            z.as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .for_each(|(a, s)| *a *= s);
            z
        }
        None => filter_act.clone(),
    };
    let mut residual = dense_unchecked(&z, &block.residual);
    residual
        .as_mut_slice()
        .iter_mut()
        .zip(x.as_slice())
        .for_each(|(r, xi)| *r += xi);
    let skip = dense_unchecked(&z, &block.skip);
    (
        residual,
        skip,
        BlockCache {
            filter_act,
            gate_act,
            z,
        },
    )
}

/// One gated residual block: returns `(x + proj_res(z), proj_skip(z))` with
/// `z = tanh(conv_f(x)) ⊙ σ(conv_g(x))`, or `z = tanh(conv_f(x))` without gating.
pub fn gated_block_forward(
    x: &Matrix,
    block: &BlockParams,
    dilation: usize,
    gating_enabled: bool,
) -> Result<(Matrix, Matrix)> {
    check_conv(x, &block.filter, dilation)?;
    check_conv(x, &block.gate, dilation)?;
    let d = block.filter.c_out();
    if block.gate.c_out() != d
        || block.residual.c_in() != d
        || block.skip.c_in() != d
        || block.residual.c_out() != x.cols()
    {
        return Err(KwsError::Shape("block projections inconsistent".into()));
    }
    let (res, skip, _) = block_forward(x, block, dilation, gating_enabled);
    Ok((res, skip))
}

/// Every intermediate of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    /// `residual[0]` is the initial convolution output; `residual[b + 1]` follows block b.
    pub residual: Vec<Matrix>,
    pub blocks: Vec<BlockCache>,
    /// Sum of skip outputs before rectification.
    pub skip_sum: Matrix,
    /// Hidden layer after rectification.
    pub hidden: Matrix,
    pub trace: PosteriorTrace,
}

fn check_model(input: &Matrix, params: &ModelParams, arch: &Architecture) -> Result<()> {
    arch.validate()?;
    if input.cols() != arch.input_dim {
        return Err(KwsError::Shape(format!(
            "features have {} dims, model expects {}",
            input.cols(),
            arch.input_dim
        )));
    }
    let expected = ModelParams::zeros(arch);
    if params.blocks.len() != arch.num_blocks
        || params
            .tensors()
            .iter()
            .zip(expected.tensors())
            .any(|(a, b)| a.shape != b.shape)
    {
        return Err(KwsError::Shape(
            "parameters do not match the architecture".into(),
        ));
    }
    Ok(())
}

fn non_finite(layer: &str, m: &Matrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(KwsError::NonFinite(layer.to_string()))
    }
}

fn forward_impl(
    input: &Matrix,
    params: &ModelParams,
    arch: &Architecture,
    keep: bool,
) -> Result<(PosteriorTrace, Option<ForwardCache>)> {
    check_model(input, params, arch)?;
    let t_len = input.rows();
    let mut h = conv_unchecked(input, &params.initial, 1);
    non_finite("initial conv", &h)?;
    let mut skip_sum = Matrix::zeros(t_len, arch.skip_channels);
    let mut residuals = Vec::new();
    let mut caches = Vec::new();
    for (b, block) in params.blocks.iter().enumerate() {
        let (next, skip, cache) = block_forward(&h, block, arch.block_dilation(b), arch.gating_enabled);
        non_finite(&format!("block {b}"), &next)?;
        skip_sum
            .as_mut_slice()
            .iter_mut()
            .zip(skip.as_slice())
            .for_each(|(s, k)| *s += k);
        if keep {
            residuals.push(std::mem::replace(&mut h, next));
            caches.push(cache);
        } else {
            h = next;
        }
    }
    if keep {
        residuals.push(h);
    }
    let mut rectified = skip_sum.clone();
    rectified.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
    let mut hidden = dense_unchecked(&rectified, &params.hidden);
    hidden.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
    let logits = dense_unchecked(&hidden, &params.output);
    non_finite("output logits", &logits)?;
    let probs = logits
        .iter_rows()
        .take(t_len)
        .map(|l| softmax2([l[0], l[1]]))
        .collect();
    let trace = PosteriorTrace { probs };
    let cache = keep.then(|| ForwardCache {
        input: input.clone(),
        residual: residuals,
        blocks: caches,
        skip_sum,
        hidden,
        trace: trace.clone(),
    });
    Ok((trace, cache))
}

/// Batch forward pass over already-normalized features.
pub fn network_forward(
    features: &FeatureSequence,
    params: &ModelParams,
    arch: &Architecture,
) -> Result<PosteriorTrace> {
    forward_impl(&features.frames, params, arch, false).map(|(trace, _)| trace)
}

/// Forward pass retaining every intermediate for [`crate::training::backward`].
pub fn forward_with_cache(
    input: &Matrix,
    params: &ModelParams,
    arch: &Architecture,
) -> Result<ForwardCache> {
    forward_impl(input, params, arch, true).map(|(_, cache)| cache.expect("cache requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_conv(s: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> ConvParams {
        ConvParams {
            weight: Tensor::from_vec(
                &[s, cin, cout],
                (0..s * cin * cout).map(|_| rng.random_range(-0.5..0.5)).collect(),
            )
            .unwrap(),
            bias: Tensor::from_vec(&[cout], (0..cout).map(|_| rng.random_range(-0.5..0.5)).collect())
                .unwrap(),
        }
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_matrix(6, 3, &mut rng);
        let mut conv = ConvParams::zeros(1, 3, 3);
        for i in 0..3 {
            conv.weight.data[i * 3 + i] = 1.0;
        }
        assert_eq!(causal_dilated_conv(&x, &conv, 1).unwrap(), x);
    }

    #[test]
    fn two_tap_sum_with_zero_padding() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut conv = ConvParams::zeros(2, 1, 1);
        conv.weight.data = vec![1.0, 1.0];
        let y = causal_dilated_conv(&x, &conv, 1).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(10, 3, &mut rng);
        let conv = random_conv(3, 3, 2, &mut rng);
        let y = causal_dilated_conv(&x, &conv, 4).unwrap();
        for t in 0..10 {
            for o in 0..2 {
                let mut acc = conv.bias.data[o] as f64;
                for k in 0..3 {
                    if t >= 4 * k {
                        for i in 0..3 {
                            acc += x.get(t - 4 * k, i) as f64
                                * conv.weight.data[(k * 3 + i) * 2 + o] as f64;
                        }
                    }
                }
                assert!((y.get(t, o) as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Matrix::zeros(4, 2);
        assert!(causal_dilated_conv(&x, &ConvParams::zeros(2, 3, 1), 1).is_err());
        assert!(causal_dilated_conv(&x, &ConvParams::zeros(2, 2, 1), 0).is_err());
    }

    #[test]
    fn zero_block_is_identity_on_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(7, 4, &mut rng);
        let block = BlockParams {
            filter: ConvParams::zeros(3, 4, 5),
            gate: ConvParams::zeros(3, 4, 5),
            residual: DenseParams::zeros(5, 4),
            skip: DenseParams::zeros(5, 6),
        };
        let (res, skip) = gated_block_forward(&x, &block, 2, true).unwrap();
        assert_eq!(res, x);
        assert!(skip.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!((skip.rows(), skip.cols()), (7, 6));
    }

    #[test]
    fn saturated_gate_matches_ungated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(12, 3, &mut rng);
        let mut block = BlockParams {
            filter: random_conv(2, 3, 4, &mut rng),
            gate: ConvParams::zeros(2, 3, 4),
            residual: DenseParams {
                weight: Tensor::from_vec(&[4, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
                bias: Tensor::zeros(&[3]),
            },
            skip: DenseParams {
                weight: Tensor::from_vec(&[4, 2], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
                bias: Tensor::zeros(&[2]),
            },
        };
        block.gate.bias.data.fill(20.0);
        let (r_on, s_on) = gated_block_forward(&x, &block, 2, true).unwrap();
        let (r_off, s_off) = gated_block_forward(&x, &block, 2, false).unwrap();
        for (a, b) in r_on.as_slice().iter().zip(r_off.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in s_on.as_slice().iter().zip(s_off.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let arch = Architecture::default();
        let params = ModelParams::zeros(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feats = FeatureSequence::new(random_matrix(30, 20, &mut rng), 10.0);
        let trace = network_forward(&feats, &params, &arch).unwrap();
        assert!(trace.probs.iter().all(|p| *p == [0.5, 0.5]));
    }

    #[test]
    fn non_finite_input_detected() {
        let arch = Architecture {
            num_blocks: 2,
            ..Architecture::default()
        };
        let params = ModelParams::xavier(&arch, 0);
        let mut m = Matrix::zeros(5, 20);
        m.set(2, 3, f32::NAN);
        let err = network_forward(&FeatureSequence::new(m, 10.0), &params, &arch).unwrap_err();
        assert!(matches!(err, KwsError::NonFinite(_)));
    }

    #[test]
    fn wrong_input_dim_rejected() {
        let arch = Architecture::default();
        let params = ModelParams::zeros(&arch);
        let feats = FeatureSequence::new(Matrix::zeros(3, 19), 10.0);
        assert!(matches!(
            network_forward(&feats, &params, &arch),
            Err(KwsError::Shape(_))
        ));
    }
}
