use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::Architecture;
use crate::error::{KwsError, Result};
use crate::tensor::Tensor;

/// Causal convolution weights shaped `(filter_size, c_in, c_out)`; tap `k`
/// multiplies the input `k * dilation` frames in the past.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn zeros(filter_size: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[filter_size, c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn filter_size(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape[2]
    }
}

/// Dense (1x1) projection shaped `(c_in, c_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub filter: ConvParams,
    pub gate: ConvParams,
    pub residual: DenseParams,
    pub skip: DenseParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub initial: ConvParams,
    pub blocks: Vec<BlockParams>,
    pub hidden: DenseParams,
    pub output: DenseParams,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let (r, d, k) = (
            arch.residual_channels,
            arch.dilation_channels,
            arch.skip_channels,
        );
        Self {
            initial: ConvParams::zeros(arch.initial_filter_size, arch.input_dim, r),
            blocks: (0..arch.num_blocks)
                .map(|_| BlockParams {
                    filter: ConvParams::zeros(arch.block_filter_size, r, d),
                    gate: ConvParams::zeros(arch.block_filter_size, r, d),
                    residual: DenseParams::zeros(d, r),
                    skip: DenseParams::zeros(d, k),
                })
                .collect(),
            hidden: DenseParams::zeros(k, arch.head_hidden),
            output: DenseParams::zeros(arch.head_hidden, arch.num_classes),
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        for (name, tensor) in params.named_tensors_mut() {
            if name.ends_with(".weight") {
                *tensor = xavier_init(&tensor.shape, &mut rng);
            }
        }
        params
    }

    /// Tensors in declaration order: initial, blocks (filter, gate,
    /// residual, skip; weight before bias), hidden, output.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.initial.weight, &self.initial.bias];
        for b in &self.blocks {
            out.extend([
                &b.filter.weight,
                &b.filter.bias,
                &b.gate.weight,
                &b.gate.bias,
                &b.residual.weight,
                &b.residual.bias,
                &b.skip.weight,
                &b.skip.bias,
            ]);
        }
        out.extend([
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.initial.weight, &mut self.initial.bias];
        for b in &mut self.blocks {
            out.extend([
                &mut b.filter.weight,
                &mut b.filter.bias,
                &mut b.gate.weight,
                &mut b.gate.bias,
                &mut b.residual.weight,
                &mut b.residual.bias,
                &mut b.skip.weight,
                &mut b.skip.bias,
            ]);
        }
        out.extend([
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]);
        out
    }

    /// Names matching [`ModelParams::tensors`] order, e.g. `block3.gate.weight`.
    pub fn tensor_names(num_blocks: usize) -> Vec<String> {
        let mut names = vec!["initial.weight".to_string(), "initial.bias".to_string()];
        for b in 0..num_blocks {
            for layer in ["filter", "gate", "residual", "skip"] {
                names.push(format!("block{b}.{layer}.weight"));
                names.push(format!("block{b}.{layer}.bias"));
            }
        }
        for layer in ["hidden", "output"] {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names = Self::tensor_names(self.blocks.len());
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    /// Rebuilds parameters for `arch` from tensors in declaration order.
    pub fn from_tensors(arch: &Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        let mut params = Self::zeros(arch);
        let expected = params.tensors().len();
        if tensors.len() != expected {
            return Err(KwsError::Shape(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let names = Self::tensor_names(arch.num_blocks);
        for ((slot, t), name) in params.tensors_mut().into_iter().zip(tensors).zip(names) {
            if slot.shape != t.shape {
                return Err(KwsError::Shape(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    slot.shape, t.shape
                )));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`. For `(k, c_in, c_out)`
/// convolution kernels the fans are `k * c_in` and `k * c_out`.
pub fn xavier_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [i, o] => (*i, *o),
        [k, i, o, ..] => {
            let extra: usize = shape[3..].iter().product();
            (k * i * extra, k * o * extra)
        }
    };
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}
