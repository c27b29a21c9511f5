use crate::error::{KwsError, Result};
use crate::labeling::LabelSequence;
use crate::network::kernels::{accumulate_backward, accumulate_weight_grad, relu};
use crate::network::{Architecture, ConvParams, ModelParams};
use crate::tensor::{Matrix, Tensor};

use super::loss::weighted_masked_cross_entropy;

/// One gradient tensor per parameter tensor, in the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: ModelParams,
}

impl GradientSet {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            grads: ModelParams::zeros(arch),
        }
    }

    pub fn from_tensors(arch: &Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        Ok(Self {
            grads: ModelParams::from_tensors(arch, tensors)?,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.grads.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.grads.tensors_mut()
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        let names = ModelParams::tensor_names(self.grads.blocks.len());
        self.tensors()
            .into_iter()
            .zip(names)
            .find(|(t, _)| t.data.iter().any(|v| !v.is_finite()))
            .map(|(_, n)| n)
    }
}

/// `dW`, `db` and optionally `dx` of a causal dilated convolution.
fn conv_backward(
    input: &Matrix,
    conv: &ConvParams,
    dilation: usize,
    dout: &Matrix,
    mut dinput: Option<&mut Matrix>,
    grad: &mut ConvParams,
) {
    let tap_len = conv.c_in() * conv.c_out();
    for t in 0..dout.rows() {
        let g = dout.row(t);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        grad.bias.data.iter_mut().zip(g).for_each(|(b, v)| *b += v);
        for k in 0..conv.filter_size() {
            let lag = k * dilation;
            if lag > t {
                break;
            }
            let w = &conv.weight.data[k * tap_len..(k + 1) * tap_len];
            let dw = &mut grad.weight.data[k * tap_len..(k + 1) * tap_len];
            match dinput.as_deref_mut() {
                Some(dx) => accumulate_backward(input.row(t - lag), w, g, dx.row_mut(t - lag), dw),
                None => accumulate_weight_grad(input.row(t - lag), g, dw),
            }
        }
    }
}

/// Loss and parameter gradients for one utterance.
///
/// `input` is the normalized feature matrix. Frames with mask 0 contribute
/// exactly zero gradient.
pub fn backward(
    input: &Matrix,
    labels: &LabelSequence,
    params: &ModelParams,
    arch: &Architecture,
    pos_weight: f32,
) -> Result<(f32, GradientSet)> {
    let cache = crate::network::forward_with_cache(input, params, arch)?;
    let loss = weighted_masked_cross_entropy(&cache.trace, labels, pos_weight)?;
    let active = labels.active_frames() as f32;
    let t_len = input.rows();
    let mut grads = GradientSet::zeros(arch);
    let g = &mut grads.grads;

    // head: softmax -> output dense -> relu -> hidden dense -> relu(skip sum)
    let mut d_skip = Matrix::zeros(t_len, arch.skip_channels);
    let mut d_hidden = vec![0.0f32; arch.head_hidden];
    let mut d_rect = vec![0.0f32; arch.skip_channels];
    let mut rect = vec![0.0f32; arch.skip_channels];
    for t in 0..t_len {
        if labels.mask[t] == 0 {
            continue;
        }
        let y = labels.targets[t] as usize;
        let w = if y == 1 { pos_weight } else { 1.0 };
        let coef = w / active;
        let p = cache.trace.probs[t];
        let d_logits = [
            coef * (p[0] - (y == 0) as u8 as f32),
            coef * (p[1] - (y == 1) as u8 as f32),
        ];
        g.output.bias.data.iter_mut().zip(&d_logits).for_each(|(b, d)| *b += d);
        d_hidden.fill(0.0);
        let hidden = cache.hidden.row(t);
        accumulate_backward(
            hidden,
            &params.output.weight.data,
            &d_logits,
            &mut d_hidden,
            &mut g.output.weight.data,
        );
        for (d, &h) in d_hidden.iter_mut().zip(hidden) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        g.hidden.bias.data.iter_mut().zip(&d_hidden).for_each(|(b, d)| *b += d);
        let pre = cache.skip_sum.row(t);
        rect.iter_mut().zip(pre).for_each(|(r, &s)| *r = relu(s));
        d_rect.fill(0.0);
        accumulate_backward(
            &rect,
            &params.hidden.weight.data,
            &d_hidden,
            &mut d_rect,
            &mut g.hidden.weight.data,
        );
        for ((ds, &dr), &s) in d_skip.row_mut(t).iter_mut().zip(&d_rect).zip(pre) {
            *ds = if s > 0.0 { dr } else { 0.0 };
        }
    }

    // blocks, last to first; the final residual output feeds nothing
    let mut d_res = Matrix::zeros(t_len, arch.residual_channels);
    for b in (0..arch.num_blocks).rev() {
        let x = &cache.residual[b];
        let bc = &cache.blocks[b];
        let block = &params.blocks[b];
        let gb = &mut g.blocks[b];
        let mut dz = Matrix::zeros(t_len, arch.dilation_channels);
        for t in 0..t_len {
            let z = bc.z.row(t);
            let ds = d_skip.row(t);
            gb.skip.bias.data.iter_mut().zip(ds).for_each(|(v, d)| *v += d);
            let dr = d_res.row(t);
            gb.residual.bias.data.iter_mut().zip(dr).for_each(|(v, d)| *v += d);
            let dz_row = dz.row_mut(t);
            accumulate_backward(z, &block.skip.weight.data, ds, dz_row, &mut gb.skip.weight.data);
            accumulate_backward(
                z,
                &block.residual.weight.data,
                dr,
                dz_row,
                &mut gb.residual.weight.data,
            );
        }
        let mut d_filter = dz.clone();
        let mut d_gate = None;
        match &bc.gate_act {
            Some(gate) => {
                let mut dg = dz.clone();
                for (((df, dgv), &a), &s) in d_filter
                    .as_mut_slice()
                    .iter_mut()
                    .zip(dg.as_mut_slice())
                    .zip(bc.filter_act.as_slice())
                    .zip(gate.as_slice())
                {
                    let upstream = *df;
                    *df = upstream * s * (1.0 - a * a);
                    *dgv = upstream * a * s * (1.0 - s);
                }
                d_gate = Some(dg);
            }
            None => {
                for (df, &a) in d_filter.as_mut_slice().iter_mut().zip(bc.filter_act.as_slice()) {
                    *df *= 1.0 - a * a;
                }
            }
        }
        // residual identity path
        let mut d_x = d_res.clone();
        let dilation = arch.block_dilation(b);
        conv_backward(x, &block.filter, dilation, &d_filter, Some(&mut d_x), &mut gb.filter);
        if let Some(dg) = &d_gate {
            conv_backward(x, &block.gate, dilation, dg, Some(&mut d_x), &mut gb.gate);
        }
        d_res = d_x;
    }
    conv_backward(input, &params.initial, 1, &d_res, None, &mut g.initial);

    if let Some(name) = grads.first_non_finite() {
        return Err(KwsError::NonFinite(format!("gradient of {name}")));
    }
    Ok((loss, grads))
}
