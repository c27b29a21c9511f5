use super::backward::GradientSet;
use super::trainer::TrainConfig;
use crate::error::{KwsError, Result};
use crate::network::ModelParams;
use crate::tensor::Tensor;

/// Global L2 norm over every tensor jointly.
pub fn global_norm(grads: &GradientSet) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|t| t.squared_norm())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `clip_norm / norm` when the global norm exceeds `clip_norm`.
pub fn clip_gradients(grads: &GradientSet, clip_norm: f32) -> GradientSet {
    let norm = global_norm(grads);
    let mut out = grads.clone();
    if norm > clip_norm as f64 {
        out.scale((clip_norm as f64 / norm) as f32);
    }
    out
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::for_shapes(params.tensors().iter().map(|t| t.shape.as_slice()))
    }

    pub fn for_shapes<'a, I: IntoIterator<Item = &'a [usize]>>(shapes: I) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Bias-corrected Adam over parallel slices of tensors.
pub fn adam_step_tensors(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(KwsError::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bias1 = 1.0 - (b1 as f64).powi(state.step as i32);
    let bias2 = 1.0 - (b2 as f64).powi(state.step as i32);
    let (bias1, bias2) = (bias1 as f32, bias2 as f32);
    let lr = config.learning_rate;
    let eps = config.adam_eps;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.shape != g.shape || p.shape != m.shape {
            return Err(KwsError::Shape(format!(
                "adam: shape {:?} vs gradient {:?}",
                p.shape, g.shape
            )));
        }
        for (((theta, &grad), mi), vi) in p
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(m.data.iter_mut())
            .zip(v.data.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * grad;
            *vi = b2 * *vi + (1.0 - b2) * grad * grad;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    adam_step_tensors(&mut params.tensors_mut(), &grad_tensors, state, config)
}
