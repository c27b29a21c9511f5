//! Scalar kernels shared by batch and streaming inference. Both paths call
//! these same routines in the same order, which keeps their outputs equal.

/// `out += x · w` with `w` row-major `(x.len(), out.len())`.
#[inline]
pub fn accumulate(x: &[f32], w: &[f32], out: &mut [f32]) {
    let c_out = out.len();
    debug_assert_eq!(w.len(), x.len() * c_out);
    for (&xi, w_row) in x.iter().zip(w.chunks_exact(c_out)) {
        for (o, &wij) in out.iter_mut().zip(w_row) {
            *o += xi * wij;
        }
    }
}

/// Gradient of [`accumulate`]: `dx += w · dout`, `dw += x ⊗ dout`.
#[inline]
pub fn accumulate_backward(x: &[f32], w: &[f32], dout: &[f32], dx: &mut [f32], dw: &mut [f32]) {
    let c_out = dout.len();
    for (((&xi, w_row), dw_row), dxi) in x
        .iter()
        .zip(w.chunks_exact(c_out))
        .zip(dw.chunks_exact_mut(c_out))
        .zip(dx.iter_mut())
    {
        let mut acc = 0.0f32;
        for ((&wij, dwij), &g) in w_row.iter().zip(dw_row.iter_mut()).zip(dout) {
            acc += wij * g;
            *dwij += xi * g;
        }
        *dxi += acc;
    }
}

/// Weight-only gradient, for layers whose input gradient is not needed.
#[inline]
pub fn accumulate_weight_grad(x: &[f32], dout: &[f32], dw: &mut [f32]) {
    let c_out = dout.len();
    for (&xi, dw_row) in x.iter().zip(dw.chunks_exact_mut(c_out)) {
        for (dwij, &g) in dw_row.iter_mut().zip(dout) {
            *dwij += xi * g;
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

/// Numerically stable 2-way softmax.
#[inline]
pub fn softmax2(logits: [f32; 2]) -> [f32; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}
