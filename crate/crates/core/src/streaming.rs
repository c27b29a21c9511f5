//! Frame-by-frame inference. Each causal convolution keeps a ring buffer of
//! its last `d·(s−1)` inputs, so a new frame costs one column of work and
//! reproduces the batch forward pass exactly.

use std::sync::Arc;

use crate::error::{KwsError, Result};
use crate::evaluation::{window_mean, SmoothingConfig, TriggerConfig, TriggerState};
use crate::network::kernels::{accumulate, relu, sigmoid, softmax2};
use crate::network::{Architecture, ConvParams, DenseParams, Model, ModelParams};

/// Fixed-capacity history of vectors; capacity 0 stores nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct RingBuffer {
    data: Vec<f32>,
    dim: usize,
    capacity: usize,
    head: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            data: vec![0.0; capacity * dim],
            dim,
            capacity,
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Vector pushed `lag` pushes ago (`1 ..= capacity`).
    #[inline]
    pub fn get(&self, lag: usize) -> &[f32] {
        debug_assert!(lag >= 1 && lag <= self.capacity);
        let idx = (self.head + self.capacity - lag) % self.capacity;
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    #[inline]
    pub fn push(&mut self, v: &[f32]) {
        if self.capacity == 0 {
            return;
        }
        self.data[self.head * self.dim..(self.head + 1) * self.dim].copy_from_slice(v);
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
        self.head = 0;
    }
}

/// Per-layer caches plus scratch space for one audio stream.
#[derive(Debug, Clone)]
pub struct StreamState {
    /// Input history of the initial convolution, then one per block.
    caches: Vec<RingBuffer>,
    frames_seen: usize,
    /// Multiplications performed by the most recent push.
    pub last_multiplications: u64,
    h: Vec<f32>,
    next_h: Vec<f32>,
    filter: Vec<f32>,
    gate: Vec<f32>,
    proj: Vec<f32>,
    skip_sum: Vec<f32>,
    hidden: Vec<f32>,
}

impl StreamState {
    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Ring capacities in forward order.
    pub fn capacities(&self) -> Vec<usize> {
        self.caches.iter().map(RingBuffer::capacity).collect()
    }

    /// Total number of cached vectors across layers.
    pub fn cached_vectors(&self) -> usize {
        self.caches.iter().map(RingBuffer::capacity).sum()
    }

    /// Bytes of cached activations; independent of stream length.
    pub fn cache_bytes(&self) -> usize {
        self.caches.iter().map(|c| c.data.len() * 4).sum()
    }
}

pub fn stream_init(arch: &Architecture) -> StreamState {
    let caches = std::iter::once(RingBuffer::new(arch.initial_conv().history(), arch.input_dim))
        .chain((0..arch.num_blocks).map(|b| RingBuffer::new(arch.block_conv(b).history(), arch.residual_channels)))
        .collect();
    StreamState {
        caches,
        frames_seen: 0,
        last_multiplications: 0,
        h: vec![0.0; arch.residual_channels],
        next_h: vec![0.0; arch.residual_channels],
        filter: vec![0.0; arch.dilation_channels],
        gate: vec![0.0; arch.dilation_channels],
        proj: vec![0.0; arch.skip_channels.max(arch.residual_channels)],
        skip_sum: vec![0.0; arch.skip_channels],
        hidden: vec![0.0; arch.head_hidden],
    }
}

pub fn stream_reset(state: &mut StreamState) {
    state.caches.iter_mut().for_each(RingBuffer::clear);
    state.frames_seen = 0;
    state.last_multiplications = 0;
}

/// One output column of a causal convolution using the cached history.
#[inline]
fn conv_step(
    current: &[f32],
    cache: &RingBuffer,
    t: usize,
    conv: &ConvParams,
    dilation: usize,
    out: &mut [f32],
) -> u64 {
    let tap_len = conv.c_in() * conv.c_out();
    out.copy_from_slice(&conv.bias.data);
    accumulate(current, &conv.weight.data[..tap_len], out);
    let mut taps = 1;
    for k in 1..conv.filter_size() {
        let lag = k * dilation;
        if lag > t {
            break;
        }
        accumulate(cache.get(lag), &conv.weight.data[k * tap_len..(k + 1) * tap_len], out);
        taps += 1;
    }
    (taps * tap_len) as u64
}

#[inline]
fn dense_step(x: &[f32], dense: &DenseParams, out: &mut [f32]) -> u64 {
    out.copy_from_slice(&dense.bias.data);
    accumulate(x, &dense.weight.data, out);
    dense.weight.len() as u64
}

/// Feeds one normalized feature frame; returns the keyword posterior for it.
pub fn push_frame(
    state: &mut StreamState,
    frame: &[f32],
    params: &ModelParams,
    arch: &Architecture,
) -> Result<f32> {
    if frame.len() != arch.input_dim {
        return Err(KwsError::Shape(format!(
            "frame has {} values, model expects {}",
            frame.len(),
            arch.input_dim
        )));
    }
    if state.caches.len() != arch.num_blocks + 1 || params.blocks.len() != arch.num_blocks {
        return Err(KwsError::Shape("stream state built for another architecture".into()));
    }
    let t = state.frames_seen;
    let mut mults = 0u64;
    let StreamState {
        caches,
        h,
        next_h,
        filter,
        gate,
        proj,
        skip_sum,
        hidden,
        ..
    } = state;

    mults += conv_step(frame, &caches[0], t, &params.initial, 1, h);
    caches[0].push(frame);

    skip_sum.fill(0.0);
    let r = arch.residual_channels;
    let k = arch.skip_channels;
    for (b, block) in params.blocks.iter().enumerate() {
        let dilation = arch.block_dilation(b);
        let cache = &caches[b + 1];
        mults += conv_step(h, cache, t, &block.filter, dilation, filter);
        filter.iter_mut().for_each(|v| *v = v.tanh());
        if arch.gating_enabled {
            mults += conv_step(h, cache, t, &block.gate, dilation, gate);
            for (a, g) in filter.iter_mut().zip(gate.iter_mut()) {
                *g = sigmoid(*g);
                *a *= *g;
            }
            mults += filter.len() as u64;
        }
        mults += dense_step(filter, &block.residual, &mut proj[..r]);
        for ((n, &x), &p) in next_h.iter_mut().zip(h.iter()).zip(&proj[..r]) {
            *n = x + p;
        }
        mults += dense_step(filter, &block.skip, &mut proj[..k]);
        skip_sum.iter_mut().zip(&proj[..k]).for_each(|(s, p)| *s += p);
        caches[b + 1].push(h);
        std::mem::swap(h, next_h);
    }

    skip_sum.iter_mut().for_each(|v| *v = relu(*v));
    mults += dense_step(skip_sum, &params.hidden, hidden);
    hidden.iter_mut().for_each(|v| *v = relu(*v));
    let mut logits = [0.0f32; 2];
    mults += dense_step(hidden, &params.output, &mut logits);
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(KwsError::NonFinite(format!("streaming output at frame {t}")));
    }
    state.frames_seen += 1;
    state.last_multiplications = mults;
    Ok(softmax2(logits)[1])
}

/// Multiplications needed to process one streamed frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsReport {
    pub multiplications_per_frame: u64,
    pub multiplications_per_second: u64,
}

pub const FRAMES_PER_SECOND: u64 = 100;

/// Analytic per-frame multiplication count: input normalization, every
/// convolution tap, the gate product, both projections and the head.
/// Nonlinearities are not counted.
pub fn count_multiplications(arch: &Architecture) -> FlopsReport {
    let (r, d, k) = (
        arch.residual_channels as u64,
        arch.dilation_channels as u64,
        arch.skip_channels as u64,
    );
    let input = arch.input_dim as u64;
    let s0 = arch.initial_filter_size as u64;
    let s = arch.block_filter_size as u64;
    let convs = if arch.gating_enabled { 2 } else { 1 };
    let gate_product = if arch.gating_enabled { d } else { 0 };
    let block = convs * s * r * d + gate_product + d * r + d * k;
    let head = k * arch.head_hidden as u64 + arch.head_hidden as u64 * arch.num_classes as u64;
    let per_frame = input + s0 * input * r + arch.num_blocks as u64 * block + head;
    FlopsReport {
        multiplications_per_frame: per_frame,
        multiplications_per_second: per_frame * FRAMES_PER_SECOND,
    }
}

/// Output of [`StreamingDetector::push`] for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDecision {
    pub frame_index: usize,
    pub raw: f32,
    pub smoothed: f32,
    pub triggered: bool,
}

/// Normalization, cached network, trailing smoothing and triggering for one
/// live stream. The model is shared read-only.
#[derive(Debug, Clone)]
pub struct StreamingDetector {
    model: Arc<Model>,
    state: StreamState,
    normalized: Vec<f32>,
    recent: RingBuffer,
    smoothing: SmoothingConfig,
    trigger: TriggerConfig,
    trigger_state: TriggerState,
}

impl StreamingDetector {
    pub fn new(model: Arc<Model>, smoothing: SmoothingConfig, trigger: TriggerConfig) -> Self {
        let state = stream_init(&model.arch);
        let dim = model.arch.input_dim;
        Self {
            recent: RingBuffer::new(smoothing.w_smooth.max(1), 1),
            model,
            state,
            normalized: vec![0.0; dim],
            smoothing,
            trigger,
            trigger_state: TriggerState::default(),
        }
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    /// Multiplications of the last push, normalization included.
    pub fn last_multiplications(&self) -> u64 {
        self.state.last_multiplications + self.model.arch.input_dim as u64
    }

    /// Feeds one raw LFBE frame.
    pub fn push(&mut self, frame: &[f32]) -> Result<FrameDecision> {
        if frame.len() != self.model.arch.input_dim {
            return Err(KwsError::Shape(format!(
                "frame has {} values, model expects {}",
                frame.len(),
                self.model.arch.input_dim
            )));
        }
        let t = self.state.frames_seen;
        self.model.norm.apply_frame(frame, &mut self.normalized);
        let raw = push_frame(&mut self.state, &self.normalized, &self.model.params, &self.model.arch)?;
        self.recent.push(&[raw]);
        let w = self.smoothing.w_smooth.max(1).min(t + 1);
        let smoothed = window_mean((1..=w).rev().map(|lag| self.recent.get(lag)[0]));
        let triggered = self.trigger_state.step(t, smoothed, &self.trigger);
        Ok(FrameDecision {
            frame_index: t,
            raw,
            smoothed,
            triggered,
        })
    }

    pub fn reset(&mut self) {
        stream_reset(&mut self.state);
        self.recent.clear();
        self.trigger_state.reset();
    }
}
