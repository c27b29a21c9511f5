//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "WKNT" | u32 version
//! architecture: u32 input_dim, initial_filter_size, num_blocks, block_filter_size,
//!               cycle_len, cycle_len x u32 dilation, residual_channels,
//!               dilation_channels, skip_channels, head_hidden, num_classes,
//!               gating (0|1)
//! normalization: u32 dim, dim x f32 mean, dim x f32 std
//! u32 tensor_count, then per tensor: u32 ndim, ndim x u32 dim, f32 data
//! ```

use std::path::Path;

use super::{Architecture, Model, ModelParams};
use crate::error::{KwsError, Result};
use crate::features::FeatureNorm;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WKNT";
pub const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let arch = &model.arch;
    let mut buf = Vec::with_capacity(16 + 4 * arch.param_count());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize);
    for v in [
        arch.input_dim,
        arch.initial_filter_size,
        arch.num_blocks,
        arch.block_filter_size,
        arch.dilation_cycle.len(),
    ] {
        put_u32(&mut buf, v);
    }
    for &d in &arch.dilation_cycle {
        put_u32(&mut buf, d);
    }
    for v in [
        arch.residual_channels,
        arch.dilation_channels,
        arch.skip_channels,
        arch.head_hidden,
        arch.num_classes,
        arch.gating_enabled as usize,
    ] {
        put_u32(&mut buf, v);
    }
    put_u32(&mut buf, model.norm.dim());
    put_f32s(&mut buf, &model.norm.mean);
    put_f32s(&mut buf, &model.norm.std);
    let tensors = model.params.tensors();
    put_u32(&mut buf, tensors.len());
    for t in tensors {
        put_u32(&mut buf, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut buf, d);
        }
        put_f32s(&mut buf, &t.data);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| KwsError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            KwsError::Checkpoint("tensor size overflow".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(KwsError::Checkpoint("bad magic (expected WKNT)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(KwsError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let input_dim = r.u32()?;
    let initial_filter_size = r.u32()?;
    let num_blocks = r.u32()?;
    let block_filter_size = r.u32()?;
    let cycle_len = r.u32()?;
    let dilation_cycle = (0..cycle_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        input_dim,
        initial_filter_size,
        num_blocks,
        block_filter_size,
        dilation_cycle,
        residual_channels: r.u32()?,
        dilation_channels: r.u32()?,
        skip_channels: r.u32()?,
        head_hidden: r.u32()?,
        num_classes: r.u32()?,
        gating_enabled: match r.u32()? {
            0 => false,
            1 => true,
            v => return Err(KwsError::Checkpoint(format!("bad gating flag {v}"))),
        },
    };
    arch.validate()
        .map_err(|e| KwsError::Checkpoint(e.to_string()))?;
    let dim = r.u32()?;
    if dim != arch.input_dim {
        return Err(KwsError::Checkpoint(format!(
            "normalization dim {dim} != input_dim {}",
            arch.input_dim
        )));
    }
    let norm = FeatureNorm {
        mean: r.f32s(dim)?,
        std: r.f32s(dim)?,
    };
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| KwsError::Checkpoint("tensor size overflow".into()))?;
        tensors.push(Tensor::from_vec(&shape, r.f32s(n)?)?);
    }
    if r.pos != bytes.len() {
        return Err(KwsError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let params = ModelParams::from_tensors(&arch, tensors)
        .map_err(|e| KwsError::Checkpoint(e.to_string()))?;
    Ok(Model { arch, params, norm })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    decode(&std::fs::read(path)?)
}
