//! Binary formats: precomputed embedding files and model checkpoints.
//!
//! Embedding file (little-endian): `"SGEMB1"`, `u32 T`, `u32 D`,
//! `f32 frame_rate_hz`, then `T * D` row-major `f32` values.
//!
//! Checkpoint (little-endian): `"SGCKPT"`, `u32 version`, `u64 seed`,
//! `u32 n` + `n` bytes of model-config JSON, `u32` tensor count, then per
//! tensor `u32 name length`, name, `u32 ndim`, `ndim × u32` extents and the
//! `f64` values.

use std::path::Path;

use super::{ModelConfig, ParamStore, SingGraph};
use crate::autograd::Tensor;
use crate::dsp::{FeatureSequence, SourceTag};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 6] = b"SGEMB1";
const EMBEDDING_HEADER: usize = 6 + 4 + 4 + 4;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Prefix separating batch-norm running statistics from trainable tensors.
const BUFFER_PREFIX: &str = "buffer:";

pub fn encode_embedding(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let frames = u32::try_from(seq.frames())
        .map_err(|_| Error::Length(format!("{} frames overflow u32", seq.frames())))?;
    let dim = u32::try_from(seq.dim())
        .map_err(|_| Error::Length(format!("{} dims overflow u32", seq.dim())))?;
    let mut out = Vec::with_capacity(EMBEDDING_HEADER + 4 * seq.data().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(seq.frame_rate() as f32).to_le_bytes());
    for &v in seq.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embedding(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < EMBEDDING_HEADER {
        return Err(Error::Length(format!(
            "embedding header needs {EMBEDDING_HEADER} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..6] != EMBEDDING_MAGIC {
        return Err(Error::Format(format!(
            "bad embedding magic {:?}",
            String::from_utf8_lossy(&bytes[..6])
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let frames = u32_at(6) as usize;
    let dim = u32_at(10) as usize;
    let rate = f32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes")) as f64;
    if frames == 0 || dim == 0 {
        return Err(Error::Format(format!("empty embedding {frames}x{dim}")));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Format(format!(
            "invalid embedding frame rate {rate}"
        )));
    }
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("embedding size {frames}x{dim} overflows")))?;
    let actual = bytes.len() - EMBEDDING_HEADER;
    if actual != expected {
        return Err(Error::Length(format!(
            "embedding payload for {frames}x{dim} needs {expected} bytes, got {actual}"
        )));
    }
    let data = bytes[EMBEDDING_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    FeatureSequence::new(data, frames, dim, rate, SourceTag::Embedding)
}

pub fn save_embedding_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_embedding(seq)?).map_err(|e| Error::io(path, e))
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes).map_err(|e| match e {
        Error::Length(m) => Error::Length(format!("{}: {m}", path.display())),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Length(format!("{v} overflows u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.ndim())?;
    for &e in t.shape() {
        put_u32(out, e)?;
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serializes a model to checkpoint bytes.
pub fn encode_checkpoint(model: &SingGraph) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.config().seed.to_le_bytes());
    let cfg = serde_json::to_vec(model.config())
        .map_err(|e| Error::Format(format!("cannot serialize model config: {e}")))?;
    put_u32(&mut out, cfg.len())?;
    out.extend_from_slice(&cfg);
    put_u32(&mut out, model.params().len() + model.buffers().len())?;
    for (name, t) in model.params().iter() {
        put_tensor(&mut out, name, t)?;
    }
    for (name, t) in model.buffers().iter() {
        put_tensor(&mut out, &format!("{BUFFER_PREFIX}{name}"), t)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Length(format!(
                "checkpoint truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Parses checkpoint bytes. With `expected`, the embedded config must match
/// it exactly.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<SingGraph> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let seed = r.u64()?;
    let cfg_len = r.u32()?;
    let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if cfg.seed != seed {
        return Err(Error::Format(format!(
            "checkpoint seed {seed} disagrees with its config seed {}",
            cfg.seed
        )));
    }
    if let Some(want) = expected {
        if *want != cfg {
            return Err(Error::Config(format!(
                "checkpoint was trained with a different model config: {} vs {}",
                serde_json::to_string(&cfg).unwrap_or_default(),
                serde_json::to_string(want).unwrap_or_default()
            )));
        }
    }
    let count = r.u32()?;
    let mut params = ParamStore::default();
    let mut buffers = ParamStore::default();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()?;
        let shape: Vec<usize> = (0..ndim).map(|_| r.u32()).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Format("tensor too large".into()))?,
            )?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data)?;
        match name.strip_prefix(BUFFER_PREFIX) {
            Some(b) => buffers.insert(b, t)?,
            None => params.insert(&name, t)?,
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Length(format!(
            "{} trailing bytes after the checkpoint",
            bytes.len() - r.pos
        )));
    }
    SingGraph::from_parts(cfg, params, buffers)
}

pub fn save_checkpoint(model: &SingGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&ModelConfig>,
) -> Result<SingGraph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}
