//! Binary model container.
//!
//! ```text
//! magic    "THGM"
//! version  u32 LE
//! kind     u8 length + ASCII tag (linear | cnn | rnn)
//! header   u64 LE length + UTF-8 JSON (model config, pipeline, metadata)
//! tensors  u32 LE count, then per tensor:
//!          u32 LE ndim, ndim × u64 LE dims, prod(dims) × f64 LE (row-major)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Estimator, ModelKind, ModelMeta, ModelSpec, Pipeline, TrainedModel};
use crate::tensor::Tensor;
use crate::train::Trainable;

pub const MAGIC: &[u8; 4] = b"THGM";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: Value,
    pipeline: Pipeline,
    meta: ModelMeta,
}

pub fn write_model(out: &mut impl Write, model: &TrainedModel) -> Result<()> {
    let kind = model.kind().as_str().as_bytes();
    let header = serde_json::to_vec(&Header {
        config: model.estimator.spec().config_json()?,
        pipeline: model.pipeline.clone(),
        meta: model.meta.clone(),
    })?;
    let mut buf = Vec::with_capacity(header.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.push(kind.len() as u8);
    buf.extend_from_slice(kind);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    let tensors = model.estimator.parameters();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| Error::io("<model stream>", e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_model(input: &mut impl Read) -> Result<TrainedModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<model stream>", e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<TrainedModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    c.pos = 4;
    let version = c.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let kind_len = c.take(1, "kind tag")?[0] as usize;
    let kind_tag = std::str::from_utf8(c.take(kind_len, "kind tag")?).map_err(|_| Error::Corrupt("kind tag is not UTF-8".into()))?;
    let kind: ModelKind = kind_tag.parse().map_err(|_| Error::Corrupt(format!("unknown model kind '{kind_tag}'")))?;
    let header_len = usize::try_from(c.u64("header length")?).map_err(|_| Error::Truncated("header"))?;
    let header: Header = serde_json::from_slice(c.take(header_len, "header")?)
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let ndim = c.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(usize::try_from(c.u64("tensor shape")?).map_err(|_| Error::Corrupt("dimension overflow".into()))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Corrupt("tensor size overflow".into()))?;
        let raw = c.take(n, "tensor data")?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let spec = ModelSpec::from_config_json(kind, header.config).map_err(|e| Error::Corrupt(format!("config: {e}")))?;
    let estimator = Estimator::from_parts(spec, header.pipeline.n_features(), tensors)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(TrainedModel {
        estimator,
        pipeline: header.pipeline,
        meta: header.meta,
    })
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(&mut buf, model)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
