//! Binary checkpoint format.
//!
//! ```text
//! "HLBC" | u32 version | u32 len, spec text | records until EOF
//! record = u32 len, name | u8 rank | rank × u32 dim | raw little-endian values
//! ```
//!
//! Version 1 stores `f32` values, version 2 stores `f64` values. All integers
//! are little-endian. Vectors (biases, BN statistics) are written with rank 1.

use std::collections::HashMap;
use std::path::Path;

use super::hlb::Model;
use super::spec::ModelSpec;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HLBC";

/// Storage precision of checkpoint values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CheckpointPrecision {
    /// Compact `f32` records (version 1). Lossy for `f64` models.
    F32,
    /// Full `f64` records (version 2); round-trips training state bit-exactly.
    #[default]
    F64,
}

impl CheckpointPrecision {
    fn version(self) -> u32 {
        match self {
            Self::F32 => 1,
            Self::F64 => 2,
        }
    }
}

fn logical_dims(shape: [usize; 4]) -> Vec<usize> {
    match shape {
        [1, c, 1, 1] => vec![c],
        s => s.to_vec(),
    }
}

pub fn encode_checkpoint(model: &Model<f64>, precision: CheckpointPrecision) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&precision.version().to_le_bytes());
    let spec = model.spec().to_text();
    buf.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    buf.extend_from_slice(spec.as_bytes());
    for t in model.tensors() {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        let dims = logical_dims(t.tensor.shape());
        buf.push(dims.len() as u8);
        for d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.tensor.data() {
            match precision {
                CheckpointPrecision::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                CheckpointPrecision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    buf
}

pub fn save_checkpoint(model: &Model<f64>, path: &Path, precision: CheckpointPrecision) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_checkpoint(model, precision)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decodes a checkpoint; when `expected` is given the embedded spec must equal it.
pub fn decode_checkpoint(bytes: &[u8], path: &Path, expected: Option<&ModelSpec>) -> Result<Model<f64>> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic bytes (not an HLBC checkpoint)"));
    }
    let version = r.u32("version")?;
    let value_size = match version {
        1 => 4,
        2 => 8,
        v => return Err(Error::format(path, format!("unsupported checkpoint version {v}"))),
    };
    let spec_len = r.u32("spec length")? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len, "spec text")?)
        .map_err(|_| Error::format(path, "spec text is not UTF-8"))?;
    let spec = ModelSpec::from_text(spec_text)?;
    if let Some(exp) = expected {
        if exp != &spec {
            return Err(Error::SpecMismatch(format!(
                "checkpoint holds\n{}but\n{}was requested",
                spec.to_text(),
                exp.to_text()
            )));
        }
    }

    let mut model = Model::<f64>::new(&spec, 0)?;
    let mut slots: HashMap<String, &mut crate::tensor::Tensor<f64>> = model
        .tensors_mut()
        .into_iter()
        .map(|t| (t.name, t.tensor))
        .collect();
    let mut seen = 0usize;
    while !r.at_end() {
        let name_len = r.u32("record name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "record name")?)
            .map_err(|_| Error::format(path, "record name is not UTF-8"))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let slot = slots
            .get_mut(&name)
            .ok_or_else(|| Error::format(path, format!("unexpected record `{name}`")))?;
        if dims != logical_dims(slot.shape()) {
            return Err(Error::format(
                path,
                format!(
                    "record `{name}` has dims {dims:?} but the embedded spec implies {:?}",
                    logical_dims(slot.shape())
                ),
            ));
        }
        let raw = r.take(slot.len() * value_size, &format!("values of `{name}`"))?;
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(value_size)) {
            *dst = if value_size == 4 {
                f32::from_le_bytes(chunk.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(chunk.try_into().unwrap())
            };
        }
        seen += 1;
    }
    if seen != slots.len() {
        return Err(Error::format(
            path,
            format!("checkpoint has {seen} records, the spec needs {}", slots.len()),
        ));
    }
    drop(slots);
    Ok(model)
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelSpec>) -> Result<Model<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path, expected)
}
