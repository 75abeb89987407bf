//! Binary tensor container used for model checkpoints and training state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "FSCCKPT\0" | version u32 | header_len u32 | header JSON
//! tensor_count u32 | per tensor: name_len u16, name, rows u32, cols u32,
//!                    dtype u8 (0 = f32, 1 = f64), row-major values
//! ```

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::network::Model;
use super::params::ParamSet;
use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{FscError, Result};
use crate::geom::ply::write_bytes;

pub const MAGIC: &[u8; 8] = b"FSCCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    /// Splits off the tensors whose names start with `prefix`, with the
    /// prefix removed, in stored order.
    pub fn group(&self, prefix: &str) -> Result<ParamSet> {
        let (names, tensors) = self
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .unzip();
        ParamSet::from_parts(names, tensors)
    }
}

pub fn encode(header: &Value, tensors: &[(String, &Tensor, Dtype)]) -> Result<Vec<u8>> {
    let head = serde_json::to_vec(header).map_err(|e| FscError::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t, dtype) in tensors {
        let nb = name.as_bytes();
        if nb.len() > u16::MAX as usize {
            return Err(FscError::Checkpoint(format!("tensor name too long: {name}")));
        }
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        out.push(dtype.code());
        for &v in t.data() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FscError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(FscError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FscError::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let hlen = r.u32()? as usize;
    let header: Value =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| FscError::Checkpoint(format!("bad header: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| FscError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let dtype = r.take(1)?[0];
        let n = rows.checked_mul(cols).ok_or_else(|| FscError::Checkpoint(format!("tensor {name} too large")))?;
        let data: Vec<f64> = match dtype {
            0 => r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            1 => r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            d => return Err(FscError::Checkpoint(format!("tensor {name}: unknown dtype {d}"))),
        };
        tensors.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(FscError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Container { header, tensors })
}

pub fn read(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| FscError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        FscError::Checkpoint(m) => FscError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, header: &Value, tensors: &[(String, &Tensor, Dtype)]) -> Result<()> {
    write_bytes(path, &encode(header, tensors)?)
}

/// Parses the embedded model configuration of a header.
pub fn header_config(header: &Value) -> Result<ModelConfig> {
    let cfg = header.get("model").ok_or_else(|| FscError::Checkpoint("header has no model config".into()))?;
    serde_json::from_value(cfg.clone()).map_err(|e| FscError::Checkpoint(format!("bad model config: {e}")))
}

pub fn model_tensors<'a>(prefix: &str, params: &'a ParamSet, dtype: Dtype) -> Vec<(String, &'a Tensor, Dtype)> {
    params.iter().map(|(n, t)| (format!("{prefix}{n}"), t, dtype)).collect()
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let header = json!({ "kind": "model", "model": model.config });
    encode(&header, &model_tensors("", &model.params, Dtype::F32))
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    write_bytes(path, &encode_model(model)?)
}

/// Loads generator weights from a model checkpoint or a training state.
pub fn load_model(path: &Path) -> Result<Model> {
    let c = read(path)?;
    let config = header_config(&c.header)?;
    let params = match c.header.get("kind").and_then(Value::as_str) {
        Some("model") => c.group("")?,
        Some("train") => c.group("gen/")?,
        other => return Err(FscError::Checkpoint(format!("unknown checkpoint kind {other:?}"))),
    };
    Model::from_params(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn model_round_trip_is_exact() {
        let m = Model::new(ModelConfig::tiny(), 5).unwrap();
        let bytes = encode_model(&m).unwrap();
        let c = decode(&bytes).unwrap();
        let back = Model::from_params(header_config(&c.header).unwrap(), c.group("").unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = Model::new(ModelConfig::tiny(), 5).unwrap();
        let bytes = encode_model(&m).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"nonsense").is_err());
        let mut other = ModelConfig::tiny();
        other.d1 = 32;
        let c = decode(&bytes).unwrap();
        assert!(matches!(Model::from_params(other, c.group("").unwrap()), Err(FscError::Checkpoint(_))));
    }
}
