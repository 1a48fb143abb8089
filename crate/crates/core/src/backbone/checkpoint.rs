//! `BRLCKPT1` container: magic, `u32` LE header length, a JSON header, then
//! the tensor blobs back to back in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{decode_values, encode_values, Dtype};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BRLCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: Dtype,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

/// Named tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dtype: Dtype,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f64>)> {
        self.tensors.iter().find(|t| t.0 == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            dtype: self.dtype,
            tensors: self
                .tensors
                .iter()
                .map(|(name, shape, values)| {
                    if shape.iter().product::<usize>() != values.len() {
                        return Err(Error::Shape(format!(
                            "tensor {name} has {} values for shape {shape:?}",
                            values.len()
                        )));
                    }
                    Ok(TensorEntry {
                        name: name.clone(),
                        shape: shape.clone(),
                    })
                })
                .collect::<Result<_>>()?,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(12 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, values) in &self.tensors {
            encode_values(values, self.dtype, &mut out);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a BRLCKPT1 checkpoint".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < len {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let size = header.dtype.size();
        let mut rest = &body[len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            if rest.len() < n * size {
                return Err(Error::Format(format!("checkpoint truncated in tensor {}", t.name)));
            }
            let values = decode_values(&rest[..n * size], header.dtype);
            rest = &rest[n * size..];
            tensors.push((t.name, t.shape, values));
        }
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint tensors",
                rest.len()
            )));
        }
        Ok(Self {
            dtype: header.dtype,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
