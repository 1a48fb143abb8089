//! `SKL1` tensor container.
//!
//! Layout (little-endian):
//! - magic `b"SKL1"`
//! - header length: u32
//! - JSON header `{"dtype":"f32"|"f64","shape":[...],"label":int}`
//! - row-major IEEE-754 payload
//!
//! Samples carry `label`; score matrices (`[num_samples, num_classes]`)
//! carry `labels` with the ground truth of each row instead.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

pub const MAGIC: &[u8; 4] = b"SKL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

/// Appends `values` to `out` as little-endian `dtype`.
pub fn encode_values(values: &[f64], dtype: Dtype, out: &mut Vec<u8>) {
    out.reserve(values.len() * dtype.size());
    match dtype {
        Dtype::F32 => values
            .iter()
            .for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes())),
        Dtype::F64 => values
            .iter()
            .for_each(|&x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

pub fn decode_values(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    }
}

pub fn encode(header: &Header, values: &[f64]) -> Result<Vec<u8>> {
    let n: usize = header.shape.iter().product();
    if n != values.len() {
        return Err(Error::Shape(format!(
            "header shape {:?} holds {n} values, got {}",
            header.shape,
            values.len()
        )));
    }
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + n * header.dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    encode_values(values, header.dtype, &mut out);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing SKL1 magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < hlen {
        return Err(Error::Format("truncated SKL1 header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Format(format!("SKL1 header: {e}")))?;
    let payload = &body[hlen..];
    let n: usize = header.shape.iter().product();
    if payload.len() != n * header.dtype.size() {
        return Err(Error::Format(format!(
            "SKL1 payload is {} bytes, shape {:?} as {:?} needs {}",
            payload.len(),
            header.shape,
            header.dtype,
            n * header.dtype.size()
        )));
    }
    let values = decode_values(payload, header.dtype);
    Ok((header, values))
}

pub fn write_file(path: impl AsRef<Path>, header: &Header, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(header, values)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<(Header, Vec<f64>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_sequence(path: impl AsRef<Path>, seq: &SkeletonSequence, dtype: Dtype) -> Result<()> {
    let header = Header {
        dtype,
        shape: seq.shape().to_vec(),
        label: Some(seq.label),
        labels: None,
    };
    write_file(path, &header, seq.data())
}

/// Loads a sample; a person whose coordinates are all zero is marked absent.
pub fn load_sequence(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let (header, data) = read_file(path)?;
    let shape: [usize; 4] = header.shape.as_slice().try_into().map_err(|_| {
        Error::Format(format!(
            "{}: sample shape {:?} is not [M,T,V,C]",
            path.display(),
            header.shape
        ))
    })?;
    let label = header
        .label
        .ok_or_else(|| Error::Format(format!("{}: sample has no label", path.display())))?;
    let per_person = shape[1] * shape[2] * shape[3];
    let mut mask: Vec<bool> = data
        .chunks(per_person.max(1))
        .map(|p| p.iter().any(|&x| x != 0.0))
        .collect();
    if mask.iter().all(|&m| !m) {
        mask.iter_mut().for_each(|m| *m = true);
    }
    SkeletonSequence::with_mask(shape, data, label, mask)
}

/// Per-sample class scores with the ground-truth label of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub num_classes: usize,
    /// Row-major `[labels.len(), num_classes]`.
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(num_classes: usize, scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if scores.len() != labels.len() * num_classes {
            return Err(Error::Shape(format!(
                "{} scores for {} samples x {num_classes} classes",
                scores.len(),
                labels.len()
            )));
        }
        Ok(Self {
            num_classes,
            scores,
            labels,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// First index of the maximum score in each row.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.num_samples())
            .map(|i| argmax(self.row(i)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = Header {
            dtype: Dtype::F64,
            shape: vec![self.num_samples(), self.num_classes],
            label: None,
            labels: Some(self.labels.clone()),
        };
        write_file(path, &header, &self.scores)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, data) = read_file(path)?;
        let [n, c]: [usize; 2] = header.shape.as_slice().try_into().map_err(|_| {
            Error::Format(format!("{}: score shape must be [N, C]", path.display()))
        })?;
        let labels = header
            .labels
            .ok_or_else(|| Error::Format(format!("{}: score matrix has no labels", path.display())))?;
        if labels.len() != n {
            return Err(Error::Format(format!(
                "{}: {} labels for {n} rows",
                path.display(),
                labels.len()
            )));
        }
        Self::new(c, data, labels)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_compact_json_with_fixed_key_order() {
        let seq = SkeletonSequence::new([1, 1, 1, 2], vec![1.0, -2.0], 3).unwrap();
        let h = Header {
            dtype: Dtype::F32,
            shape: seq.shape().to_vec(),
            label: Some(3),
            labels: None,
        };
        let bytes = encode(&h, seq.data()).unwrap();
        let json = br#"{"dtype":"f32","shape":[1,1,1,2],"label":3}"#;
        assert_eq!(&bytes[..4], b"SKL1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, json.len());
        assert_eq!(&bytes[8..8 + json.len()], json);
        assert_eq!(&bytes[8 + json.len()..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"SKL2\0\0\0\0").is_err());
        let h = Header {
            dtype: Dtype::F64,
            shape: vec![2],
            label: None,
            labels: None,
        };
        let mut bytes = encode(&h, &[1.0, 2.0]).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn empty_person_is_masked() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = vec![0.0; (2 * 2) * 2];
        data[0] = 1.0;
        let seq = SkeletonSequence::new([2, 2, 1, 2], data, 0).unwrap();
        let p = dir.path().join("a.skl");
        save_sequence(&p, &seq, Dtype::F64).unwrap();
        let back = load_sequence(&p).unwrap();
        assert_eq!(back.person_mask, vec![true, false]);
        assert_eq!(back.data(), seq.data());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..64), labels in proptest::collection::vec(0usize..5, 1..4)) {
            let n = labels.len();
            let c = vals.len() / n;
            prop_assume!(c >= 1);
            let m = ScoreMatrix::new(c, vals[..n * c].to_vec(), labels).unwrap();
            let h = Header { dtype: Dtype::F64, shape: vec![n, c], label: None, labels: Some(m.labels.clone()) };
            let (h2, back) = decode(&encode(&h, &m.scores).unwrap()).unwrap();
            prop_assert_eq!(h2, h);
            prop_assert_eq!(back, m.scores);
        }
    }
}
