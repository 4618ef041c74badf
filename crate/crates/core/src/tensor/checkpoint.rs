//! Checkpoint container: the 8-byte magic `DETNETV1`, one line of compact
//! JSON header terminated by `\n`, then every tensor as little-endian `f32`
//! in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DETNETV1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointData {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint(path: &Path, data: &CheckpointData) -> Result<()> {
    let header = Header {
        meta: data.meta.clone(),
        tensors: data
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let payload: usize = data.tensors.iter().map(|t| t.tensor.len() * 4).sum();
    let mut buf = Vec::with_capacity(payload + 4096);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    serde_json::to_writer(&mut buf, &header)?;
    buf.push(b'\n');
    for t in &data.tensors {
        for v in t.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, expected DETNETV1".into()));
    }
    let nl = bytes[8..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[8..8 + nl]).map_err(|e| bad(format!("malformed header: {e}")))?;
    let mut cursor = 8 + nl + 1;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let end = cursor + len * 4;
        if end > bytes.len() {
            return Err(bad(format!("payload truncated in tensor `{}`", entry.name)));
        }
        let data = bytes[cursor..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(entry.shape, data).map_err(|e| bad(format!("tensor `{}`: {e}", entry.name)))?;
        tensors.push(NamedTensor {
            name: entry.name,
            tensor,
        });
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(bad(format!("{} trailing bytes after payload", bytes.len() - cursor)));
    }
    Ok(CheckpointData {
        meta: header.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let data = CheckpointData {
            meta: serde_json::json!({"seed": 7}),
            tensors: vec![
                NamedTensor {
                    name: "a".into(),
                    tensor: Tensor::from_fn(vec![2, 3], |i| (i as f32).sin() * 1e-3),
                },
                NamedTensor {
                    name: "b".into(),
                    tensor: Tensor::new(vec![2], vec![f32::MIN_POSITIVE, -0.0]).unwrap(),
                },
            ],
        };
        write_checkpoint(&path, &data).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.meta, data.meta);
        for (x, y) in back.tensors.iter().zip(&data.tensors) {
            let xb: Vec<u32> = x.tensor.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn corrupted_magic_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.bin");
        fs::write(&path, b"DETNETV0{}\n").unwrap();
        let err = read_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("broken.bin") && err.contains("magic"), "{err}");
    }
}
