//! Parameter checkpoints: a plain-text shape manifest followed by a flat
//! blob of little-endian f64 values.
//!
//! Layout, in order:
//!
//! ```text
//! smp-checkpoint v1\n
//! meta <key> <value>\n          (zero or more)
//! tensor <name> <d0> <d1> ...\n (one per tensor, dims may be empty)
//! end\n
//! <8 bytes per value, little-endian, in manifest order>
//! ```
//!
//! Values round-trip bit-exactly; metadata values must not contain newlines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::DiffTensor;

const MAGIC: &str = "smp-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

/// An in-memory checkpoint: string metadata plus named value buffers.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, values)| (shape.as_slice(), values.as_slice()))
    }
}

pub fn save_tensors(
    path: &Path,
    meta: &BTreeMap<String, String>,
    tensors: &[(String, &DiffTensor)],
) -> Result<(), CheckpointError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{MAGIC}")?;
    for (k, v) in meta {
        writeln!(out, "meta {k} {v}")?;
    }
    for (name, t) in tensors {
        write!(out, "tensor {name}")?;
        for d in t.shape() {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "end")?;
    for (_, t) in tensors {
        for v in t.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;

    let mut ckpt = Checkpoint::default();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    let mut offset = 0usize;
    let mut first = true;
    let mut saw_end = false;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CheckpointError::Format("manifest not terminated".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| CheckpointError::Format("manifest is not utf-8".into()))?;
        offset += nl + 1;

        if first {
            if line != MAGIC {
                return Err(CheckpointError::Format(format!("bad magic `{line}`")));
            }
            first = false;
            continue;
        }
        if line == "end" {
            saw_end = true;
            break;
        }
        if let Some(meta) = line.strip_prefix("meta ") {
            let (k, v) = meta
                .split_once(' ')
                .ok_or_else(|| CheckpointError::Format(format!("bad meta line `{line}`")))?;
            ckpt.meta.insert(k.to_string(), v.to_string());
        } else if let Some(tensor) = line.strip_prefix("tensor ") {
            let mut parts = tensor.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| CheckpointError::Format("tensor line missing name".into()))?;
            let dims: Vec<usize> = parts
                .map(|d| {
                    d.parse()
                        .map_err(|_| CheckpointError::Format(format!("bad dim `{d}`")))
                })
                .collect::<Result<_, _>>()?;
            shapes.push((name.to_string(), dims));
        } else {
            return Err(CheckpointError::Format(format!(
                "unrecognized manifest line `{line}`"
            )));
        }
    }
    if !saw_end {
        return Err(CheckpointError::Format("missing `end` marker".into()));
    }

    for (name, shape) in shapes {
        let count: usize = shape.iter().product();
        let need = count * 8;
        if offset + need > bytes.len() {
            return Err(CheckpointError::Format(format!(
                "value blob truncated at tensor `{name}`"
            )));
        }
        let values: Vec<f64> = bytes[offset..offset + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += need;
        ckpt.tensors.push((name, shape, values));
    }
    if offset != bytes.len() {
        return Err(CheckpointError::Format(
            "trailing bytes after value blob".into(),
        ));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let a = DiffTensor::param("a", vec![2, 2], vec![1.0, -0.1, 1e-300, 3.5]).unwrap();
        let b = DiffTensor::param("b", vec![], vec![std::f64::consts::PI]).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("model".to_string(), "smp-fast".to_string());
        save_tensors(
            &path,
            &meta,
            &[("a".to_string(), &a), ("b".to_string(), &b)],
        )
        .unwrap();

        let ckpt = load_tensors(&path).unwrap();
        assert_eq!(ckpt.meta["model"], "smp-fast");
        let (shape, values) = ckpt.tensor("a").unwrap();
        assert_eq!(shape, &[2, 2]);
        for (x, y) in values.iter().zip(a.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let (shape, values) = ckpt.tensor("b").unwrap();
        assert!(shape.is_empty());
        assert_eq!(values[0].to_bits(), std::f64::consts::PI.to_bits());
    }

    #[test]
    fn truncated_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let a = DiffTensor::param("a", vec![4], vec![1.0; 4]).unwrap();
        save_tensors(&path, &BTreeMap::new(), &[("a".to_string(), &a)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_tensors(&path),
            Err(CheckpointError::Format(_))
        ));
    }
}
