//! Checkpoint files: one line of JSON manifest, a newline, then every tensor
//! as contiguous little-endian `f32` in manifest order. Offsets and lengths
//! are in elements.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(TensorEntry, Tensor)>,
    pub config: Option<Value>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config: Option<Value>) -> Self {
        let mut offset = 0;
        let tensors = store
            .iter()
            .map(|(_, name, t)| {
                let entry = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: t.len(),
                };
                offset += t.len();
                (entry, t.clone())
            })
            .collect();
        Self { tensors, config }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
            config: self.config.clone(),
        };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing manifest terminator".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
        let blob = &bytes[split + 1..];
        if !blob.len().is_multiple_of(4) {
            return Err(Error::Checkpoint("blob length is not a multiple of 4".into()));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected_offset = 0;
        for e in manifest.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Checkpoint(format!("tensor {} shape/len mismatch", e.name)));
            }
            if e.offset != expected_offset {
                return Err(Error::Checkpoint(format!("tensor {} is not contiguous", e.name)));
            }
            let end = e.offset + e.len;
            if end > values.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past the blob", e.name)));
            }
            let data = values[e.offset..end].iter().map(|&v| v as f64).collect();
            let t = Tensor::new(e.shape.clone(), data)?;
            expected_offset = end;
            tensors.push((e, t));
        }
        if expected_offset != values.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing values after the last tensor",
                values.len() - expected_offset
            )));
        }
        Ok(Self {
            tensors,
            config: manifest.config,
        })
    }

    /// Copy every tensor into the same-named parameter. Names and shapes must
    /// match the store exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (e, t) in &self.tensors {
            let id = store
                .find(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", e.name)))?;
            store
                .assign(id, t.clone())
                .map_err(|err| Error::Checkpoint(err.to_string()))?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn store() -> ParamStore {
        let mut rng = SplitMix64::new(3);
        let mut s = ParamStore::new();
        s.add_xavier("a", 3, 2, &mut rng);
        s.add_filled("b", vec![1, 4], 0.1);
        s
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let s = store();
        let cfg = serde_json::json!({"d": 2});
        let bytes = Checkpoint::from_store(&s, Some(cfg.clone())).to_bytes();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.config, Some(cfg));
        assert_eq!(ck.tensors[1].0.offset, 6);
        let mut t = store();
        t.get_mut(t.find("a").unwrap()).data_mut()[0] = 9.0;
        ck.restore_into(&mut t).unwrap();
        for ((_, _, x), (_, _, y)) in s.iter().zip(t.iter()) {
            for (&a, &b) in x.data().iter().zip(y.data()) {
                assert_eq!(b, a as f32 as f64);
            }
        }
        assert_eq!(Checkpoint::from_store(&t, ck.config.clone()).to_bytes(), bytes);
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = Checkpoint::from_store(&store(), None).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"{}").is_err());

        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut other = ParamStore::new();
        other.add_zeros("a", vec![2, 3]);
        other.add_zeros("b", vec![1, 4]);
        assert!(ck.restore_into(&mut other).is_err());
    }
}
