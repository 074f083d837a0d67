//! Named-tensor archive: one line of compact JSON manifest, a `\n`, then a
//! contiguous little-endian `f32` payload. Offsets and lengths in the
//! manifest count elements, not bytes.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Real, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    tensors: Vec<TensorEntry>,
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn from_store<T: Real>(store: &ParamStore<T>, config: serde_json::Value) -> Self {
        let tensors = store
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
                data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Self { tensors, config }
    }

    /// Copies every tensor of `store` from the archive by name.
    pub fn restore_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<(), NumericsError> {
        let mut loaded = ParamStore::<f32>::new();
        for t in &self.tensors {
            loaded.add(t.name.clone(), Tensor::new(t.rows, t.cols, t.data.clone())?);
        }
        store.load_from(&loaded)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NumericsError> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry { name: t.name.clone(), shape: vec![t.rows, t.cols], offset, len: t.data.len() };
                offset += t.data.len();
                e
            })
            .collect();
        let manifest = Manifest { version: CHECKPOINT_VERSION, tensors: entries, config: self.config.clone() };
        let header = serde_json::to_vec(&manifest).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        w.write_all(&header)?;
        w.write_all(b"\n")?;
        let mut payload = Vec::with_capacity(offset * 4);
        for t in &self.tensors {
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, NumericsError> {
        let mut reader = BufReader::new(r);
        let mut header = Vec::new();
        reader.read_until(b'\n', &mut header)?;
        if header.last() != Some(&b'\n') {
            return Err(NumericsError::Checkpoint("missing manifest terminator".into()));
        }
        header.pop();
        let manifest: Manifest =
            serde_json::from_slice(&header).map_err(|e| NumericsError::Checkpoint(format!("manifest: {e}")))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!("unsupported version {}", manifest.version)));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() % 4 != 0 {
            return Err(NumericsError::Checkpoint("payload is not a whole number of f32 values".into()));
        }
        let payload: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let (rows, cols) = match e.shape.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                other => return Err(NumericsError::Checkpoint(format!("`{}`: unsupported rank {}", e.name, other.len()))),
            };
            if rows * cols != e.len || e.offset + e.len > payload.len() {
                return Err(NumericsError::Checkpoint(format!("`{}`: entry exceeds payload or shape", e.name)));
            }
            tensors.push(NamedTensor { name: e.name, rows, cols, data: payload[e.offset..e.offset + e.len].to_vec() });
        }
        Ok(Self { tensors, config: manifest.config })
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        Self::read_from(fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::new(1, 2, vec![1.0, -2.0]).unwrap());
        store.add("tau", Tensor::scalar(14.3));
        let ck = Checkpoint::from_store(&store, serde_json::json!({"d_model": 2}));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let newline = buf.iter().position(|&b| b == b'\n').unwrap();
        let manifest: serde_json::Value = serde_json::from_slice(&buf[..newline]).unwrap();
        assert_eq!(manifest["version"], 1);
        assert_eq!(manifest["tensors"][1]["name"], "tau");
        assert_eq!(manifest["tensors"][1]["offset"], 2);
        assert_eq!(manifest["tensors"][1]["len"], 1);
        assert_eq!(manifest["config"]["d_model"], 2);
        let payload = &buf[newline + 1..];
        assert_eq!(payload.len(), 12);
        assert_eq!(&payload[4..8], &(-2.0f32).to_le_bytes());
        assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), ck);
    }

    #[test]
    fn restore_checks_names_and_shapes() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros(2, 2));
        let mut other = ParamStore::<f64>::new();
        other.add("w", Tensor::zeros(1, 4));
        let ck = Checkpoint::from_store(&other, serde_json::Value::Null);
        assert!(ck.restore_into(&mut store).is_err());
        let ck = Checkpoint { tensors: vec![], config: serde_json::Value::Null };
        assert!(matches!(ck.restore_into(&mut store), Err(NumericsError::UnknownParameter(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::new(1, 2, vec![1.0, 2.0]).unwrap());
        let mut buf = Vec::new();
        Checkpoint::from_store(&store, serde_json::Value::Null).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(Checkpoint::read_from(&buf[..]).is_err());
    }
}
