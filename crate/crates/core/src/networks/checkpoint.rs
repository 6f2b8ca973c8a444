//! Parameter files: an 8-byte little-endian header length, a JSON header
//! listing every tensor, then all values as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::engine::{Scalar, Tensor};
use crate::error::{Error, Result};

const FORMAT: &str = "dsalign-params-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Start of this tensor in the payload, counted in `f32` elements.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    params: Vec<CheckpointEntry>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub values: Vec<f32>,
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        let mut entries = Vec::with_capacity(store.len());
        let mut values = Vec::new();
        for (_, p) in store.iter() {
            entries.push(CheckpointEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset: values.len(),
                trainable: p.trainable,
            });
            values.extend(p.value.data().iter().map(|v| v.as_f64() as f32));
        }
        Self { entries, values }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            format: FORMAT.into(),
            params: self.entries.clone(),
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.values.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 8 {
            return Err(bad(format!(
                "file is {} bytes, too short for the length prefix",
                bytes.len()
            )));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() < hlen {
            return Err(bad(format!(
                "header claims {hlen} bytes but only {} remain",
                body.len()
            )));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        if header.format != FORMAT {
            return Err(bad(format!("unknown format tag {:?}", header.format)));
        }
        let payload = &body[hlen..];
        if !payload.len().is_multiple_of(4) {
            return Err(bad(format!(
                "payload length {} is not a multiple of 4",
                payload.len()
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        for e in &header.params {
            let end = e.offset + e.shape.iter().product::<usize>();
            if end > values.len() {
                return Err(bad(format!(
                    "{} spans elements {}..{end} but the payload holds {}",
                    e.name,
                    e.offset,
                    values.len()
                )));
            }
        }
        Ok(Self {
            entries: header.params,
            values,
        })
    }

    /// Copies values into a store with the same names and shapes.
    pub fn restore_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (e, id) in self.entries.iter().zip(ids) {
            let p = store.get(id);
            if p.name != e.name || p.value.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    e.name,
                    e.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let n: usize = e.shape.iter().product();
            let data = self.values[e.offset..e.offset + n]
                .iter()
                .map(|&v| T::of(v as f64))
                .collect();
            *store.value_mut(id) = Tensor::new(e.shape.clone(), data)?;
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_store(store).to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
