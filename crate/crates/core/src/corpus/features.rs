//! Flat little-endian f32 feature store with a JSON sidecar.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dims: usize,
    count: usize,
    ids: Vec<String>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn push(&mut self, id: impl Into<String>, v: &[f32]) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateImage(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, id: &str) -> Result<&[f32]> {
        self.get(id)
            .ok_or_else(|| Error::MissingImage(id.to_string()))
    }

    pub fn sidecar_path(bin: &Path) -> PathBuf {
        bin.with_extension("json")
    }

    /// Writes `<bin>` (raw f32 LE, row-major) and `<bin stem>.json`.
    pub fn write(&self, bin: impl AsRef<Path>) -> Result<()> {
        let bin = bin.as_ref();
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
        let side = Sidecar {
            dims: self.dim,
            count: self.ids.len(),
            ids: self.ids.clone(),
        };
        let side_path = Self::sidecar_path(bin);
        let json = serde_json::to_vec_pretty(&side)?;
        fs::write(&side_path, json).map_err(|e| Error::io(&side_path, e))?;
        Ok(())
    }

    pub fn read(bin: impl AsRef<Path>) -> Result<Self> {
        let bin = bin.as_ref();
        let side_path = Self::sidecar_path(bin);
        let side: Sidecar =
            serde_json::from_slice(&fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?)?;
        let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
        if side.ids.len() != side.count || bytes.len() != side.count * side.dims * 4 {
            return Err(Error::malformed(
                "feature store",
                format!(
                    "{} bytes for {} x {} floats ({} ids)",
                    bytes.len(),
                    side.count,
                    side.dims,
                    side.ids.len()
                ),
            ));
        }
        let mut store = FeatureStore::new(side.dims);
        for (id, chunk) in side.ids.into_iter().zip(bytes.chunks_exact(side.dims * 4)) {
            let v: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            store.push(id, &v)?;
        }
        Ok(store)
    }
}
