//! Parameter checkpoint files.
//!
//! Layout:
//!
//! ```text
//! GMOP-PARAMS 1\n
//! {"step":..,"params":[{"name":..,"rows":..,"cols":..,"trainable":..},..]}\n
//! <little-endian f64 values, parameters in manifest order>
//! ```

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NeuralError;

pub const CHECKPOINT_MAGIC: &str = "GMOP-PARAMS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: u64,
    pub params: Vec<ShapeEntry>,
}

pub fn write_params<W: Write>(store: &ParamStore, mut out: W) -> Result<(), NeuralError> {
    let manifest = Manifest {
        step: store.step(),
        params: store
            .ids()
            .map(|id| {
                let (rows, cols) = store.value(id).shape();
                ShapeEntry {
                    name: store.name(id).to_string(),
                    rows,
                    cols,
                    trainable: store.is_trainable(id),
                }
            })
            .collect(),
    };
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    serde_json::to_writer(&mut out, &manifest).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    writeln!(out)?;
    for id in store.ids() {
        for v in store.value(id).data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint into a fresh store.
pub fn read_params<R: BufRead>(mut input: R) -> Result<ParamStore, NeuralError> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let mut parts = header.trim_end().split(' ');
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(NeuralError::Checkpoint("missing checkpoint header".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| NeuralError::Checkpoint("unreadable format version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut line = String::new();
    input.read_line(&mut line)?;
    let manifest: Manifest = serde_json::from_str(&line).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for entry in &manifest.params {
        let mut data = Vec::with_capacity(entry.rows * entry.cols);
        for _ in 0..entry.rows * entry.cols {
            input
                .read_exact(&mut buf)
                .map_err(|_| NeuralError::Checkpoint(format!("truncated data for {}", entry.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::from_vec(entry.rows, entry.cols, data);
        if entry.trainable {
            store.add(entry.name.clone(), t);
        } else {
            store.add_buffer(entry.name.clone(), t);
        }
    }
    store.set_step(manifest.step);
    Ok(store)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<(), NeuralError> {
    let mut bytes = Vec::new();
    write_params(store, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamStore, NeuralError> {
    let f = fs::File::open(path)?;
    read_params(std::io::BufReader::new(f))
}

/// Loads values from `path` into a store that already has the same layout.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<(), NeuralError> {
    let loaded = load_params(path)?;
    store.copy_values_from(&loaded)?;
    store.set_step(loaded.step());
    Ok(())
}
