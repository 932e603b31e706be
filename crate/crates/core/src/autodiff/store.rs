//! Named parameter storage with optimizer accumulators and checkpointing.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

use super::tape::{Tape, Var};
use super::tensor::TensorBase;
use super::TapeError;

/// One parameter with its Adamax first-moment and infinity-norm accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub value: TensorBase<T>,
    pub first_moment: TensorBase<T>,
    pub inf_norm: TensorBase<T>,
}

/// Uniquely named parameter tensors plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T: Scalar> {
    entries: BTreeMap<String, ParamEntry<T>>,
    /// Global Adamax step count (for bias correction).
    step: u64,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new(), step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: TensorBase<T>) {
        assert!(
            !self.entries.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let shape = value.shape().to_vec();
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                first_moment: TensorBase::zeros(&shape),
                inf_norm: TensorBase::zeros(&shape),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&TensorBase<T>> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut TensorBase<T>> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn advance_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Register a stored parameter value on a tape.
    pub fn bind(&self, tape: &mut Tape<T>, name: &str) -> Result<Var, TapeError> {
        let value = self
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .clone();
        tape.param(name, value)
    }

    /// Register every stored parameter on a tape, in name order.
    pub fn bind_all(&self, tape: &mut Tape<T>) -> Result<BTreeMap<String, Var>, TapeError> {
        let mut vars = BTreeMap::new();
        for (name, entry) in &self.entries {
            vars.insert(name.clone(), tape.param(name, entry.value.clone())?);
        }
        Ok(vars)
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

const MAGIC: &[u8; 8] = b"SGCAPCK1";

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_block<T: Scalar, W: Write>(w: &mut W, t: &TensorBase<T>) -> std::io::Result<()> {
    for v in t.data() {
        w.write_all(&v.to_f64_lossy().to_bits().to_le_bytes())?;
    }
    Ok(())
}

fn read_block<T: Scalar, R: Read>(
    r: &mut R,
    shape: &[usize],
) -> Result<TensorBase<T>, CheckpointError> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(T::from_f64_lossy(f64::from_bits(read_u64(r)?)));
    }
    TensorBase::from_vec(shape.to_vec(), data)
        .map_err(|e| CheckpointError::Format(e.to_string()))
}

/// Serialize a store plus caller metadata. Values travel as raw IEEE-754
/// bits, so a save/load cycle is bit-exact.
pub fn save_checkpoint<T: Scalar, M: Serialize, W: Write>(
    w: &mut W,
    store: &ParameterStore<T>,
    meta: &M,
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    let meta_bytes = serde_json::to_vec(meta)?;
    write_u32(w, meta_bytes.len() as u32)?;
    w.write_all(&meta_bytes)?;
    write_u64(w, store.step)?;
    write_u32(w, store.entries.len() as u32)?;
    for (name, entry) in &store.entries {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, entry.value.shape().len() as u32)?;
        for &d in entry.value.shape() {
            write_u64(w, d as u64)?;
        }
        write_block(w, &entry.value)?;
        write_block(w, &entry.first_moment)?;
        write_block(w, &entry.inf_norm)?;
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar, M: DeserializeOwned, R: Read>(
    r: &mut R,
) -> Result<(ParameterStore<T>, M), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format("bad magic".to_string()));
    }
    let meta_len = read_u32(r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta: M = serde_json::from_slice(&meta_bytes)?;
    let step = read_u64(r)?;
    let count = read_u32(r)? as usize;
    let mut store = ParameterStore::new();
    store.step = step;
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let value = read_block(r, &shape)?;
        let first_moment = read_block(r, &shape)?;
        let inf_norm = read_block(r, &shape)?;
        store
            .entries
            .insert(name, ParamEntry { value, first_moment, inf_norm });
    }
    Ok((store, meta))
}

pub fn save_checkpoint_file<T: Scalar, M: Serialize>(
    path: &Path,
    store: &ParameterStore<T>,
    meta: &M,
) -> Result<(), CheckpointError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_checkpoint(&mut file, store, meta)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint_file<T: Scalar, M: DeserializeOwned>(
    path: &Path,
) -> Result<(ParameterStore<T>, M), CheckpointError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    load_checkpoint(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut store: ParameterStore<f64> = ParameterStore::new();
        store.insert("w", TensorBase::matrix(2, 2, vec![0.1, -0.25, 1.0 / 3.0, 7e-13]).unwrap());
        store.insert("b", TensorBase::vector(vec![f64::MIN_POSITIVE, 1.5]));
        store.entry_mut("w").unwrap().first_moment =
            TensorBase::matrix(2, 2, vec![1e-9, 2e-9, 3e-9, 4e-9]).unwrap();
        store.step = 17;

        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &store, &serde_json::json!({"tag": "t"})).unwrap();
        let (loaded, meta): (ParameterStore<f64>, serde_json::Value) =
            load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, store);
        assert_eq!(meta["tag"], "t");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = b"NOTACKPT________".to_vec();
        let got: Result<(ParameterStore<f64>, serde_json::Value), _> =
            load_checkpoint(&mut buf.as_slice());
        assert!(matches!(got, Err(CheckpointError::Format(_))));
    }
}
