//! Self-describing checkpoint container: magic, format version, a JSON
//! header describing the run and every tensor, then raw little-endian f64
//! payload in header order.

use crate::error::{Error, Result};
use crate::ssl::ParamMap;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MYLN";
const FORMAT_VERSION: u32 = 1;

/// Free-form run description stored alongside the tensors: model kind plus
/// string fields (method, epoch, seed, serialized encoder spec, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new(kind: impl Into<String>) -> Self {
        CheckpointMeta {
            kind: kind.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.fields.insert(key.into(), value.to_string());
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, counted in f64 elements.
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, tensors: &ParamMap) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, tensor) in tensors {
        let len = tensor.len() as u64;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            len,
        });
        offset += len;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        meta: meta.clone(),
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for tensor in tensors.values() {
        for &v in tensor.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamMap)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: too short for a checkpoint", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version} not supported (expected {FORMAT_VERSION})",
            path.display()
        )));
    }
    let mut header_len = [0u8; 8];
    r.read_exact(&mut header_len)?;
    let header_len = u64::from_le_bytes(header_len) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != version {
        return Err(Error::Checkpoint(format!(
            "{}: header/container version mismatch",
            path.display()
        )));
    }

    let mut expected = 0u64;
    for entry in &header.tensors {
        if entry.offset != expected {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {:?} at offset {} (expected {expected})",
                path.display(),
                entry.name,
                entry.offset
            )));
        }
        let count: usize = entry.shape.iter().product();
        if count as u64 != entry.len {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {:?} shape {:?} disagrees with len {}",
                path.display(),
                entry.name,
                entry.shape,
                entry.len
            )));
        }
        expected += entry.len;
    }

    let mut map = ParamMap::new();
    for entry in &header.tensors {
        let mut buf = vec![0u8; entry.len as usize * 8];
        r.read_exact(&mut buf).map_err(|_| {
            Error::Checkpoint(format!(
                "{}: payload truncated at tensor {:?}",
                path.display(),
                entry.name
            ))
        })?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let tensor = ArrayD::from_shape_vec(entry.shape.clone(), values)
            .map_err(|e| Error::Checkpoint(format!("tensor {:?}: {e}", entry.name)))?;
        map.insert(entry.name.clone(), tensor);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    Ok((header.meta, map))
}
