//! PLRD checkpoint container: magic, version, then named float32 records.
//!
//! Layout: "PLRD" | version u32 | record count u32, then per record
//! name length u16 | UTF-8 name | rank u32 | dims u32 each | f32 LE payload.

use crate::tensor::{ParamGroup, ParamStore, Real};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PLRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: not a PLRD checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    BadVersion { path: String, found: u32, expected: u32 },
    #[error("{path}: malformed record {index}: {msg}")]
    Malformed { path: String, index: usize, msg: String },
    #[error("checkpoint does not match architecture: {msg}")]
    ArchitectureMismatch { msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub payload: Vec<f32>,
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io);
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        let name = r.name.as_bytes();
        put(&(name.len() as u16).to_le_bytes())?;
        put(name)?;
        put(&(r.dims.len() as u32).to_le_bytes())?;
        for d in &r.dims {
            put(&d.to_le_bytes())?;
        }
        for v in &r.payload {
            put(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, CheckpointError> {
    let p = path.display().to_string();
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &p, 0)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: p });
    }
    let version = read_u32(&mut r, &p, 0)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion { path: p, found: version, expected: VERSION });
    }
    let count = read_u32(&mut r, &p, 0)? as usize;
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mut nl = [0u8; 2];
        read_exact(&mut r, &mut nl, &p, idx)?;
        let nlen = u16::from_le_bytes(nl) as usize;
        let mut name = vec![0u8; nlen];
        read_exact(&mut r, &mut name, &p, idx)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed {
            path: p.clone(),
            index: idx,
            msg: "record name is not UTF-8".into(),
        })?;
        let rank = read_u32(&mut r, &p, idx)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, &p, idx)?);
        }
        let numel: usize = dims.iter().map(|&d| d as usize).product();
        let mut payload = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b, &p, idx)?;
            payload.push(f32::from_le_bytes(b));
        }
        out.push(Record { name, dims, payload });
    }
    Ok(out)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &str, index: usize) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| CheckpointError::Malformed {
        path: path.to_string(),
        index,
        msg: format!("truncated: {e}"),
    })
}

fn read_u32<R: Read>(r: &mut R, path: &str, index: usize) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, index)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_params<T: Real>(path: &Path, store: &ParamStore<T>) -> Result<(), CheckpointError> {
    let records: Vec<Record> = store
        .iter()
        .map(|param| Record {
            name: param.name.clone(),
            dims: param.shape.iter().map(|&d| d as u32).collect(),
            payload: param.data.iter().map(|&v| Real::to_f64(v) as f32).collect(),
        })
        .collect();
    write_records(path, &records)
}

/// Load into an existing (already-constructed) parameter store; every record
/// must match a parameter of identical shape and vice versa.
pub fn load_params<T: Real>(path: &Path, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
    let records = read_records(path)?;
    if records.len() != store.len() {
        return Err(CheckpointError::ArchitectureMismatch {
            msg: format!("checkpoint has {} records, architecture has {} parameters", records.len(), store.len()),
        });
    }
    for rec in &records {
        let idx = store.index_of(&rec.name).ok_or_else(|| CheckpointError::ArchitectureMismatch {
            msg: format!("record {} has no matching parameter", rec.name),
        })?;
        let param = store.get_mut(idx);
        let dims: Vec<u32> = param.shape.iter().map(|&d| d as u32).collect();
        if dims != rec.dims {
            return Err(CheckpointError::ArchitectureMismatch {
                msg: format!("{}: checkpoint dims {:?} vs parameter dims {:?}", rec.name, rec.dims, dims),
            });
        }
        param.data = rec.payload.iter().map(|&v| T::from_f64(v as f64)).collect();
    }
    store.reset_momentum();
    Ok(())
}

/// Convenience: a store whose parameters are defined entirely by the file.
pub fn load_as_store(path: &Path) -> Result<ParamStore<f32>, CheckpointError> {
    let records = read_records(path)?;
    let mut store = ParamStore::new();
    for rec in records {
        let shape: Vec<usize> = rec.dims.iter().map(|&d| d as usize).collect();
        store.add(&rec.name, &shape, rec.payload, ParamGroup::Weights);
    }
    Ok(store)
}
