//! Checkpoint persistence.
//!
//! Layout: magic, a JSON header (caller-defined), the parameter block,
//! then the batch-norm state as JSON. Parameters are ordered binary
//! records `(name-length, name, rank, dims, little-endian f64 values)`.
//! A text sidecar `<file>.txt` lists names and shapes for inspection.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::model::BatchNormState;
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MQCKPT01";

pub fn save_checkpoint<H: Serialize>(
    path: &Path,
    header: &H,
    params: &ParamSet,
    bn: &BatchNormState,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);

    let header_json = serde_json::to_vec(header)?;
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);

    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let bn_json = serde_json::to_vec(bn)?;
    buf.extend_from_slice(&(bn_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&bn_json);

    fs::write(path, buf)?;

    let mut sidecar = String::new();
    for (name, tensor) in params.iter() {
        sidecar.push_str(&format!("{name} {:?}\n", tensor.shape()));
    }
    fs::write(path.with_extension("ckpt.txt"), sidecar)?;
    Ok(())
}

pub fn load_checkpoint<H: DeserializeOwned>(
    path: &Path,
) -> Result<(H, ParamSet, BatchNormState)> {
    let bytes = fs::read(path)?;
    let mut cursor = &bytes[..];

    let mut magic = [0u8; 8];
    read_exact(&mut cursor, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::integrity(format!("{}: not a checkpoint", path.display())));
    }

    let header_len = read_u32(&mut cursor, path)? as usize;
    let header_bytes = take(&mut cursor, header_len, path)?;
    let header: H = serde_json::from_slice(header_bytes)?;

    let n_entries = read_u32(&mut cursor, path)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_entries {
        let name_len = read_u32(&mut cursor, path)? as usize;
        let name = String::from_utf8(take(&mut cursor, name_len, path)?.to_vec())
            .map_err(|_| Error::integrity(format!("{}: bad name", path.display())))?;
        let rank = read_u32(&mut cursor, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim = [0u8; 8];
            read_exact(&mut cursor, &mut dim, path)?;
            shape.push(u64::from_le_bytes(dim) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v = [0u8; 8];
            read_exact(&mut cursor, &mut v, path)?;
            data.push(f64::from_le_bytes(v));
        }
        params.push(name, Tensor::new(shape, data)?);
    }

    let bn_len = read_u32(&mut cursor, path)? as usize;
    let bn: BatchNormState = serde_json::from_slice(take(&mut cursor, bn_len, path)?)?;
    Ok((header, params, bn))
}

fn read_exact(cursor: &mut &[u8], buf: &mut [u8], path: &Path) -> Result<()> {
    cursor
        .read_exact(buf)
        .map_err(|_| Error::integrity(format!("{}: truncated checkpoint", path.display())))
}

fn read_u32(cursor: &mut &[u8], path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(cursor, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn take<'a>(cursor: &mut &'a [u8], n: usize, path: &Path) -> Result<&'a [u8]> {
    if cursor.len() < n {
        return Err(Error::integrity(format!("{}: truncated checkpoint", path.display())));
    }
    let (head, tail) = cursor.split_at(n);
    *cursor = tail;
    Ok(head)
}
