//! Binary container: `u32` little-endian header length, a JSON header, then
//! little-endian `f32` payload values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_container<H: Serialize>(path: impl AsRef<Path>, header: &H, data: &[f32]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(4 + json.len() + 4 * data.len());
    buf.extend((json.len() as u32).to_le_bytes());
    buf.extend(&json);
    for v in data {
        buf.extend(v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_container<H: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::invalid("container is shorter than its length prefix"));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if bytes.len() < 4 + n {
        return Err(Error::invalid("container header is truncated"));
    }
    let header = serde_json::from_slice(&bytes[4..4 + n])?;
    let body = &bytes[4 + n..];
    if body.len() % 4 != 0 {
        return Err(Error::invalid("container payload is not a whole number of f32 values"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}
