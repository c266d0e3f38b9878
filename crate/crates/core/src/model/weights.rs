//! `STEIN1` weight files: the magic bytes, a little-endian `u64` byte length,
//! a UTF-8 JSON manifest of `{name, shape, offset}` entries (offsets count
//! `f32` elements), then the raw little-endian `f32` values.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;

pub const MAGIC: &[u8; 6] = b"STEIN1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Serialise every parameter and buffer of `module`.
pub fn to_bytes<M: Module>(module: &M) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut values: Vec<f32> = Vec::new();
    module.visit_params(&mut |p| {
        manifest.push(ManifestEntry { name: p.name().to_string(), shape: p.shape().to_vec(), offset: values.len() });
        values.extend(p.value().data().iter().map(|&v| v as f32));
    });
    module.visit_buffers(&mut |b| {
        let data = b.get();
        manifest.push(ManifestEntry { name: b.name().to_string(), shape: vec![data.len()], offset: values.len() });
        values.extend(data.iter().map(|&v| v as f32));
    });
    let header = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn parse(bytes: &[u8]) -> Result<(Vec<ManifestEntry>, Vec<f64>)> {
    let bad = |m: &str| Error::data(format!("not a valid weight file: {m}"));
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing STEIN1 magic"));
    }
    let len_bytes: [u8; 8] = bytes[6..14].try_into().expect("eight bytes");
    let len = u64::from_le_bytes(len_bytes) as usize;
    let header = bytes.get(14..14 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_slice(header).map_err(|e| bad(&format!("manifest: {e}")))?;
    let body = &bytes[14 + len..];
    if body.len() % 4 != 0 {
        return Err(bad("value block is not a whole number of f32s"));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    for e in &manifest {
        let n: usize = e.shape.iter().product();
        if e.offset + n > values.len() {
            return Err(bad(&format!("{} runs past the value block", e.name)));
        }
    }
    Ok((manifest, values))
}

/// Load values into `module`, matching by name and shape.
pub fn from_bytes<M: Module>(module: &mut M, bytes: &[u8]) -> Result<()> {
    let (manifest, values) = parse(bytes)?;
    let mut by_name: HashMap<&str, &ManifestEntry> = manifest.iter().map(|e| (e.name.as_str(), e)).collect();
    let slice = |e: &ManifestEntry| values[e.offset..e.offset + e.shape.iter().product::<usize>()].to_vec();
    let mut err = None;
    module.visit_params_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match by_name.remove(p.name()) {
            Some(e) if e.shape == p.shape() => {
                if let Err(e2) = p.set_data(slice(e)) {
                    err = Some(e2);
                }
            }
            Some(e) => {
                err = Some(Error::data(format!(
                    "{} has shape {:?} in the file but {:?} in the model",
                    e.name,
                    e.shape,
                    p.shape()
                )))
            }
            None => err = Some(Error::data(format!("weight file lacks {}", p.name()))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut result = Ok(());
    module.visit_buffers(&mut |b| {
        if result.is_err() {
            return;
        }
        result = match by_name.remove(b.name()) {
            Some(e) if e.shape == [b.len()] => b.set(slice(e)),
            Some(e) => Err(Error::data(format!("{} has the wrong length", e.name))),
            None => Err(Error::data(format!("weight file lacks {}", b.name()))),
        };
    });
    result?;
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::data(format!("weight file has unexpected tensor {extra}")));
    }
    Ok(())
}

pub fn save<M: Module>(module: &M, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(module)?)?;
    Ok(())
}

pub fn load<M: Module>(module: &mut M, path: &Path) -> Result<()> {
    from_bytes(module, &std::fs::read(path)?)
}

/// Round every parameter and buffer to the nearest `f32`, so in-memory
/// values equal what a save/load round trip yields.
pub fn round_to_f32<M: Module>(module: &mut M) {
    module.visit_params_mut(&mut |p| {
        let data = p.value().data().iter().map(|&v| v as f32 as f64).collect();
        p.set_data(data).expect("same length");
    });
    module.visit_buffers(&mut |b| {
        let data = b.get().iter().map(|&v| v as f32 as f64).collect();
        b.set(data).expect("same length");
    });
}
