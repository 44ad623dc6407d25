//! Binary checkpoint: magic, length-prefixed JSON header, then the parameter
//! buffer and both Adam moments as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, ModelState, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RDCKPT01";

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    step: u64,
    n_params: usize,
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], n: usize, offset: &mut usize) -> Result<Vec<f64>> {
    let end = *offset + n * 8;
    let chunk = bytes
        .get(*offset..end)
        .ok_or_else(|| Error::Checkpoint("truncated parameter data".into()))?;
    *offset = end;
    Ok(chunk
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn to_bytes(state: &ModelState) -> Result<Vec<u8>> {
    state.validate()?;
    let header = serde_json::to_vec(&Header {
        config: state.config.clone(),
        step: state.step,
        n_params: state.params.data.len(),
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + 24 * state.params.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    write_f64s(&mut out, &state.params.data);
    write_f64s(&mut out, &state.first_moment);
    write_f64s(&mut out, &state.second_moment);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_bytes = bytes
        .get(16..16 + header_len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    header.config.validate()?;
    let layout = header.config.layout();
    if header.n_params != layout.len() {
        return Err(Error::Shape(format!(
            "checkpoint holds {} parameters but its config implies {}",
            header.n_params,
            layout.len()
        )));
    }
    let mut offset = 16 + header_len;
    let data = read_f64s(bytes, layout.len(), &mut offset)?;
    let first_moment = read_f64s(bytes, layout.len(), &mut offset)?;
    let second_moment = read_f64s(bytes, layout.len(), &mut offset)?;
    if offset != bytes.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after parameter data".into(),
        ));
    }
    let state = ModelState {
        config: header.config,
        params: Params { layout, data },
        first_moment,
        second_moment,
        step: header.step,
    };
    state.validate()?;
    Ok(state)
}

/// Writes to `<path>.tmp` and renames, so a failed write never leaves a
/// partial checkpoint at `path`.
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
