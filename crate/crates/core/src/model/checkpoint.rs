//! Base-model checkpoint: a fixed little-endian header followed by the raw
//! parameter vector.
//!
//! ```text
//! magic       8 bytes  "ASMGBASE"
//! version     u32
//! layout      u64      ModelLayout::fingerprint
//! period      i64
//! n           u64
//! theta       n x f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{BaseModelParams, ModelLayout};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ASMGBASE";
const VERSION: u32 = 1;

pub fn encode_checkpoint(layout: &ModelLayout, params: &BaseModelParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(36 + params.theta.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&layout.fingerprint().to_le_bytes());
    buf.extend_from_slice(&params.period.to_le_bytes());
    buf.extend_from_slice(&(params.theta.len() as u64).to_le_bytes());
    for v in &params.theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(layout: &ModelLayout, mut bytes: &[u8]) -> Result<BaseModelParams> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut magic = [0u8; 8];
    bytes
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a base-model checkpoint".into()));
    }
    let version = read_u32(&mut bytes)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let fingerprint = read_u64(&mut bytes)?;
    if fingerprint != layout.fingerprint() {
        return Err(bad("checkpoint was written for a different layout".into()));
    }
    let period = read_u64(&mut bytes)? as i64;
    let n = read_u64(&mut bytes)? as usize;
    if n != layout.n_params() {
        return Err(bad(format!(
            "checkpoint holds {n} parameters, layout needs {}",
            layout.n_params()
        )));
    }
    if bytes.len() != n * 8 {
        return Err(bad(format!(
            "expected {} payload bytes, found {}",
            n * 8,
            bytes.len()
        )));
    }
    let theta = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(BaseModelParams { theta, period })
}

pub fn save_checkpoint(path: &Path, layout: &ModelLayout, params: &BaseModelParams) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_checkpoint(layout, params))?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, layout: &ModelLayout) -> Result<BaseModelParams> {
    let bytes =
        fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(layout, &bytes)
}

pub(crate) fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    bytes
        .read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(bytes: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    bytes
        .read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}
