//! Meta checkpoint layout, all little-endian:
//!
//! ```text
//! magic       8 bytes  "ASMGMETA"
//! version     u32
//! group map   u64      GroupMap::fingerprint
//! hidden      u64
//! k           u64
//! residual    u8
//! period      i64
//! groups      u64
//! omega       param_count x f64
//! has_store   u8
//! store tag   i64      only when has_store = 1
//! store len   u64
//! store       store len x f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{GroupMap, HiddenStateStore, MetaGeneratorParams};
use crate::error::{Error, Result};
use crate::model::{read_u32, read_u64};

const MAGIC: &[u8; 8] = b"ASMGMETA";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaCheckpoint {
    pub period: i64,
    pub meta: MetaGeneratorParams,
    pub store: Option<HiddenStateStore>,
}

pub fn encode_meta(map: &GroupMap, ckpt: &MetaCheckpoint) -> Vec<u8> {
    let meta = &ckpt.meta;
    let mut buf = Vec::with_capacity(64 + 8 * meta.omega().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&map.fingerprint().to_le_bytes());
    buf.extend_from_slice(&(meta.hidden as u64).to_le_bytes());
    buf.extend_from_slice(&(meta.k as u64).to_le_bytes());
    buf.push(u8::from(meta.residual));
    buf.extend_from_slice(&ckpt.period.to_le_bytes());
    buf.extend_from_slice(&(meta.n_groups() as u64).to_le_bytes());
    for v in meta.omega() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    match &ckpt.store {
        None => buf.push(0),
        Some(s) => {
            buf.push(1);
            buf.extend_from_slice(&s.tag.to_le_bytes());
            buf.extend_from_slice(&(s.h.len() as u64).to_le_bytes());
            for v in &s.h {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

fn read_u8(bytes: &mut &[u8]) -> Result<u8> {
    let mut b = [0u8; 1];
    bytes
        .read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated meta checkpoint".into()))?;
    Ok(b[0])
}

fn read_f64s(bytes: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if bytes.len() < n * 8 {
        return Err(Error::Checkpoint("truncated meta checkpoint".into()));
    }
    let (head, tail) = bytes.split_at(n * 8);
    *bytes = tail;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn decode_meta(map: &GroupMap, mut bytes: &[u8]) -> Result<MetaCheckpoint> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut magic = [0u8; 8];
    bytes
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a meta checkpoint".into()));
    }
    let version = read_u32(&mut bytes)?;
    if version != VERSION {
        return Err(bad(format!(
            "unsupported meta checkpoint version {version}"
        )));
    }
    if read_u64(&mut bytes)? != map.fingerprint() {
        return Err(bad(
            "meta checkpoint was written for a different group map".into()
        ));
    }
    let hidden = read_u64(&mut bytes)? as usize;
    let k = read_u64(&mut bytes)? as usize;
    let residual = read_u8(&mut bytes)? != 0;
    let period = read_u64(&mut bytes)? as i64;
    let n_groups = read_u64(&mut bytes)? as usize;
    if n_groups != map.len() {
        return Err(bad(format!(
            "checkpoint holds {n_groups} groups, map has {}",
            map.len()
        )));
    }
    let omega = read_f64s(
        &mut bytes,
        MetaGeneratorParams::param_count(n_groups, hidden),
    )?;
    let meta = MetaGeneratorParams::from_parts(hidden, k, residual, n_groups, omega)?;
    let store = match read_u8(&mut bytes)? {
        0 => None,
        1 => {
            let tag = read_u64(&mut bytes)? as i64;
            let len = read_u64(&mut bytes)? as usize;
            if len != map.n_coords() * hidden {
                return Err(bad(format!(
                    "hidden store holds {len} values, expected {}",
                    map.n_coords() * hidden
                )));
            }
            Some(HiddenStateStore {
                hidden,
                tag,
                h: read_f64s(&mut bytes, len)?,
            })
        }
        other => return Err(bad(format!("bad store flag {other}"))),
    };
    if !bytes.is_empty() {
        return Err(bad(format!("{} trailing bytes", bytes.len())));
    }
    Ok(MetaCheckpoint {
        period,
        meta,
        store,
    })
}

pub fn save_meta(path: &Path, map: &GroupMap, ckpt: &MetaCheckpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_meta(map, ckpt))?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_meta(path: &Path, map: &GroupMap) -> Result<MetaCheckpoint> {
    let bytes =
        fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_meta(map, &bytes)
}
