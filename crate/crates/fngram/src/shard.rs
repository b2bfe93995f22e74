//! Example shards: the magic `FNGRAM01`, then one record per example,
//! each a little-endian u32 length followed by that many u32 ids, source
//! first and target second.

use std::fs;
use std::path::Path;

use fngram_core::corpus::Example;

use crate::error::{format_err, io_err, Result};

pub const MAGIC: &[u8; 8] = b"FNGRAM01";

fn put_ids(out: &mut Vec<u8>, ids: &[u32]) {
    out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
}

pub fn encode(examples: &[Example]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for ex in examples {
        put_ids(&mut out, &ex.source);
        put_ids(&mut out, &ex.target);
    }
    out
}

pub fn write(path: &Path, examples: &[Example]) -> Result<()> {
    fs::write(path, encode(examples)).map_err(io_err(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Option<u32> {
        let b = self.bytes.get(self.pos..self.pos + 4)?;
        self.pos += 4;
        Some(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn ids(&mut self) -> Option<Vec<u32>> {
        let n = self.u32()? as usize;
        if self.bytes.len().saturating_sub(self.pos) / 4 < n {
            return None;
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Vec<Example>> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(format_err(path, "magic", "not an example shard"));
    }
    let mut r = Reader { bytes, pos: 8 };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let record = out.len();
        let source = r.ids().ok_or_else(|| format_err(path, format!("record {record}"), "truncated source"))?;
        let target = r.ids().ok_or_else(|| format_err(path, format!("record {record}"), "truncated target"))?;
        out.push(Example { source, target });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<Example>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(path, &bytes)
}
