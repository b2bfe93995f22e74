//! Training checkpoints.
//!
//! Layout: the 8-byte magic `FNCK0001`, a little-endian u64 manifest
//! length, the UTF-8 manifest, a u32 CRC32 of the manifest, then the tensor
//! blobs as little-endian IEEE-754 values. The manifest holds `key = value`
//! lines for the run configuration, step and generator state, and one
//! `blob = name, dtype, shape, offset, bytes, crc32` line per blob, offsets
//! counted from the first blob byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fngram_core::model::{ModelConfig, Parameters, ProphetModel};
use fngram_core::training::{AdamState, RngState, Trainer};
use fngram_core::{DType, Element, Tensor};

use crate::config_file::RunConfig;
use crate::error::{format_err, io_err, Result};

pub const MAGIC: &[u8; 4] = b"FNCK";
pub const VERSION: &[u8; 4] = b"0001";

struct Blob<'a, E> {
    name: String,
    shape: &'a [usize],
    data: &'a [E],
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// Serializes the full training state.
pub fn to_bytes<E: Element>(trainer: &Trainer<E>) -> Vec<u8> {
    let params = trainer.model.params();
    let mut blobs = Vec::new();
    for (name, t) in params.iter() {
        blobs.push(Blob { name: format!("param:{name}"), shape: t.shape(), data: t.data() });
    }
    for (prefix, moments) in [("adam.m", &trainer.optimizer.m), ("adam.v", &trainer.optimizer.v)] {
        for (name, data) in moments {
            let shape = params.get(name).map_or(&[][..], Tensor::shape);
            blobs.push(Blob { name: format!("{prefix}:{name}"), shape, data });
        }
    }

    let rng = RngState::capture(&trainer.rng);
    let mut manifest = format!("dtype = {}\nstep = {}\n", E::DTYPE.name(), trainer.optimizer.step);
    manifest += &format!("rng.seed = {}\nrng.stream = {}\nrng.word_pos = {}\n", hex(&rng.seed), rng.stream, rng.word_pos);
    let run = RunConfig::from_parts(trainer.model.config().clone(), trainer.settings.clone());
    for (k, v) in run.pairs() {
        if k != "gamma" {
            manifest += &format!("{k} = {v}\n");
        }
    }
    let mut payload = Vec::new();
    for b in &blobs {
        let offset = payload.len();
        for &x in b.data {
            x.write_le(&mut payload);
        }
        let bytes = &payload[offset..];
        let shape = b.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        manifest += &format!(
            "blob = {}, {}, {}, {}, {}, {:08x}\n",
            b.name,
            E::DTYPE.name(),
            shape,
            offset,
            bytes.len(),
            crc32fast::hash(bytes)
        );
    }

    let mut out = Vec::with_capacity(payload.len() + manifest.len() + 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(VERSION);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&crc32fast::hash(manifest.as_bytes()).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn save<E: Element>(path: &Path, trainer: &Trainer<E>) -> Result<()> {
    fs::write(path, to_bytes(trainer)).map_err(io_err(path))
}

struct BlobEntry {
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    crc: u32,
}

fn parse_blob_line(value: &str) -> Option<(String, BlobEntry)> {
    let f: Vec<&str> = value.split(", ").collect();
    if f.len() != 6 {
        return None;
    }
    let shape = f[2].split('x').map(|d| d.parse().ok()).collect::<Option<Vec<usize>>>()?;
    Some((
        f[0].to_string(),
        BlobEntry {
            dtype: DType::from_name(f[1])?,
            shape,
            offset: f[3].parse().ok()?,
            len: f[4].parse().ok()?,
            crc: u32::from_str_radix(f[5], 16).ok()?,
        },
    ))
}

/// Parses and verifies a checkpoint. Nothing is returned unless every
/// section checks out.
pub fn from_bytes<E: Element>(path: &Path, bytes: &[u8]) -> Result<Trainer<E>> {
    let fail = |section: &str, msg: &str| format_err(path, section, msg);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fail("magic", "not a checkpoint file"));
    }
    if &bytes[4..8] != VERSION {
        return Err(fail(
            "version",
            &format!(
                "format version {} is not supported (expected {})",
                String::from_utf8_lossy(&bytes[4..8]),
                String::from_utf8_lossy(VERSION)
            ),
        ));
    }
    let len_bytes = bytes.get(8..16).ok_or_else(|| fail("manifest", "truncated length"))?;
    let m_len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let m_end = 16usize.checked_add(m_len).filter(|&e| e + 4 <= bytes.len()).ok_or_else(|| fail("manifest", "truncated"))?;
    let manifest = &bytes[16..m_end];
    let crc = u32::from_le_bytes(bytes[m_end..m_end + 4].try_into().unwrap());
    if crc32fast::hash(manifest) != crc {
        return Err(fail("manifest", "checksum mismatch"));
    }
    let manifest = std::str::from_utf8(manifest).map_err(|_| fail("manifest", "not UTF-8"))?;
    let payload = &bytes[m_end + 4..];

    let mut run = RunConfig::default();
    let mut keys: BTreeMap<&str, &str> = BTreeMap::new();
    let mut blobs: Vec<(String, BlobEntry)> = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let section = format!("manifest line {}", i + 1);
        let (k, v) = line.split_once(" = ").ok_or_else(|| fail(&section, "expected key = value"))?;
        match k {
            "blob" => blobs.push(parse_blob_line(v).ok_or_else(|| fail(&section, "malformed blob entry"))?),
            "dtype" | "step" | "rng.seed" | "rng.stream" | "rng.word_pos" => {
                keys.insert(k, v);
            }
            _ => run.set(k, v).map_err(|m| fail(&section, &m))?,
        }
    }
    let key = |k: &str| keys.get(k).copied().ok_or_else(|| fail("manifest", &format!("missing {k}")));
    if key("dtype")? != E::DTYPE.name() {
        return Err(fail("manifest", &format!("stored as {}, requested {}", key("dtype")?, E::DTYPE.name())));
    }
    let step: u64 = key("step")?.parse().map_err(|_| fail("manifest", "bad step"))?;
    let rng = RngState {
        seed: unhex(key("rng.seed")?).ok_or_else(|| fail("manifest", "bad rng.seed"))?,
        stream: key("rng.stream")?.parse().map_err(|_| fail("manifest", "bad rng.stream"))?,
        word_pos: key("rng.word_pos")?.parse().map_err(|_| fail("manifest", "bad rng.word_pos"))?,
    };

    let mut params = Parameters::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    let mut end = 0;
    for (name, b) in blobs {
        let section = format!("blob {name}");
        let data = b
            .offset
            .checked_add(b.len)
            .and_then(|e| payload.get(b.offset..e))
            .ok_or_else(|| fail(&section, "truncated"))?;
        if crc32fast::hash(data) != b.crc {
            return Err(fail(&section, "checksum mismatch"));
        }
        let width = b.dtype.size_in_bytes();
        if b.dtype != E::DTYPE || data.len() % width != 0 {
            return Err(fail(&section, "dtype does not match the payload"));
        }
        let values: Vec<E> = data.chunks(width).map(E::read_le).collect();
        end = end.max(b.offset + b.len);
        let (kind, pname) = name.split_once(':').ok_or_else(|| fail(&section, "unnamed blob"))?;
        match kind {
            "param" => {
                let t = Tensor::new(b.shape, values).map_err(|e| fail(&section, &e.to_string()))?;
                params.insert(pname, t.with_requires_grad(true));
            }
            "adam.m" => {
                m.insert(pname.to_string(), values);
            }
            "adam.v" => {
                v.insert(pname.to_string(), values);
            }
            _ => return Err(fail(&section, "unknown blob kind")),
        }
    }
    if end != payload.len() {
        return Err(fail("payload", "trailing bytes after the last blob"));
    }
    let config: ModelConfig = run.model;
    let model = ProphetModel::from_parameters(config, params).map_err(|e| fail("parameters", &e.to_string()))?;
    for (name, data) in m.iter().chain(&v) {
        let expected = model.params().get(name).map(Tensor::numel);
        if expected != Some(data.len()) {
            return Err(fail(&format!("blob adam:{name}"), "does not match any parameter"));
        }
    }
    let mut trainer = Trainer::new(model, run.train);
    trainer.optimizer = AdamState { step, m, v };
    trainer.rng = rng.restore();
    Ok(trainer)
}

pub fn load<E: Element>(path: &Path) -> Result<Trainer<E>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    from_bytes(path, &bytes)
}
