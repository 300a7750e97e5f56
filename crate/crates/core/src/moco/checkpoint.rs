//! Versioned binary checkpoint.
//!
//! ```text
//! magic      8 bytes  "TEMPCON\0"
//! version    u32 LE
//! meta_len   u64 LE, followed by meta_len bytes of JSON {"arch", "config"}
//! n_tensors  u32 LE
//! per tensor: name_len u32, name (UTF-8), ndim u32, dims u64 x ndim,
//!             payload f32 LE x prod(dims)
//! trailer    4 bytes  "END\0"
//! ```
//!
//! Query tensors are stored as `query.<name>`, key tensors as `key.<name>`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContrastiveConfig, EncoderState};
use crate::nn::{EncoderArch, Param, ParamSet};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TEMPCON\0";
const TRAILER: &[u8; 4] = b"END\0";
const MAX_META: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: EncoderState,
    pub config: ContrastiveConfig,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    arch: EncoderArch,
    config: ContrastiveConfig,
}

fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&Meta {
        arch: ckpt.state.arch.clone(),
        config: ckpt.config.clone(),
    })
    .expect("config serializes");
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    let tensors: Vec<(String, &Param)> = ckpt
        .state
        .query
        .iter()
        .map(|p| (format!("query.{}", p.name), p))
        .chain(ckpt.state.key.iter().map(|p| (format!("key.{}", p.name), p)))
        .collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, p) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for d in &p.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(TRAILER);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                line: 0,
                message: format!("checkpoint truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Incompatible("not a tempcon checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let meta_len = r.u64()?;
    if meta_len > MAX_META {
        return Err(Error::Incompatible("checkpoint metadata too large".into()));
    }
    let meta: Meta = serde_json::from_slice(r.take(meta_len as usize)?)
        .map_err(|e| Error::Incompatible(format!("checkpoint metadata: {e}")))?;
    meta.arch.validate()?;
    let n = r.u32()? as usize;
    let mut query = ParamSet::default();
    let mut key = ParamSet::default();
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Incompatible("tensor name is not UTF-8".into()))?
            .to_owned();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let bytes = r.take(count.checked_mul(4).ok_or_else(|| Error::Incompatible("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let (target, bare) = if let Some(s) = name.strip_prefix("query.") {
            (&mut query, s)
        } else if let Some(s) = name.strip_prefix("key.") {
            (&mut key, s)
        } else {
            return Err(Error::Incompatible(format!("unexpected tensor `{name}`")));
        };
        target.push(Param {
            name: bare.to_owned(),
            shape,
            data,
        });
    }
    if r.take(4)? != TRAILER || r.pos != buf.len() {
        return Err(Error::Format {
            line: 0,
            message: "checkpoint trailer missing or followed by extra bytes".into(),
        });
    }
    let expected = meta.arch.init_params(&mut crate::rng::seeded(0)).zeros_like();
    if !expected.same_layout(&query) || !expected.same_layout(&key) {
        return Err(Error::Incompatible(
            "checkpoint tensors do not match the recorded architecture".into(),
        ));
    }
    Ok(Checkpoint {
        state: EncoderState {
            arch: meta.arch,
            query,
            key,
        },
        config: meta.config,
    })
}

/// Writes to a sibling temporary file first, then renames into place.
pub fn checkpoint_save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let bytes = encode(ckpt);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
