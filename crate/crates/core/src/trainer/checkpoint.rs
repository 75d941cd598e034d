//! Binary model snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CPRC"  u32 version  u32 len + model config (key=value text)
//! u8 flags (bit 0: optimizer moments, bit 1: vocabulary)
//! u32 count, then per distinct tensor:
//!     u32 id  u32 len + name  u32 ndim  u64 dims…  f64 values…
//!     [f64 first moment…  f64 second moment…  u64 step]
//! [u32 count, then per token: u32 len + utf-8  u64 frequency]
//! ```

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::model::{CpRec, ModelConfig, ModelError};

pub const MAGIC: [u8; 4] = *b"CPRC";
pub const VERSION: u32 = 1;

const FLAG_MOMENTS: u8 = 1;
const FLAG_VOCAB: u8 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("tensor '{name}' has shape {found:?}, config implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is malformed: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

/// A loaded model together with the vocabulary it was trained on, if saved.
pub struct Checkpoint {
    pub model: CpRec,
    pub vocab: Option<Vocabulary>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes every registry entry once; shared tensors are single entries.
pub fn write_checkpoint(model: &CpRec, vocab: Option<&Vocabulary>, with_moments: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &model.config().to_kv());
    let mut flags = 0;
    if with_moments {
        flags |= FLAG_MOMENTS;
    }
    if vocab.is_some() {
        flags |= FLAG_VOCAB;
    }
    out.push(flags);
    let store = model.store();
    put_u32(&mut out, store.len() as u32);
    for (id, param) in store.iter() {
        put_u32(&mut out, id.index() as u32);
        put_str(&mut out, &param.name);
        let shape = param.value.shape();
        put_u32(&mut out, shape.len() as u32);
        for &d in shape {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, param.value.data());
        if with_moments {
            put_f64s(&mut out, &param.first_moment);
            put_f64s(&mut out, &param.second_moment);
            put_u64(&mut out, param.step);
        }
    }
    if let Some(vocab) = vocab {
        put_u32(&mut out, vocab.len() as u32);
        for (token, &freq) in vocab.tokens().iter().zip(vocab.frequencies()) {
            put_str(&mut out, token);
            put_u64(&mut out, freq);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("string is not utf-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Rebuilds the model from its embedded config, then overwrites every tensor.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf: bytes };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config = ModelConfig::from_kv(&r.string()?)?;
    let mut model = CpRec::new(config)?;
    let flags = r.u8()?;
    if flags & !(FLAG_MOMENTS | FLAG_VOCAB) != 0 {
        return Err(CheckpointError::Corrupt(format!("unknown flags {flags:#x}")));
    }
    let count = r.u32()? as usize;
    let expected_ids: Vec<_> = model.store().ids().collect();
    if count != expected_ids.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{count} tensors stored, config implies {}",
            expected_ids.len()
        )));
    }
    for &id in &expected_ids {
        let stored_id = r.u32()? as usize;
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let param = model.store_mut().get_mut(id);
        if stored_id != id.index() || name != param.name {
            return Err(CheckpointError::Corrupt(format!(
                "tensor #{stored_id} '{name}' where #{} '{}' was expected",
                id.index(),
                param.name
            )));
        }
        if shape != param.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: param.value.shape().to_vec(),
                found: shape,
            });
        }
        let n = param.value.len();
        param.value.data_mut().copy_from_slice(&r.f64s(n)?);
        if flags & FLAG_MOMENTS != 0 {
            param.first_moment = r.f64s(n)?;
            param.second_moment = r.f64s(n)?;
            param.step = r.u64()?;
        }
    }
    let vocab = if flags & FLAG_VOCAB != 0 {
        let k = r.u32()? as usize;
        if k != model.num_items() {
            return Err(CheckpointError::Corrupt(format!(
                "vocabulary has {k} tokens, model has {} items",
                model.num_items()
            )));
        }
        let mut tokens = Vec::with_capacity(k);
        let mut freq = Vec::with_capacity(k);
        for _ in 0..k {
            tokens.push(r.string()?);
            freq.push(r.u64()?);
        }
        Some(Vocabulary::from_parts(tokens, freq))
    } else {
        None
    };
    if !r.buf.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(Checkpoint { model, vocab })
}

pub fn save_checkpoint(
    model: &CpRec,
    vocab: Option<&Vocabulary>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = write_checkpoint(model, vocab, true);
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    file.sync_all().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(&bytes)
}
