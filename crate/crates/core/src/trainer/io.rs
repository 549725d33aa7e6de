//! Binary model file.
//!
//! ```text
//! "RTMMODEL"  u32 version  u64 header_len  header (key=value lines, UTF-8)
//! u32 block_count
//!   per block: u32 name_len  name  u32 rank  u64 dims[rank]  f64 values (LE)
//! sha256 of everything above (32 bytes)
//! ```
//!
//! The header carries the full config (`config.*`), the feature manifest
//! hash, the embedding fingerprint, the training scalar type and free-form
//! `meta.*` entries. Blocks hold every named parameter plus the feature
//! scaler (`scaler.mean`, `scaler.std`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureScaler;
use crate::numkit::{Scalar, Tensor};

use super::{ModelConfig, ModelParams, ModelState};

const MAGIC: &[u8; 8] = b"RTMMODEL";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

fn scalar_name<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

/// Serializes `state` with extra `meta.*` header entries.
pub fn to_bytes<T: Scalar>(state: &ModelState<T>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut header = String::new();
    header.push_str(&format!("scalar={}\n", scalar_name::<T>()));
    header.push_str(&format!("manifest_hash={}\n", state.manifest_hash));
    header.push_str(&format!("embedding_fingerprint={}\n", state.embedding_fingerprint));
    for (k, v) in state.config.entries() {
        header.push_str(&format!("config.{k}={v}\n"));
    }
    for (k, v) in meta {
        let v = v.replace('\n', " ");
        header.push_str(&format!("meta.{k}={v}\n"));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());

    let named = state.params.named();
    let scaler_mean = Tensor::vector(state.scaler.mean.clone());
    let scaler_std = Tensor::vector(state.scaler.std.clone());
    out.extend_from_slice(&((named.len() + 2) as u32).to_le_bytes());
    let mut put = |name: &str, shape: &[usize], values: &mut dyn Iterator<Item = f64>| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in &named {
        put(name, t.shape(), &mut t.data().iter().map(|v| v.as_f64()));
    }
    put("scaler.mean", scaler_mean.shape(), &mut scaler_mean.data().iter().copied());
    put("scaler.std", scaler_std.shape(), &mut scaler_std.data().iter().copied());

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated model file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("length out of range"))
    }
}

/// A decoded model file.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel<T> {
    pub state: ModelState<T>,
    pub meta: BTreeMap<String, String>,
    /// Scalar type the model was trained in (`f32` or `f64`).
    pub trained_scalar: String,
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<SavedModel<T>> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a model file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file truncated or corrupted)"));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = r.len()?;
    let header = std::str::from_utf8(r.take(header_len)?).map_err(|_| bad("header is not UTF-8"))?;

    let mut config = ModelConfig::default();
    let mut manifest_hash = None;
    let mut fingerprint = None;
    let mut trained_scalar = None;
    let mut meta = BTreeMap::new();
    for line in header.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line `{line}`")))?;
        if let Some(key) = k.strip_prefix("config.") {
            config.set(key, v).map_err(|e| bad(e.to_string()))?;
        } else if let Some(key) = k.strip_prefix("meta.") {
            meta.insert(key.to_string(), v.to_string());
        } else {
            match k {
                "scalar" => trained_scalar = Some(v.to_string()),
                "manifest_hash" => manifest_hash = Some(v.to_string()),
                "embedding_fingerprint" => fingerprint = Some(v.to_string()),
                _ => return Err(bad(format!("unknown header key `{k}`"))),
            }
        }
    }
    let missing = |what: &str| bad(format!("header lacks {what}"));

    let count = r.u32()? as usize;
    let mut blocks: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| bad("block name is not UTF-8"))?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("block too large"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("block too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        blocks.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes after the last block"));
    }

    let vocab_shape = blocks.get("embeddings").map(|t| t.shape().to_vec());
    let mut params = ModelParams::<T>::zeros(&config, vocab_shape.as_deref())?;
    for (name, t) in params.named_mut() {
        let b = blocks.remove(&name).ok_or_else(|| bad(format!("missing block `{name}`")))?;
        if b.shape() != t.shape() {
            return Err(bad(format!("block `{name}` has shape {:?}, config implies {:?}", b.shape(), t.shape())));
        }
        *t = b.cast();
    }
    let mean = blocks.remove("scaler.mean").ok_or_else(|| bad("missing block `scaler.mean`"))?.into_data();
    let std = blocks.remove("scaler.std").ok_or_else(|| bad("missing block `scaler.std`"))?.into_data();
    if mean.len() != config.features || std.len() != config.features {
        return Err(bad("scaler width differs from the feature count"));
    }
    if let Some(extra) = blocks.keys().next() {
        return Err(bad(format!("unexpected block `{extra}`")));
    }
    Ok(SavedModel {
        state: ModelState {
            config,
            params,
            scaler: FeatureScaler { mean, std },
            manifest_hash: manifest_hash.ok_or_else(|| missing("manifest_hash"))?,
            embedding_fingerprint: fingerprint.ok_or_else(|| missing("embedding_fingerprint"))?,
        },
        meta,
        trained_scalar: trained_scalar.ok_or_else(|| missing("scalar"))?,
    })
}

/// Writes atomically (temporary file, then rename).
pub fn save_model<T: Scalar>(path: &Path, state: &ModelState<T>, meta: &BTreeMap<String, String>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(state, meta)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<SavedModel<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads and then requires the architecture to match `requested`.
pub fn load_compatible<T: Scalar>(path: &Path, requested: &ModelConfig) -> Result<SavedModel<T>> {
    let saved = load_model(path)?;
    saved.state.config.check_compatible(requested)?;
    Ok(saved)
}
