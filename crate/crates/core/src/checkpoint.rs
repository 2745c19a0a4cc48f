//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "UWDCKPT\0"
//! version  u32
//! length   u64      payload length in bytes
//! payload  ...
//! sha256   32 bytes digest of the payload
//! ```
//!
//! The payload holds the run configuration and training state as TOML
//! text, followed by named `f32` blobs: every parameter under its own name
//! and its RMSProp mean-square state under `<name>#rms`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 8] = b"UWDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const RMS_SUFFIX: &str = "#rms";

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
    pub blobs: Vec<Blob>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8 text".into()))
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    /// Snapshots parameters and optimizer state of `bundle`.
    pub fn capture(config: &RunConfig, bundle: &ModelBundle<f32>, state: &TrainState) -> Self {
        let mut blobs = Vec::new();
        for p in bundle.params() {
            blobs.push(Blob {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                data: p.values(),
            });
            blobs.push(Blob {
                name: format!("{}{RMS_SUFFIX}", p.name()),
                shape: p.shape().to_vec(),
                data: p.optimizer_state().to_vec(),
            });
        }
        Checkpoint {
            config: config.clone(),
            state: state.clone(),
            blobs,
        }
    }

    /// Rebuilds the model and loads every parameter and optimizer state.
    pub fn restore(&self) -> Result<ModelBundle<f32>> {
        let mut bundle = ModelBundle::<f32>::new(&self.config.model, self.config.train.seed)?;
        let find = |name: &str| self.blobs.iter().find(|b| b.name == name);
        let expected = bundle.params().len() * 2;
        for p in bundle.params_mut() {
            for (name, is_rms) in [(p.name().to_string(), false), (format!("{}{RMS_SUFFIX}", p.name()), true)] {
                let blob = find(&name).ok_or_else(|| Error::Checkpoint(format!("missing blob {name}")))?;
                if blob.shape != p.shape() {
                    return Err(Error::Checkpoint(format!(
                        "blob {name} has shape {:?}, model expects {:?}",
                        blob.shape,
                        p.shape()
                    )));
                }
                if is_rms {
                    p.set_optimizer_state(&blob.data)?;
                } else {
                    p.set_values(&blob.data)?;
                }
            }
        }
        if self.blobs.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} blobs, model expects {expected}",
                self.blobs.len()
            )));
        }
        Ok(bundle)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        put_text(&mut payload, &self.config.to_toml());
        put_text(&mut payload, &self.state.to_toml());
        payload.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            put_text(&mut payload, &b.name);
            payload.push(b.shape.len() as u8);
            for &d in &b.shape {
                payload.extend_from_slice(&(d as u64).to_le_bytes());
            }
            payload.extend_from_slice(&(b.data.len() as u64).to_le_bytes());
            for v in &b.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(payload.len() + 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 20 + len + 32 {
            return Err(Error::Checkpoint("checkpoint length does not match its header".into()));
        }
        let payload = &bytes[20..20 + len];
        if Sha256::digest(payload).as_slice() != &bytes[20 + len..] {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: payload, pos: 0 };
        let config = RunConfig::from_toml(r.text()?)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let state = TrainState::from_toml(r.text()?)?;
        let count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.text()?.to_string();
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = r.u64()? as usize;
            if shape.iter().product::<usize>() != n {
                return Err(Error::Checkpoint(format!("blob {name}: shape {shape:?} does not hold {n} values")));
            }
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("blob too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            blobs.push(Blob { name, shape, data });
        }
        if r.pos != payload.len() {
            return Err(Error::Checkpoint("trailing bytes after the last blob".into()));
        }
        Ok(Checkpoint { config, state, blobs })
    }

    /// Writes atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
