//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "DIFFMFCK" | version u8
//! config: u32 length + key = value text
//! u32 record count, then per record:
//!     u32 name length + name | 4 × u32 shape | f64 values
//! u8 optimizer flag; when 1: u64 step, f64 lr, β1, β2, ε,
//!     then first and second moments per record, in record order
//! u64 FNV-1a hash of every preceding byte
//! ```

use std::path::Path;

use super::config::ModelConfig;
use super::model::{build_model, Model};
use super::train::Adam;
use crate::error::{Error, Result};
use crate::tensor::{numel, Shape};

pub const MAGIC: &[u8; 8] = b"DIFFMFCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<Record>,
    pub adam: Option<Adam>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Integrity(format!("file truncated at byte {} while reading {what}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Integrity(format!("{what}: length overflow")))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Integrity(format!("{what} is not UTF-8")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field exceeds u32").to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn capture(model: &Model, adam: Option<&Adam>) -> Self {
        let params =
            model.store.iter().map(|p| Record { name: p.name.clone(), shape: p.shape, values: p.value.clone() }).collect();
        Checkpoint { config: model.config.clone(), params, adam: adam.cloned() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.push(VERSION);
        let text = self.config.to_text();
        put_u32(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.params.len());
        for r in &self.params {
            put_u32(&mut out, r.name.len());
            out.extend_from_slice(r.name.as_bytes());
            for d in r.shape {
                put_u32(&mut out, d);
            }
            put_f64s(&mut out, &r.values);
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.t.to_le_bytes());
                put_f64s(&mut out, &[a.lr, a.beta1, a.beta2, a.eps]);
                for (m, v) in a.m.iter().zip(&a.v) {
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
        }
        let hash = fnv1a(&out);
        out.extend_from_slice(&hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Integrity("not a checkpoint (bad magic)".into()));
        }
        let version = bytes[MAGIC.len()];
        if version != VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint version {version}; this build reads version {VERSION}"
            )));
        }
        if bytes.len() < MAGIC.len() + 9 {
            return Err(Error::Integrity(format!("file truncated at byte {}", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body).to_le_bytes() != tail {
            return Err(Error::Integrity("checksum mismatch (file is truncated or corrupt)".into()));
        }
        let mut r = Reader { bytes: body, pos: MAGIC.len() + 1 };
        let config = ModelConfig::parse(&r.string("config")?)?;
        let count = r.u32("record count")?;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let name = r.string(&format!("name of record {i}"))?;
            let mut shape = [0; 4];
            for d in &mut shape {
                *d = r.u32(&format!("shape of `{name}`"))?;
            }
            let values = r.f64s(numel(shape), &format!("values of `{name}`"))?;
            params.push(Record { name, shape, values });
        }
        let adam = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let t = r.u64("optimizer step")?;
                let h = r.f64s(4, "optimizer hyper-parameters")?;
                let mut m = Vec::with_capacity(params.len());
                let mut v = Vec::with_capacity(params.len());
                for p in &params {
                    m.push(r.f64s(p.values.len(), &format!("first moment of `{}`", p.name))?);
                    v.push(r.f64s(p.values.len(), &format!("second moment of `{}`", p.name))?);
                }
                Some(Adam { lr: h[0], beta1: h[1], beta2: h[2], eps: h[3], t, m, v })
            }
            f => return Err(Error::Integrity(format!("invalid optimizer flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Integrity(format!("{} unexpected bytes after the optimizer state", body.len() - r.pos)));
        }
        Ok(Checkpoint { config, params, adam })
    }

    /// Copies parameter values into `model`, which must have the same
    /// parameter names and shapes.
    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        if self.params.len() != model.store.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} parameter tensors, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for r in &self.params {
            let id = model
                .store
                .id(&r.name)
                .ok_or_else(|| Error::Shape(format!("parameter `{}` does not exist in this model", r.name)))?;
            let p = model.store.get_mut(id);
            if p.shape != r.shape {
                return Err(Error::Shape(format!(
                    "parameter `{}` has shape {:?} in the checkpoint but {:?} in the model",
                    r.name, r.shape, p.shape
                )));
            }
            p.value.clone_from(&r.values);
        }
        Ok(())
    }

    /// Rebuilds the model from the stored configuration.
    pub fn into_model(self) -> Result<(Model, Option<Adam>)> {
        let mut model = build_model(&self.config)?;
        self.restore_into(&mut model)?;
        // Record order follows the store, so optimizer moments line up by index.
        for (r, p) in self.params.iter().zip(model.store.iter()) {
            if r.name != p.name {
                return Err(Error::Integrity(format!("record `{}` out of order (expected `{}`)", r.name, p.name)));
            }
        }
        Ok((model, self.adam))
    }
}

pub fn save_checkpoint(model: &Model, adam: Option<&Adam>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, Checkpoint::capture(model, adam).to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| Error::in_file(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, Option<Adam>)> {
    let path = path.as_ref();
    read_checkpoint(path)?.into_model().map_err(|e| Error::in_file(path, e))
}
