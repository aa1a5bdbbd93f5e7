//! Binary checkpoints of model (and discriminator) parameters.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"WAVAECKP"  u32 version  u8 output-head  u8 disc-mode  u32 block-count
//! per block:   u16 name-len  name  u8 ndim  u64 dims[ndim]  f64 data[∏dims]
//! ```
//!
//! `disc-mode` is 0 (none), 1 (shared stack) or 2 (separate stacks).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::ssl::Discriminator;
use crate::vae::{ModelDims, ModelParams, OutputActivation, PARAM_NAMES};

pub const MAGIC: &[u8; 8] = b"WAVAECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub params: ModelParams<S>,
    pub disc: Option<Discriminator<S>>,
}

impl<S: Scalar> Checkpoint<S> {
    /// Errors naming both values when the stored shape differs from `expected`.
    pub fn check_dims(&self, expected: &ModelDims) -> Result<()> {
        let got = self.params.dims;
        for (name, have, want) in [
            ("input", got.input, expected.input),
            ("hidden", got.hidden, expected.hidden),
            ("latent", got.latent, expected.latent),
        ] {
            if have != want {
                return Err(Error::Checkpoint(format!(
                    "{name} dim mismatch: checkpoint has {have}, config expects {want}"
                )));
            }
        }
        Ok(())
    }
}

fn put_block<S: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<S>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.as_f64().to_le_bytes());
    }
}

pub fn encode<S: Scalar>(params: &ModelParams<S>, disc: Option<&Discriminator<S>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match params.output {
        OutputActivation::Linear => 0,
        OutputActivation::Sigmoid => 1,
    });
    out.push(match disc {
        None => 0,
        Some(d) if d.is_separate() => 2,
        Some(_) => 1,
    });
    let disc_names = disc.map(|d| d.names()).unwrap_or_default();
    let count = PARAM_NAMES.len() + disc_names.len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in PARAM_NAMES.iter().zip(params.tensors()) {
        put_block(&mut out, name, t);
    }
    if let Some(d) = disc {
        for (name, t) in disc_names.iter().zip(d.tensors()) {
            put_block(&mut out, name, t);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_block<S: Scalar>(c: &mut Cursor) -> Result<(String, Tensor<S>)> {
    let len = c.u16()? as usize;
    let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
    let ndim = c.u8()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(usize::try_from(c.u64()?).map_err(|_| Error::Checkpoint(format!("block `{name}` too large")))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= c.buf.len()))
        .ok_or_else(|| Error::Checkpoint(format!("block `{name}` has implausible shape {shape:?}")))?;
    let raw = c.take(n * 8)?;
    let data = raw
        .chunks_exact(8)
        .map(|b| S::of(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

pub fn decode<S: Scalar>(buf: &[u8]) -> Result<Checkpoint<S>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let output = match c.u8()? {
        0 => OutputActivation::Linear,
        1 => OutputActivation::Sigmoid,
        other => return Err(Error::Checkpoint(format!("unknown output head tag {other}"))),
    };
    let disc_mode = c.u8()?;
    if disc_mode > 2 {
        return Err(Error::Checkpoint(format!("unknown discriminator tag {disc_mode}")));
    }
    let count = c.u32()? as usize;
    if count < PARAM_NAMES.len() {
        return Err(Error::Checkpoint(format!("only {count} blocks")));
    }
    let mut model = Vec::with_capacity(PARAM_NAMES.len());
    for expected in PARAM_NAMES {
        let (name, t) = read_block::<S>(&mut c)?;
        if name != expected {
            return Err(Error::Checkpoint(format!("expected block `{expected}`, found `{name}`")));
        }
        model.push(t);
    }
    let mut disc_tensors = Vec::new();
    for _ in PARAM_NAMES.len()..count {
        disc_tensors.push(read_block::<S>(&mut c)?.1);
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    let dims = ModelDims {
        input: model[0].rows(),
        hidden: model[0].cols(),
        latent: model[2].cols(),
    };
    let params = ModelParams::from_tensors(dims, output, model).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let disc = match disc_mode {
        0 if disc_tensors.is_empty() => None,
        0 => return Err(Error::Checkpoint("discriminator blocks without a discriminator tag".into())),
        mode => {
            let stacks = usize::from(mode);
            let layers = disc_tensors.len() / (2 * stacks);
            Some(
                Discriminator::from_tensors(layers, mode == 2, disc_tensors)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            )
        }
    };
    Ok(Checkpoint { params, disc })
}

pub fn save<S: Scalar>(path: impl AsRef<Path>, params: &ModelParams<S>, disc: Option<&Discriminator<S>>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(params, disc);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<S>> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
