//! Versioned model checkpoint container: spec as structured text, then
//! named parameter tensors as little-endian f32 payloads.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::diffcore::Tensor;

use super::{Model, ModelError, ModelSpec};

const MAGIC: &[u8; 4] = b"MGCK";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("truncated checkpoint at offset {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint/spec mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated { offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec_text = model.spec().to_kv_string();
    out.extend_from_slice(&(spec_text.len() as u32).to_le_bytes());
    out.extend_from_slice(spec_text.as_bytes());
    let params = model.store().params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let value = p.value();
        out.push(value.rank() as u8);
        for &e in value.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Rebuild a model from a checkpoint. Every stored tensor must match a
/// parameter of the model the spec describes, by name and shape, and
/// every model parameter must be present.
pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, CheckpointError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let spec_len = r.u32()? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len)?)
        .map_err(|_| CheckpointError::Mismatch("spec text is not valid UTF-8".into()))?;
    let spec = ModelSpec::from_kv_str(spec_text)?;
    let model = Model::<f32>::new(&spec, 0)?;
    let n_params = r.u32()? as usize;
    if n_params != model.store().len() {
        return Err(CheckpointError::Mismatch(format!(
            "spec implies {} parameters, file stores {}",
            model.store().len(),
            n_params
        )));
    }
    let mut seen = vec![false; model.store().len()];
    for _ in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Mismatch("parameter name is not valid UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let idx = model
            .store()
            .params()
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("unknown parameter {name:?}")))?;
        let param = &model.store().params()[idx];
        if param.value().shape() != shape.as_slice() {
            return Err(CheckpointError::Mismatch(format!(
                "parameter {name:?}: spec shape {:?}, stored shape {:?}",
                param.value().shape(),
                shape
            )));
        }
        param.set_value(Tensor::new(shape, data).expect("extent product checked"));
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(CheckpointError::Mismatch(format!(
            "parameter {:?} missing from checkpoint",
            model.store().params()[i].name
        )));
    }
    Ok(model)
}
