//! Model file: `PCCM` magic, u16 version, u32 D, u32 K, then K+1 network
//! blobs (u64 byte length + little-endian f32 parameters) and K centers of
//! 32 little-endian f32 each.

use std::fs;
use std::path::Path;

use super::{ModelError, NeuralModel};
use crate::boe::{BoECenters, DESCRIPTOR_LEN};

pub const MODEL_MAGIC: [u8; 4] = *b"PCCM";
pub const MODEL_VERSION: u16 = 1;

pub(super) fn to_bytes(model: &NeuralModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.pool_size() as u32).to_le_bytes());
    for net in model.networks() {
        out.extend_from_slice(&((net.len() * 4) as u64).to_le_bytes());
        for v in net {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for c in model.centers().centers() {
        for &v in c {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::File("unexpected end of file".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ModelError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| ModelError::File("blob too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub(super) fn from_bytes(buf: &[u8]) -> Result<NeuralModel, ModelError> {
    let mut r = Reader { buf };
    if r.take(4)? != MODEL_MAGIC {
        return Err(ModelError::File("bad magic".into()));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(ModelError::File(format!("unsupported version {version}")));
    }
    let dim = r.u32()? as usize;
    let k = r.u32()? as usize;
    if k > u8::MAX as usize - 1 {
        return Err(ModelError::File(format!("pool of {k} networks is too large")));
    }
    let mut networks = Vec::with_capacity(k + 1);
    for _ in 0..=k {
        let len = r.u64()?;
        if len % 4 != 0 || len > r.buf.len() as u64 {
            return Err(ModelError::File(format!("bad network blob length {len}")));
        }
        networks.push(r.f32s(len as usize / 4)?);
    }
    let mut centers = Vec::with_capacity(k);
    for _ in 0..k {
        let v = r.f32s(DESCRIPTOR_LEN)?;
        let mut c = [0.0; DESCRIPTOR_LEN];
        for (o, x) in c.iter_mut().zip(v) {
            *o = x as f64;
        }
        centers.push(c);
    }
    if !r.buf.is_empty() {
        return Err(ModelError::File(format!("{} trailing bytes", r.buf.len())));
    }
    NeuralModel::new(dim, networks, BoECenters::new(centers))
}

pub fn write_model(model: &NeuralModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<NeuralModel, ModelError> {
    from_bytes(&fs::read(path)?)
}

impl NeuralModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        to_bytes(self)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ModelError> {
        from_bytes(buf)
    }
}
