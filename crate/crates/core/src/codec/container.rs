//! Byte layout of a coded cloud. See FORMAT.md for the full description.

use super::CodecError;
use crate::cloud::GridParams;
use crate::hierarchy::BASE_LEVEL;
use crate::morton::{Coord, MAX_BIT_DEPTH};

pub const MAGIC: [u8; 4] = *b"PCCG";
pub const VERSION: u8 = 1;
/// Levels deeper than this carry a network index byte.
pub const INDEXED_FROM: u32 = crate::boe::SHALLOW_MAX_LEVEL + 1;
const FIXED_HEADER: usize = 4 + 1 + 1 + 2 + 1 + 8 + 32 + 1;
const CRC_LEN: usize = 4;
const MAX_BASE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u8,
    pub bit_depth: u32,
    pub dim: u16,
    pub pool: u8,
    pub digest: [u8; 8],
    pub grid: GridParams,
    pub base: Vec<Coord>,
}

impl Header {
    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER + 3 * self.base.len()
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(self.bit_depth as u8);
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.push(self.pool);
        out.extend_from_slice(&self.digest);
        for v in self.grid.origin {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.grid.step.to_le_bytes());
        out.push(self.base.len() as u8);
        for c in &self.base {
            out.extend(c.iter().map(|&v| v as u8));
        }
    }
}

/// Index byte and the two stage payloads of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelEntry<'a> {
    pub level: u32,
    pub index: Option<u8>,
    pub stages: [&'a [u8]; 2],
}

pub fn write_level(out: &mut Vec<u8>, level: u32, index: u8, stages: [&[u8]; 2]) {
    if level >= INDEXED_FROM {
        out.push(index);
    }
    for s in stages {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s);
    }
}

pub fn seal(out: &mut Vec<u8>) {
    let crc = crc32fast::hash(out);
    out.extend_from_slice(&crc.to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::Truncated {
                needed: self.pos + n,
                have: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Splits a container into header and level entries, checking its framing
/// and CRC. Nothing is entropy-decoded here.
pub fn parse(buf: &[u8]) -> Result<(Header, Vec<LevelEntry<'_>>), CodecError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(CodecError::Version(version));
    }
    let bit_depth = c.u8()? as u32;
    if !(BASE_LEVEL..=MAX_BIT_DEPTH).contains(&bit_depth) {
        return Err(CodecError::Header(format!("bit-depth {bit_depth}")));
    }
    let dim = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    let pool = c.u8()?;
    let digest: [u8; 8] = c.take(8)?.try_into().unwrap();
    let origin = [c.f64()?, c.f64()?, c.f64()?];
    let step = c.f64()?;
    if origin.iter().any(|v| !v.is_finite()) || !(step > 0.0 && step.is_finite()) {
        return Err(CodecError::Header("bad grid parameters".into()));
    }
    let n = c.u8()? as usize;
    if n == 0 || n > MAX_BASE {
        return Err(CodecError::Header(format!("{n} base voxels")));
    }
    let mut base = Vec::with_capacity(n);
    for _ in 0..n {
        let b = c.take(3)?;
        base.push([b[0] as u32, b[1] as u32, b[2] as u32]);
    }
    let mut levels = Vec::with_capacity(bit_depth as usize);
    for level in BASE_LEVEL..bit_depth {
        let index = if level >= INDEXED_FROM { Some(c.u8()?) } else { None };
        let mut stages: [&[u8]; 2] = [&[], &[]];
        for s in &mut stages {
            let len = u32::from_le_bytes(c.take(4)?.try_into().unwrap()) as usize;
            *s = c.take(len)?;
        }
        levels.push(LevelEntry {
            level,
            index,
            stages,
        });
    }
    let body = c.pos;
    let stored = u32::from_le_bytes(c.take(CRC_LEN)?.try_into().unwrap());
    if c.pos != buf.len() {
        return Err(CodecError::Trailing(buf.len() - c.pos));
    }
    let computed = crc32fast::hash(&buf[..body]);
    if stored != computed {
        return Err(CodecError::Crc { stored, computed });
    }
    let header = Header {
        version,
        bit_depth,
        dim,
        pool,
        digest,
        grid: GridParams { origin, step },
        base,
    };
    Ok((header, levels))
}

/// Header of a well-formed container.
pub fn read_header(buf: &[u8]) -> Result<Header, CodecError> {
    parse(buf).map(|(h, _)| h)
}
