//! Little-endian binary encoding with a checksummed, versioned frame.
//!
//! Frame layout:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 8    | magic tag                     |
//! | 8      | 4    | format version, u32 LE        |
//! | 12     | 8    | body length, u64 LE           |
//! | 20     | 32   | SHA-256 of the body           |
//! | 52     | ...  | body                          |

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt data: {0}")]
    Corrupt(String),
}

const FRAME_HEADER: usize = 8 + 4 + 8 + 32;

pub fn frame(magic: &[u8; 8], version: u32, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER + body.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(body));
    out.extend_from_slice(body);
    out
}

/// Checks magic, version, length and checksum and returns the body.
pub fn unframe<'a>(magic: &[u8; 8], version: u32, bytes: &'a [u8]) -> Result<&'a [u8], FrameError> {
    if bytes.len() < FRAME_HEADER {
        return Err(FrameError::Corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(FrameError::Corrupt("bad magic tag".into()));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(FrameError::VersionMismatch {
            found,
            supported: version,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[FRAME_HEADER..];
    if body.len() as u64 != len {
        return Err(FrameError::Corrupt(format!("body is {} bytes, header says {len}", body.len())));
    }
    if Sha256::digest(body).as_slice() != &bytes[20..52] {
        return Err(FrameError::Corrupt("checksum mismatch".into()));
    }
    Ok(body)
}

#[derive(Debug, Default)]
pub struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        self.buf.reserve(8 * v.len());
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| FrameError::Corrupt(format!("need {n} bytes at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize, FrameError> {
        usize::try_from(self.u64()?).map_err(|_| FrameError::Corrupt("length overflows usize".into()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], FrameError> {
        let n = self.usize()?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<&'a str, FrameError> {
        std::str::from_utf8(self.bytes()?).map_err(|e| FrameError::Corrupt(e.to_string()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, FrameError> {
        let n = self.usize()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| FrameError::Corrupt("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<(), FrameError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(FrameError::Corrupt(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}
