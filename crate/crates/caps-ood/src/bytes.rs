//! Little-endian cursor shared by the binary formats.

use crate::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    /// Checks the 4-byte magic and the version byte.
    pub fn header(&mut self, magic: &'static str, version: u8) -> Result<()> {
        if self.buf.len() >= 4 && &self.buf[..4] != magic.as_bytes() {
            let mut found = [0; 4];
            found.copy_from_slice(&self.buf[..4]);
            return Err(Error::BadMagic {
                expected: magic,
                found,
            });
        }
        self.take(4)?;
        let v = self.u8()?;
        if v != version {
            return Err(Error::UnsupportedVersion {
                format: magic,
                version: v,
            });
        }
        Ok(())
    }

    pub fn require(&self, bytes: u64) -> Result<()> {
        let have = (self.buf.len() - self.pos) as u64;
        if have < bytes {
            return Err(Error::TruncatedFile {
                expected: self.pos as u64 + bytes,
                actual: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n as u64)?;
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(overflow)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn f32s_as_f64(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.f32s(n)?.into_iter().map(f64::from).collect())
    }

    pub fn i32s(&mut self, n: usize) -> Result<Vec<i32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(overflow)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(overflow)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::InvalidHeader(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn overflow() -> Error {
    Error::InvalidHeader("declared sizes overflow".into())
}

/// Element count `a * b` from header fields, guarded against overflow.
pub(crate) fn checked_len(a: u64, b: u64) -> Result<usize> {
    a.checked_mul(b)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(overflow)
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_f64s_as_f32(out: &mut Vec<u8>, values: &[f64]) {
    put_f32s(out, values.iter().map(|&v| v as f32));
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
