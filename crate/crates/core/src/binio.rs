//! Little-endian byte framing shared by the embedding, checkpoint and
//! ground-truth file formats.
//!
//! Section framing: one tag byte, a `u64` payload length, then the payload.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        vs.iter().for_each(|&v| self.f64(v));
    }

    pub fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        m.data().iter().for_each(|&v| self.f64(v));
    }

    pub fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }

    pub fn section(&mut self, tag: u8, payload: &[u8]) {
        self.u8(tag);
        self.u64(payload.len() as u64);
        self.bytes(payload);
    }
}

/// Cursor over a byte slice; every read is bounds-checked and reports the
/// offset at which data ran out.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "{}: truncated at byte offset {} (needed {n} more bytes, {} available)",
                self.what,
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.array()?);
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "{}: non-finite float before byte offset {}",
                self.what, self.pos
            )));
        }
        Ok(v)
    }

    /// A `u64` length that must fit in what is left of the buffer, given
    /// `unit` bytes per element.
    pub fn len_prefix(&mut self, unit: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()?;
        let fits = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(unit.max(1)))
            .is_some_and(|bytes| bytes <= self.remaining());
        if !fits {
            return Err(Error::Format(format!(
                "{}: length field {n} at byte offset {at} exceeds remaining data",
                self.what
            )));
        }
        Ok(n as usize)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.remaining()))
            .ok_or_else(|| {
                Error::Format(format!(
                    "{}: matrix {rows}x{cols} exceeds remaining data at byte offset {}",
                    self.what, self.pos
                ))
            })?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(rows, cols, data)
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.len_prefix(1)?;
        let at = self.pos;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| {
            Error::Format(format!("{}: invalid UTF-8 at byte offset {at}", self.what))
        })
    }

    /// Reads one `(tag, payload)` section.
    pub fn section(&mut self) -> Result<(u8, ByteReader<'a>)> {
        let tag = self.u8()?;
        let n = self.len_prefix(1)?;
        let what = self.what;
        Ok((tag, ByteReader::new(self.take(n)?, what)))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn expect_end(&self) -> Result<()> {
        if !self.is_empty() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes at byte offset {}",
                self.what,
                self.remaining(),
                self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_round_trip() {
        let mut inner = ByteWriter::new();
        inner.f64s(&[1.5, -2.0]);
        inner.string("héllo");
        let mut w = ByteWriter::new();
        w.bytes(b"TEST");
        w.section(7, &inner.into_bytes());
        let bytes = w.into_bytes();

        let mut r = ByteReader::new(&bytes, "test");
        r.expect_magic(b"TEST").unwrap();
        let (tag, mut s) = r.section().unwrap();
        assert_eq!(tag, 7);
        assert_eq!(s.f64s().unwrap(), vec![1.5, -2.0]);
        assert_eq!(s.string().unwrap(), "héllo");
        s.expect_end().unwrap();
        r.expect_end().unwrap();
    }

    #[test]
    fn oversized_length_is_rejected() {
        let mut w = ByteWriter::new();
        w.u64(1 << 40);
        let bytes = w.into_bytes();
        let mut r = ByteReader::new(&bytes, "test");
        let err = r.f64s().unwrap_err().to_string();
        assert!(err.contains("byte offset 0"), "{err}");
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = [1u8, 2, 3];
        let mut r = ByteReader::new(&bytes, "test");
        r.u16().unwrap();
        let err = r.u32().unwrap_err().to_string();
        assert!(err.contains("byte offset 2"), "{err}");
    }
}
