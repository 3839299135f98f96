//! Little-endian byte-slice reading with offset-carrying errors, shared by
//! the dataset and model file parsers.

use crate::error::{Error, Result};

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Cursor<'a> {
        Cursor { bytes, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Read an `f64` and reject NaN/Inf.
    pub fn f64_finite(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite value in {what}")));
        }
        Ok(v)
    }

    /// Read `n` finite `f64`s. The remaining payload is checked before any
    /// allocation so a bogus header cannot trigger a huge reserve.
    pub fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        if (self.remaining() as u128) < n as u128 * 8 {
            return Err(Error::format(
                self.pos,
                format!("truncated while reading {what} ({n} values claimed)"),
            ));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64_finite(what)?);
        }
        Ok(out)
    }

    /// The parse must have consumed everything.
    pub fn finish(&self, what: &str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes after {what}", self.remaining()),
            ));
        }
        Ok(())
    }
}
