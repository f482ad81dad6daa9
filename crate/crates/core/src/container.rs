//! Little-endian binary container primitives shared by the feature, tag-store
//! and model file formats.
//!
//! Every container starts with an 8-byte magic string followed by a `u32`
//! version. Integers are `u64` unless noted, floats are IEEE-754 `f64`, strings
//! and float arrays are length-prefixed.

use crate::error::{Error, Result};

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Writer { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.buf.push(u8::from(v));
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Length-prefixed run of floats.
    pub fn f64s(&mut self, values: &[f64]) {
        self.usize(values.len());
        self.raw_f64s(values);
    }

    /// Floats with no length prefix; the reader must know the count.
    pub fn raw_f64s(&mut self, values: &[f64]) {
        self.buf.reserve(values.len() * 8);
        for v in values {
            self.f64(*v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version; returns the reader positioned after the header.
    pub fn open(bytes: &'a [u8], magic: &[u8; 8], supported: u32) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Container("file shorter than header".into()));
        }
        if &bytes[..8] != magic {
            return Err(Error::Container(format!(
                "bad magic: expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { bytes, pos: 8 };
        let found = r.u32()?;
        if found != supported {
            return Err(Error::Version { found, supported });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                Error::Container(format!(
                    "truncated: needed {n} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Container(format!("length {v} overflows")))
    }

    /// A length that will be used to allocate `elem_size`-byte items; rejected
    /// up front if the remaining bytes cannot possibly hold it.
    pub fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem_size) > self.remaining() {
            return Err(Error::Container(format!(
                "truncated: length {n} exceeds remaining {} bytes",
                self.remaining()
            )));
        }
        Ok(n)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Container(format!("invalid boolean byte {b}"))),
        }
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Container("string is not UTF-8".into()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        self.raw_f64s(n)
    }

    pub fn raw_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Container(format!("length {n} overflows"))
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    /// Fails if bytes are left over, so appended garbage is not silently accepted.
    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Container(format!(
                "{} trailing bytes after payload",
                self.remaining()
            )));
        }
        Ok(())
    }
}
