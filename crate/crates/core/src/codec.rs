//! Canonical binary encoding.
//!
//! Every value that feeds a hash, a signature or the total message order is
//! encoded through [`Writer`]: fields in declaration order, integers as
//! fixed-width big-endian, byte strings and lists prefixed with a `u32`
//! length. The encoding is injective over each value domain and identical
//! across processes, which is what makes block references and interpretation
//! results comparable between independent servers.

use thiserror::Error;

/// Version byte prepended to versioned top-level encodings (block cores,
/// wire envelopes).
pub const ENCODING_VERSION: u8 = 1;

/// Upper bound on a single length-prefixed byte string accepted by [`Reader`].
pub const MAX_BYTES_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input: needed {needed} bytes, {remaining} remaining")]
    UnexpectedEnd { needed: usize, remaining: usize },
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("unsupported encoding version {0}")]
    BadVersion(u8),
    #[error("invalid {what} tag {tag:#04x}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("length {0} exceeds limit")]
    TooLong(usize),
}

/// Types with a canonical encoding.
pub trait Encode {
    fn encode_to(&self, w: &mut Writer);

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_to(&mut w);
        w.finish()
    }
}

/// Types that can be parsed back from their canonical encoding.
pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete value, rejecting trailing bytes.
    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

/// Canonical encoding of any encodable value.
pub fn canonical_encode<T: Encode + ?Sized>(value: &T) -> Vec<u8> {
    value.to_canonical_bytes()
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(u8::from(v))
    }

    /// Fixed-width bytes, no length prefix.
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(len_u32(bytes.len()));
        self.raw(bytes)
    }

    pub fn len_prefix(&mut self, len: usize) -> &mut Self {
        self.u32(len_u32(len))
    }

    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        self.len_prefix(items.len());
        for item in items {
            item.encode_to(self);
        }
        self
    }

    pub fn put<T: Encode + ?Sized>(&mut self, value: &T) -> &mut Self {
        value.encode_to(self);
        self
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

fn len_u32(len: usize) -> u32 {
    u32::try_from(len).expect("length exceeds u32 range")
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEnd {
                needed: n,
                remaining: self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::BadTag { what: "bool", tag }),
        }
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("N bytes"))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.u32()? as usize;
        if len > MAX_BYTES_LEN {
            return Err(DecodeError::TooLong(len));
        }
        Ok(self.take(len)?.to_vec())
    }

    /// Reads a list length and rejects counts that cannot possibly fit in
    /// the remaining input given each element needs at least `min_elem` bytes.
    pub fn list_len(&mut self, min_elem: usize) -> Result<usize, DecodeError> {
        let len = self.u32()? as usize;
        if len.saturating_mul(min_elem.max(1)) > self.remaining() {
            return Err(DecodeError::TooLong(len));
        }
        Ok(len)
    }

    pub fn list<T: Decode>(&mut self, min_elem: usize) -> Result<Vec<T>, DecodeError> {
        let len = self.list_len(min_elem)?;
        (0..len).map(|_| T::decode_from(self)).collect()
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

/// Serde helper: byte vectors as lowercase hex strings.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_big_endian_fixed_width() {
        let mut w = Writer::new();
        w.u32(1).u64(2);
        assert_eq!(w.finish(), vec![0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn bytes_are_length_prefixed() {
        let mut w = Writer::new();
        w.bytes(b"ab");
        let out = w.finish();
        assert_eq!(out, vec![0, 0, 0, 2, b'a', b'b']);
        let mut r = Reader::new(&out);
        assert_eq!(r.bytes().unwrap(), b"ab");
        r.finish().unwrap();
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut r = Reader::new(&[0, 0, 0, 5, 1]);
        assert!(matches!(
            r.bytes(),
            Err(DecodeError::UnexpectedEnd { needed: 5, remaining: 1 })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut r = Reader::new(&[1, 2]);
        r.u8().unwrap();
        assert_eq!(r.finish(), Err(DecodeError::TrailingBytes(1)));
    }

    #[test]
    fn absurd_list_lengths_are_rejected_before_allocation() {
        let mut r = Reader::new(&[0xff, 0xff, 0xff, 0xff]);
        assert!(matches!(r.list_len(32), Err(DecodeError::TooLong(_))));
    }
}
