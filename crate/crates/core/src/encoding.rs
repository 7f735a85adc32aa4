//! Canonical field encoding.
//!
//! Every hashed, signed or transmitted structure is a sequence of fields,
//! each written as a 4-octet big-endian length followed by the field bytes.
//! Composite values are nested: the inner sequence becomes the bytes of a
//! single outer field. Integers are always 8-octet big-endian.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated field at depth {depth}")]
    Truncated { depth: usize },
    #[error("trailing bytes after last field")]
    Trailing,
    #[error("bad field width: expected {expected}, got {got}")]
    Width { expected: usize, got: usize },
    #[error("invalid utf-8 in text field")]
    Utf8,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
    #[error("field path {0:?} does not exist")]
    NoSuchPath(Vec<usize>),
}

/// Builder for a canonical field sequence.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("field longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.bytes(&[u8::from(v)])
    }

    /// Writes `value` as a single nested field.
    pub fn value<T: Encode + ?Sized>(&mut self, value: &T) -> &mut Self {
        let mut inner = Encoder::new();
        value.encode_fields(&mut inner);
        self.bytes(&inner.buf)
    }

    pub fn nested(&mut self, build: impl FnOnce(&mut Encoder)) -> &mut Self {
        let mut inner = Encoder::new();
        build(&mut inner);
        self.bytes(&inner.buf)
    }

    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        self.nested(|e| {
            for item in items {
                e.value(item);
            }
        })
    }

    pub fn option<T: Encode>(&mut self, item: Option<&T>) -> &mut Self {
        match item {
            Some(v) => self.value(v),
            None => self.bytes(&[]),
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub trait Encode {
    fn encode_fields(&self, enc: &mut Encoder);

    fn to_canonical(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_fields(&mut enc);
        enc.finish()
    }
}

pub trait Decode: Sized {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn from_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let v = Self::decode_fields(&mut dec)?;
        dec.finish()?;
        Ok(v)
    }
}

type Trace = Rc<RefCell<Vec<Vec<usize>>>>;

/// Reader over a canonical field sequence.
///
/// A decoder can optionally record the path of every leaf field it reads,
/// which is how field-level mutation targets are enumerated.
pub struct Decoder<'a> {
    rest: &'a [u8],
    next_index: usize,
    path: Vec<usize>,
    trace: Option<Trace>,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Decoder { rest: bytes, next_index: 0, path: Vec::new(), trace: None }
    }

    fn raw_field(&mut self) -> Result<&'a [u8], DecodeError> {
        let depth = self.path.len();
        if self.rest.len() < 4 {
            return Err(DecodeError::Truncated { depth });
        }
        let len = u32::from_be_bytes(self.rest[..4].try_into().unwrap()) as usize;
        if self.rest.len() - 4 < len {
            return Err(DecodeError::Truncated { depth });
        }
        let field = &self.rest[4..4 + len];
        self.rest = &self.rest[4 + len..];
        self.next_index += 1;
        Ok(field)
    }

    fn record_leaf(&self) {
        if let Some(trace) = &self.trace {
            let mut p = self.path.clone();
            p.push(self.next_index - 1);
            trace.borrow_mut().push(p);
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let f = self.raw_field()?;
        self.record_leaf();
        Ok(f)
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let f = self.bytes()?;
        f.try_into().map_err(|_| DecodeError::Width { expected: N, got: f.len() })
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.fixed::<8>()?))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.fixed::<1>()? {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(DecodeError::Invalid("boolean")),
        }
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let f = self.bytes()?;
        String::from_utf8(f.to_vec()).map_err(|_| DecodeError::Utf8)
    }

    /// Runs `read` over the contents of the next field as a nested sequence.
    pub fn nested<T>(
        &mut self,
        read: impl FnOnce(&mut Decoder<'a>) -> Result<T, DecodeError>,
    ) -> Result<T, DecodeError> {
        let field = self.raw_field()?;
        let mut path = self.path.clone();
        path.push(self.next_index - 1);
        let mut inner = Decoder { rest: field, next_index: 0, path, trace: self.trace.clone() };
        let v = read(&mut inner)?;
        inner.finish()?;
        Ok(v)
    }

    pub fn value<T: Decode>(&mut self) -> Result<T, DecodeError> {
        self.nested(T::decode_fields)
    }

    pub fn list<T: Decode>(&mut self) -> Result<Vec<T>, DecodeError> {
        self.nested(|d| {
            let mut out = Vec::new();
            while !d.is_empty() {
                out.push(d.value::<T>()?);
            }
            Ok(out)
        })
    }

    /// An empty field decodes to `None`; anything else is a nested `T`.
    pub fn option<T: Decode>(&mut self) -> Result<Option<T>, DecodeError> {
        let depth = self.path.len();
        if self.rest.len() >= 4 && self.rest[..4] == [0, 0, 0, 0] {
            self.raw_field()?;
            self.record_leaf();
            return Ok(None);
        }
        if self.rest.len() < 4 {
            return Err(DecodeError::Truncated { depth });
        }
        self.value().map(Some)
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Trailing)
        }
    }
}

/// Decodes `bytes` as `T` and returns the path of every leaf field read.
pub fn leaf_paths<T: Decode>(bytes: &[u8]) -> Result<Vec<Vec<usize>>, DecodeError> {
    let trace: Trace = Rc::new(RefCell::new(Vec::new()));
    let mut dec = Decoder::new(bytes);
    dec.trace = Some(trace.clone());
    T::decode_fields(&mut dec)?;
    dec.finish()?;
    let paths = trace.borrow().clone();
    Ok(paths)
}

/// Splits a byte string into its top-level fields, if it is exactly a
/// canonical field sequence.
pub fn split_fields(bytes: &[u8]) -> Result<Vec<&[u8]>, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let mut out = Vec::new();
    while !dec.is_empty() {
        out.push(dec.raw_field()?);
    }
    Ok(out)
}

pub fn join_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut enc = Encoder::new();
    for f in fields {
        enc.bytes(f);
    }
    enc.finish()
}

/// Replaces the field at `path` with `new`, re-encoding every enclosing
/// length prefix.
pub fn replace_field(bytes: &[u8], path: &[usize], new: &[u8]) -> Result<Vec<u8>, DecodeError> {
    let Some((&head, tail)) = path.split_first() else {
        return Ok(new.to_vec());
    };
    let fields = split_fields(bytes)?;
    let target = fields.get(head).ok_or_else(|| DecodeError::NoSuchPath(path.to_vec()))?;
    let replaced = if tail.is_empty() { new.to_vec() } else { replace_field(target, tail, new)? };
    let mut out: Vec<&[u8]> = fields.clone();
    out[head] = &replaced;
    Ok(join_fields(&out))
}

/// Reads the field at `path`.
pub fn field_at(bytes: &[u8], path: &[usize]) -> Result<Vec<u8>, DecodeError> {
    let mut cur = bytes.to_vec();
    for &i in path {
        let fields = split_fields(&cur)?;
        let f = fields.get(i).ok_or_else(|| DecodeError::NoSuchPath(path.to_vec()))?;
        cur = f.to_vec();
    }
    Ok(cur)
}

/// Flips the lowest bit of the last octet of the field at `path`; an empty
/// field becomes the single octet `0x01`.
pub fn flip_field(bytes: &[u8], path: &[usize]) -> Result<Vec<u8>, DecodeError> {
    let mut leaf = field_at(bytes, path)?;
    match leaf.last_mut() {
        Some(b) => *b ^= 0x01,
        None => leaf.push(0x01),
    }
    replace_field(bytes, path, &leaf)
}
