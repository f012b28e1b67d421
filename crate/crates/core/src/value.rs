//! Property values and their canonical byte encoding.
//!
//! Values are restricted to a small JSON-like algebra. The encoding is
//! deterministic and injective: every value kind gets a distinct tag
//! byte, variable-length payloads are length-prefixed, and map entries
//! are emitted in ascending raw-UTF-8 key order so insertion order never
//! leaks into a hash. Layout (all lengths 8-byte big-endian):
//!
//! ```text
//! Null  : 'N'
//! Bool  : 'B' byte(0|1)
//! Int   : 'I' i64 big-endian two's complement
//! Float : 'F' IEEE-754 bit pattern, big-endian
//! Str   : 'S' byte-length bytes
//! List  : 'L' count element...
//! Map   : 'M' count (key-as-Str value)...   entries sorted by key bytes
//! ```

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Map from UTF-8 keys to property values, ordered by raw key bytes.
pub type PropertyMap = BTreeMap<String, PropertyValue>;

const TAG_NULL: u8 = 0x4E; // 'N'
const TAG_BOOL: u8 = 0x42; // 'B'
const TAG_INT: u8 = 0x49; // 'I'
const TAG_FLOAT: u8 = 0x46; // 'F'
const TAG_STR: u8 = 0x53; // 'S'
const TAG_LIST: u8 = 0x4C; // 'L'
const TAG_MAP: u8 = 0x4D; // 'M'

/// A single hashed property value.
///
/// `Float` holds any IEEE-754 double except NaN: NaN != NaN would break
/// the equality semantics content addressing relies on, so
/// [`PropertyValue::float`] rejects it and the encoder refuses values
/// built around it directly. Floats compare by bit pattern here (`-0.0`
/// and `0.0` are distinct values with distinct encodings).
#[derive(Debug, Clone)]
pub enum PropertyValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<PropertyValue>),
    Map(PropertyMap),
}

impl PropertyValue {
    /// Checked float constructor; the one place NaN gets rejected.
    pub fn float(value: f64) -> Result<Self, EncodeError> {
        if value.is_nan() {
            Err(EncodeError::NanFloat)
        } else {
            Ok(Self::Float(value))
        }
    }
}

impl PartialEq for PropertyValue {
    fn eq(&self, other: &Self) -> bool {
        use PropertyValue::*;
        match (self, other) {
            (Null, Null) => true,
            (Bool(a), Bool(b)) => a == b,
            (Int(a), Int(b)) => a == b,
            // Bit equality keeps value equality aligned with encoding equality.
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (List(a), List(b)) => a == b,
            (Map(a), Map(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for PropertyValue {}

impl From<bool> for PropertyValue {
    fn from(value: bool) -> Self {
        Self::Bool(value)
    }
}

impl From<i64> for PropertyValue {
    fn from(value: i64) -> Self {
        Self::Int(value)
    }
}

impl From<&str> for PropertyValue {
    fn from(value: &str) -> Self {
        Self::Str(value.into())
    }
}

impl From<String> for PropertyValue {
    fn from(value: String) -> Self {
        Self::Str(value)
    }
}

/// Failure to canonically encode a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeError {
    /// NaN has no encoding with usable equality semantics.
    NanFloat,
}

impl fmt::Display for EncodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodeError::NanFloat => write!(f, "NaN float is not canonically encodable"),
        }
    }
}

impl core::error::Error for EncodeError {}

/// Encodes a value into fresh canonical bytes.
pub fn canonical_encode(value: &PropertyValue) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::new();
    encode_value_into(value, &mut out)?;
    Ok(out)
}

/// Appends the canonical encoding of `value` to `out`.
pub fn encode_value_into(value: &PropertyValue, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    match value {
        PropertyValue::Null => out.push(TAG_NULL),
        PropertyValue::Bool(b) => {
            out.push(TAG_BOOL);
            out.push(u8::from(*b));
        }
        PropertyValue::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&i.to_be_bytes());
        }
        PropertyValue::Float(f) => {
            if f.is_nan() {
                return Err(EncodeError::NanFloat);
            }
            out.push(TAG_FLOAT);
            out.extend_from_slice(&f.to_bits().to_be_bytes());
        }
        PropertyValue::Str(s) => encode_str_into(s, out),
        PropertyValue::List(items) => {
            out.push(TAG_LIST);
            out.extend_from_slice(&(items.len() as u64).to_be_bytes());
            for item in items {
                encode_value_into(item, out)?;
            }
        }
        PropertyValue::Map(map) => encode_map_into(map, out)?,
    }
    Ok(())
}

/// Appends the canonical `Str` encoding of `text` to `out`.
pub fn encode_str_into(text: &str, out: &mut Vec<u8>) {
    out.push(TAG_STR);
    out.extend_from_slice(&(text.len() as u64).to_be_bytes());
    out.extend_from_slice(text.as_bytes());
}

/// Appends the canonical `Map` encoding of `map` to `out`.
///
/// `BTreeMap` already iterates keys in ascending raw byte order, which is
/// exactly the entry order the encoding requires.
pub fn encode_map_into(map: &PropertyMap, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    out.push(TAG_MAP);
    out.extend_from_slice(&(map.len() as u64).to_be_bytes());
    for (key, value) in map {
        encode_str_into(key, out);
        encode_value_into(value, out)?;
    }
    Ok(())
}
