//! State hashes and the recursive content-hash rule.
//!
//! Root and child hash inputs carry distinct ASCII domain prefixes, so a
//! root input can never byte-collide with a child input and a cross-kind
//! collision would require a SHA-256 collision outright.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::state::RecipeDescriptor;
use crate::value::{encode_map_into, encode_str_into, EncodeError, PropertyMap};

/// Domain prefix for root-state hash inputs.
pub const ROOT_DOMAIN_PREFIX: &[u8] = b"sg-root:";
/// Domain prefix for child-state hash inputs.
pub const CHILD_DOMAIN_PREFIX: &[u8] = b"sg-child:";

/// 32-byte content address of a state. Text form is 64 lowercase hex
/// characters; `Ord` follows digest bytes, which matches hex-text order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateHash([u8; 32]);

impl StateHash {
    pub const fn from_bytes(digest: [u8; 32]) -> Self {
        Self(digest)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight hex characters; the short handle used in logs and listings.
    pub fn prefix8(&self) -> String {
        hex::encode(&self.0[..4])
    }

    /// Parses the canonical text form: exactly 64 lowercase hex characters.
    pub fn from_hex(text: &str) -> Result<Self, ParseHashError> {
        let raw = text.as_bytes();
        if raw.len() != 64 {
            return Err(ParseHashError::Length(raw.len()));
        }
        let mut digest = [0u8; 32];
        for (i, pair) in raw.chunks_exact(2).enumerate() {
            digest[i] = (nibble(pair[0])? << 4) | nibble(pair[1])?;
        }
        Ok(Self(digest))
    }
}

fn nibble(c: u8) -> Result<u8, ParseHashError> {
    match c {
        b'0'..=b'9' => Ok(c - b'0'),
        b'a'..=b'f' => Ok(c - b'a' + 10),
        _ => Err(ParseHashError::NotLowercaseHex),
    }
}

impl fmt::Display for StateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for StateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateHash({})", self.to_hex())
    }
}

/// Rejected text form of a [`StateHash`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseHashError {
    Length(usize),
    NotLowercaseHex,
}

impl fmt::Display for ParseHashError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseHashError::Length(n) => write!(f, "expected 64 hex characters, got {n}"),
            ParseHashError::NotLowercaseHex => {
                write!(f, "expected lowercase hexadecimal characters")
            }
        }
    }
}

impl core::error::Error for ParseHashError {}

/// Hash of a root state: SHA-256 over the root domain prefix followed by
/// the canonical encoding of its properties.
pub fn hash_root(properties: &PropertyMap) -> Result<StateHash, EncodeError> {
    let mut buf = Vec::new();
    encode_map_into(properties, &mut buf)?;
    let mut hasher = Sha256::new();
    hasher.update(ROOT_DOMAIN_PREFIX);
    hasher.update(&buf);
    Ok(StateHash(hasher.finalize().into()))
}

/// Hash of a child state: SHA-256 over the child domain prefix, the
/// parent digest, and the canonical encodings of the recipe name and
/// recipe properties.
///
/// The child's own contents never enter the hash, so the hash is known
/// before the recipe runs; that is what makes cache lookup possible
/// ahead of computation.
pub fn hash_child(parent: &StateHash, recipe: &RecipeDescriptor) -> Result<StateHash, EncodeError> {
    let mut buf = Vec::new();
    encode_str_into(recipe.name(), &mut buf);
    encode_map_into(recipe.properties(), &mut buf)?;
    let mut hasher = Sha256::new();
    hasher.update(CHILD_DOMAIN_PREFIX);
    hasher.update(parent.as_bytes());
    hasher.update(&buf);
    Ok(StateHash(hasher.finalize().into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::PropertyValue;

    fn props(pairs: &[(&str, PropertyValue)]) -> PropertyMap {
        pairs
            .iter()
            .map(|(k, v)| ((*k).into(), v.clone()))
            .collect()
    }

    #[test]
    fn empty_root_matches_independent_oracle() {
        // SHA-256("sg-root:" ++ [0x4D, 0,0,0,0,0,0,0,0]), frozen from an
        // independent SHA-256 implementation.
        let hash = hash_root(&PropertyMap::new()).unwrap();
        assert_eq!(
            hash.to_hex(),
            "0e4b5b0efbcd722547b8d4e46c1d985b7e1fac83790a886a009e81a87045c0fd"
        );
    }

    #[test]
    fn root_hash_is_insertion_order_invariant() {
        let a = props(&[
            ("lr", PropertyValue::Float(0.1)),
            ("seed", PropertyValue::Int(42)),
        ]);
        let mut b = PropertyMap::new();
        b.insert("seed".into(), PropertyValue::Int(42));
        b.insert("lr".into(), PropertyValue::Float(0.1));
        assert_eq!(hash_root(&a).unwrap(), hash_root(&b).unwrap());
    }

    #[test]
    fn single_value_change_changes_root_hash() {
        let a = props(&[("lr", PropertyValue::Float(0.1))]);
        let b = props(&[("lr", PropertyValue::Float(0.01))]);
        assert_ne!(hash_root(&a).unwrap(), hash_root(&b).unwrap());
    }

    #[test]
    fn child_hash_is_deterministic_and_parent_sensitive() {
        let parent_a = hash_root(&PropertyMap::new()).unwrap();
        let parent_b = hash_root(&props(&[("seed", PropertyValue::Int(1))])).unwrap();
        let recipe =
            RecipeDescriptor::new("Train", props(&[("lr", PropertyValue::Float(0.1))])).unwrap();
        let h1 = hash_child(&parent_a, &recipe).unwrap();
        let h2 = hash_child(&parent_a, &recipe).unwrap();
        assert_eq!(h1, h2);
        assert_ne!(h1, hash_child(&parent_b, &recipe).unwrap());
    }

    #[test]
    fn sibling_recipes_with_different_properties_diverge() {
        let parent = hash_root(&PropertyMap::new()).unwrap();
        let fast =
            RecipeDescriptor::new("Train", props(&[("lr", PropertyValue::Float(0.1))])).unwrap();
        let slow =
            RecipeDescriptor::new("Train", props(&[("lr", PropertyValue::Float(0.01))])).unwrap();
        assert_ne!(
            hash_child(&parent, &fast).unwrap(),
            hash_child(&parent, &slow).unwrap()
        );
    }

    #[test]
    fn hex_round_trip_is_exact() {
        let hash = hash_root(&PropertyMap::new()).unwrap();
        let text = hash.to_hex();
        assert_eq!(StateHash::from_hex(&text).unwrap(), hash);
        assert_eq!(text.len(), 64);
        assert!(StateHash::from_hex(&text.to_uppercase()).is_err());
        assert!(StateHash::from_hex(&text[..62]).is_err());
    }

    #[test]
    fn domain_prefixes_are_distinct() {
        // Neither prefix is a prefix of the other, so root and child hash
        // inputs can never be byte-equal.
        assert!(!ROOT_DOMAIN_PREFIX.starts_with(CHILD_DOMAIN_PREFIX));
        assert!(!CHILD_DOMAIN_PREFIX.starts_with(ROOT_DOMAIN_PREFIX));
    }
}
