//! State and recipe descriptors plus their integrity checks.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::hash::{hash_child, hash_root, StateHash};
use crate::value::{EncodeError, PropertyMap};

/// The value carried on a tree edge: a recipe type name plus the hashed
/// properties it was configured with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipeDescriptor {
    name: String,
    properties: PropertyMap,
}

impl RecipeDescriptor {
    /// Builds a descriptor, rejecting names that could not serve as plain
    /// identifiers (empty, path separators, control characters).
    pub fn new(
        name: impl Into<String>,
        properties: PropertyMap,
    ) -> Result<Self, RecipeNameError> {
        let name = name.into();
        if name.is_empty() {
            return Err(RecipeNameError::Empty);
        }
        for ch in name.chars() {
            if ch == '/' || ch == '\\' {
                return Err(RecipeNameError::PathSeparator);
            }
            if ch.is_control() {
                return Err(RecipeNameError::ControlCharacter);
            }
        }
        Ok(Self { name, properties })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn properties(&self) -> &PropertyMap {
        &self.properties
    }
}

/// Rejected recipe type name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecipeNameError {
    Empty,
    PathSeparator,
    ControlCharacter,
}

impl fmt::Display for RecipeNameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecipeNameError::Empty => write!(f, "recipe name is empty"),
            RecipeNameError::PathSeparator => write!(f, "recipe name contains a path separator"),
            RecipeNameError::ControlCharacter => {
                write!(f, "recipe name contains a control character")
            }
        }
    }
}

impl core::error::Error for RecipeNameError {}

/// One node of the experiment tree, as persisted and queried.
///
/// `parent_hash` and `recipe` are both absent exactly for the root. The
/// stored `hash` must always equal the recomputed content hash;
/// [`StateDescriptor::validate`] checks that along with the remaining
/// invariants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateDescriptor {
    pub hash: StateHash,
    pub parent_hash: Option<StateHash>,
    pub recipe: Option<RecipeDescriptor>,
    pub properties: PropertyMap,
    /// Names of payload blobs attached to this state; unique, sorted, and
    /// disjoint from property keys. These never enter the hash.
    pub nonhashed_attribute_names: Vec<String>,
    /// Free-form labels for analysis queries. These never enter the hash.
    pub tags: BTreeSet<String>,
}

impl StateDescriptor {
    /// Builds a root descriptor, computing its hash from `properties`.
    pub fn root(
        properties: PropertyMap,
        attribute_names: impl IntoIterator<Item = String>,
        tags: BTreeSet<String>,
    ) -> Result<Self, EncodeError> {
        let hash = hash_root(&properties)?;
        Ok(Self {
            hash,
            parent_hash: None,
            recipe: None,
            properties,
            nonhashed_attribute_names: normalize_names(attribute_names),
            tags,
        })
    }

    /// Builds a child descriptor, computing its hash from the parent hash
    /// and the recipe. `properties` are the child's full (post-overlay)
    /// properties; they are stored but do not enter the hash.
    pub fn child(
        parent_hash: StateHash,
        recipe: RecipeDescriptor,
        properties: PropertyMap,
        attribute_names: impl IntoIterator<Item = String>,
        tags: BTreeSet<String>,
    ) -> Result<Self, EncodeError> {
        let hash = hash_child(&parent_hash, &recipe)?;
        Ok(Self {
            hash,
            parent_hash: Some(parent_hash),
            recipe: Some(recipe),
            properties,
            nonhashed_attribute_names: normalize_names(attribute_names),
            tags,
        })
    }

    pub fn is_root(&self) -> bool {
        self.parent_hash.is_none()
    }

    pub fn recipe_name(&self) -> Option<&str> {
        self.recipe.as_ref().map(RecipeDescriptor::name)
    }

    /// Checks every descriptor invariant, including hash recomputation.
    /// Returns the full list of violations; empty means the descriptor is
    /// well formed.
    pub fn validate(&self) -> Vec<StateViolation> {
        let mut violations = Vec::new();
        match (&self.parent_hash, &self.recipe) {
            (None, Some(_)) => violations.push(StateViolation::OrphanRecipe),
            (Some(_), None) => violations.push(StateViolation::MissingRecipe),
            (Some(parent), Some(recipe)) => match hash_child(parent, recipe) {
                Ok(computed) if computed == self.hash => {}
                Ok(computed) => violations.push(StateViolation::HashMismatch {
                    stored: self.hash,
                    computed,
                }),
                Err(err) => violations.push(StateViolation::Unencodable(err)),
            },
            (None, None) => match hash_root(&self.properties) {
                Ok(computed) if computed == self.hash => {}
                Ok(computed) => violations.push(StateViolation::HashMismatch {
                    stored: self.hash,
                    computed,
                }),
                Err(err) => violations.push(StateViolation::Unencodable(err)),
            },
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for name in &self.nonhashed_attribute_names {
            if !seen.insert(name) {
                violations.push(StateViolation::DuplicateAttribute(name.clone()));
            }
            if self.properties.contains_key(name) {
                violations.push(StateViolation::AttributeShadowsProperty(name.clone()));
            }
        }
        violations
    }
}

fn normalize_names(names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut names: Vec<String> = names.into_iter().collect();
    names.sort();
    names.dedup();
    names
}

/// A broken [`StateDescriptor`] invariant. Violations are data, not
/// errors: integrity checks report all of them at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateViolation {
    HashMismatch {
        stored: StateHash,
        computed: StateHash,
    },
    /// Recipe present without a parent hash.
    OrphanRecipe,
    /// Parent hash present without a recipe.
    MissingRecipe,
    /// Hash recomputation impossible (NaN in hash-relevant properties).
    Unencodable(EncodeError),
    DuplicateAttribute(String),
    AttributeShadowsProperty(String),
}

impl fmt::Display for StateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateViolation::HashMismatch { stored, computed } => {
                write!(f, "hash-mismatch: stored {stored}, computed {computed}")
            }
            StateViolation::OrphanRecipe => {
                write!(f, "orphan-recipe: recipe present without a parent hash")
            }
            StateViolation::MissingRecipe => {
                write!(f, "missing-recipe: parent hash present without a recipe")
            }
            StateViolation::Unencodable(err) => write!(f, "unencodable-properties: {err}"),
            StateViolation::DuplicateAttribute(name) => {
                write!(f, "duplicate-attribute: {name:?}")
            }
            StateViolation::AttributeShadowsProperty(name) => {
                write!(f, "attribute-shadows-property: {name:?}")
            }
        }
    }
}
