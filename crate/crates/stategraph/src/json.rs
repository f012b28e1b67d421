//! JSON forms for property values and state descriptors.
//!
//! The on-disk `state.json` is canonical text: object keys sorted (the
//! default serde_json map is ordered), floats rendered as the shortest
//! decimal that round-trips, hashes as 64-hex strings. Integers and
//! floats stay distinguishable because floats always render with a
//! fraction or exponent.

use std::collections::BTreeSet;

use serde_json::{Map as JsonMap, Number, Value};
use stategraph_core::{
    EncodeError, ParseHashError, PropertyMap, PropertyValue, RecipeDescriptor, RecipeNameError,
    StateDescriptor, StateHash,
};
use thiserror::Error;

/// Rejected conversion between property values and JSON.
#[derive(Debug, Error)]
pub enum JsonError {
    #[error("float {0} is not finite and has no decimal rendering")]
    NonFiniteFloat(f64),
    #[error("integer {0} exceeds the signed 64-bit property range")]
    IntegerOutOfRange(u64),
    #[error("unexpected JSON type for {0}")]
    UnexpectedType(&'static str),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("invalid state hash: {0}")]
    Hash(#[from] ParseHashError),
    #[error("invalid recipe name: {0}")]
    RecipeName(#[from] RecipeNameError),
    #[error("unencodable value: {0}")]
    Encode(#[from] EncodeError),
    #[error("malformed JSON: {0}")]
    Syntax(#[from] serde_json::Error),
}

pub fn property_to_json(value: &PropertyValue) -> Result<Value, JsonError> {
    Ok(match value {
        PropertyValue::Null => Value::Null,
        PropertyValue::Bool(b) => Value::Bool(*b),
        PropertyValue::Int(i) => Value::Number(Number::from(*i)),
        PropertyValue::Float(f) => {
            Value::Number(Number::from_f64(*f).ok_or(JsonError::NonFiniteFloat(*f))?)
        }
        PropertyValue::Str(s) => Value::String(s.clone()),
        PropertyValue::List(items) => Value::Array(
            items
                .iter()
                .map(property_to_json)
                .collect::<Result<_, _>>()?,
        ),
        PropertyValue::Map(map) => property_map_to_json(map)?,
    })
}

pub fn property_map_to_json(map: &PropertyMap) -> Result<Value, JsonError> {
    let mut obj = JsonMap::new();
    for (key, value) in map {
        obj.insert(key.clone(), property_to_json(value)?);
    }
    Ok(Value::Object(obj))
}

pub fn property_from_json(value: &Value) -> Result<PropertyValue, JsonError> {
    Ok(match value {
        Value::Null => PropertyValue::Null,
        Value::Bool(b) => PropertyValue::Bool(*b),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                PropertyValue::Int(i)
            } else if let Some(u) = n.as_u64() {
                return Err(JsonError::IntegerOutOfRange(u));
            } else {
                // serde_json only yields finite floats.
                PropertyValue::Float(n.as_f64().ok_or(JsonError::UnexpectedType("number"))?)
            }
        }
        Value::String(s) => PropertyValue::Str(s.clone()),
        Value::Array(items) => PropertyValue::List(
            items
                .iter()
                .map(property_from_json)
                .collect::<Result<_, _>>()?,
        ),
        Value::Object(_) => PropertyValue::Map(property_map_from_json(value)?),
    })
}

pub fn property_map_from_json(value: &Value) -> Result<PropertyMap, JsonError> {
    let obj = value
        .as_object()
        .ok_or(JsonError::UnexpectedType("property map"))?;
    let mut map = PropertyMap::new();
    for (key, value) in obj {
        map.insert(key.clone(), property_from_json(value)?);
    }
    Ok(map)
}

const DESCRIPTOR_FIELDS: [&str; 6] = [
    "hash",
    "nonhashed_attribute_names",
    "parent_hash",
    "properties",
    "recipe",
    "tags",
];

pub fn descriptor_to_json(descriptor: &StateDescriptor) -> Result<Value, JsonError> {
    let mut obj = JsonMap::new();
    obj.insert("hash".into(), Value::String(descriptor.hash.to_hex()));
    obj.insert(
        "nonhashed_attribute_names".into(),
        Value::Array(
            descriptor
                .nonhashed_attribute_names
                .iter()
                .map(|n| Value::String(n.clone()))
                .collect(),
        ),
    );
    obj.insert(
        "parent_hash".into(),
        descriptor
            .parent_hash
            .map_or(Value::Null, |h| Value::String(h.to_hex())),
    );
    obj.insert(
        "properties".into(),
        property_map_to_json(&descriptor.properties)?,
    );
    obj.insert(
        "recipe".into(),
        match &descriptor.recipe {
            None => Value::Null,
            Some(recipe) => {
                let mut r = JsonMap::new();
                r.insert("name".into(), Value::String(recipe.name().into()));
                r.insert("properties".into(), property_map_to_json(recipe.properties())?);
                Value::Object(r)
            }
        },
    );
    obj.insert(
        "tags".into(),
        Value::Array(
            descriptor
                .tags
                .iter()
                .map(|t| Value::String(t.clone()))
                .collect(),
        ),
    );
    Ok(Value::Object(obj))
}

/// The canonical `state.json` text: pretty-printed with sorted keys and
/// a trailing newline.
pub fn descriptor_to_canonical_string(descriptor: &StateDescriptor) -> Result<String, JsonError> {
    let mut text = serde_json::to_string_pretty(&descriptor_to_json(descriptor)?)?;
    text.push('\n');
    Ok(text)
}

pub fn descriptor_from_json_str(text: &str) -> Result<StateDescriptor, JsonError> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or(JsonError::UnexpectedType("state descriptor"))?;
    for key in obj.keys() {
        if !DESCRIPTOR_FIELDS.contains(&key.as_str()) {
            return Err(JsonError::UnknownField(key.clone()));
        }
    }
    let field = |name: &'static str| obj.get(name).ok_or(JsonError::MissingField(name));

    let hash = StateHash::from_hex(
        field("hash")?
            .as_str()
            .ok_or(JsonError::UnexpectedType("hash"))?,
    )?;
    let parent_hash = match field("parent_hash")? {
        Value::Null => None,
        Value::String(s) => Some(StateHash::from_hex(s)?),
        _ => return Err(JsonError::UnexpectedType("parent_hash")),
    };
    let recipe = match field("recipe")? {
        Value::Null => None,
        Value::Object(r) => {
            for key in r.keys() {
                if key != "name" && key != "properties" {
                    return Err(JsonError::UnknownField(key.clone()));
                }
            }
            let name = r
                .get("name")
                .ok_or(JsonError::MissingField("recipe.name"))?
                .as_str()
                .ok_or(JsonError::UnexpectedType("recipe.name"))?;
            let properties = property_map_from_json(
                r.get("properties")
                    .ok_or(JsonError::MissingField("recipe.properties"))?,
            )?;
            Some(RecipeDescriptor::new(name, properties)?)
        }
        _ => return Err(JsonError::UnexpectedType("recipe")),
    };
    let properties = property_map_from_json(field("properties")?)?;
    let nonhashed_attribute_names = field("nonhashed_attribute_names")?
        .as_array()
        .ok_or(JsonError::UnexpectedType("nonhashed_attribute_names"))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_owned)
                .ok_or(JsonError::UnexpectedType("attribute name"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let tags = field("tags")?
        .as_array()
        .ok_or(JsonError::UnexpectedType("tags"))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_owned)
                .ok_or(JsonError::UnexpectedType("tag"))
        })
        .collect::<Result<BTreeSet<_>, _>>()?;

    Ok(StateDescriptor {
        hash,
        parent_hash,
        recipe,
        properties,
        nonhashed_attribute_names,
        tags,
    })
}

/// Renders a property value compactly (for listings and `show` output).
pub fn property_to_display_string(value: &PropertyValue) -> Result<String, JsonError> {
    Ok(serde_json::to_string(&property_to_json(value)?)?)
}

/// Renders a property map compactly with sorted keys.
pub fn property_map_to_display_string(map: &PropertyMap) -> Result<String, JsonError> {
    Ok(serde_json::to_string(&property_map_to_json(map)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_descriptor() -> StateDescriptor {
        let mut props = PropertyMap::new();
        props.insert("lr".into(), PropertyValue::Float(0.1));
        props.insert("epochs".into(), PropertyValue::Int(200));
        props.insert("name".into(), PropertyValue::Str("demo".into()));
        props.insert(
            "nested".into(),
            PropertyValue::List(vec![PropertyValue::Null, PropertyValue::Bool(true)]),
        );
        StateDescriptor::root(
            props,
            vec!["weights".into()],
            BTreeSet::from(["root".into()]),
        )
        .unwrap()
    }

    #[test]
    fn descriptor_round_trips_exactly() {
        let descriptor = sample_descriptor();
        let text = descriptor_to_canonical_string(&descriptor).unwrap();
        let restored = descriptor_from_json_str(&text).unwrap();
        assert_eq!(restored, descriptor);
        assert!(restored.validate().is_empty());
    }

    #[test]
    fn canonical_text_is_sorted_and_newline_terminated() {
        let text = descriptor_to_canonical_string(&sample_descriptor()).unwrap();
        assert!(text.ends_with('\n'));
        let hash_pos = text.find("\"hash\"").unwrap();
        let parent_pos = text.find("\"parent_hash\"").unwrap();
        let tags_pos = text.find("\"tags\"").unwrap();
        assert!(hash_pos < parent_pos && parent_pos < tags_pos);
    }

    #[test]
    fn int_and_float_stay_distinguishable() {
        let int = property_to_json(&PropertyValue::Int(2)).unwrap();
        let float = property_to_json(&PropertyValue::Float(2.0)).unwrap();
        assert_eq!(serde_json::to_string(&int).unwrap(), "2");
        assert_eq!(serde_json::to_string(&float).unwrap(), "2.0");
        assert_eq!(
            property_from_json(&int).unwrap(),
            PropertyValue::Int(2)
        );
        assert_eq!(
            property_from_json(&float).unwrap(),
            PropertyValue::Float(2.0)
        );
    }

    #[test]
    fn shortest_round_trip_float_rendering() {
        let text = property_to_display_string(&PropertyValue::Float(0.1)).unwrap();
        assert_eq!(text, "0.1");
        let text = property_to_display_string(&PropertyValue::Float(1.0 / 3.0)).unwrap();
        assert_eq!(text.parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn non_finite_floats_are_rejected() {
        assert!(matches!(
            property_to_json(&PropertyValue::Float(f64::INFINITY)),
            Err(JsonError::NonFiniteFloat(_))
        ));
    }

    #[test]
    fn unknown_and_missing_fields_are_rejected() {
        let descriptor = sample_descriptor();
        let mut value = descriptor_to_json(&descriptor).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("extra".into(), Value::Null);
        let text = serde_json::to_string(&value).unwrap();
        assert!(matches!(
            descriptor_from_json_str(&text),
            Err(JsonError::UnknownField(_))
        ));

        let mut value = descriptor_to_json(&descriptor).unwrap();
        value.as_object_mut().unwrap().remove("tags");
        let text = serde_json::to_string(&value).unwrap();
        assert!(matches!(
            descriptor_from_json_str(&text),
            Err(JsonError::MissingField("tags"))
        ));
    }

    #[test]
    fn out_of_range_integer_is_rejected() {
        let text = r#"{"giant": 18446744073709551615}"#;
        let value: Value = serde_json::from_str(text).unwrap();
        assert!(matches!(
            property_map_from_json(&value),
            Err(JsonError::IntegerOutOfRange(_))
        ));
    }
}
