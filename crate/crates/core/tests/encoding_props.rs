//! Property tests for the canonical encoding and the hash recursion.

use std::collections::HashSet;

use proptest::prelude::*;
use stategraph_core::{
    canonical_encode, hash_child, hash_root, PropertyMap, PropertyValue, RecipeDescriptor,
};

fn arb_value() -> impl Strategy<Value = PropertyValue> {
    let leaf = prop_oneof![
        Just(PropertyValue::Null),
        any::<bool>().prop_map(PropertyValue::Bool),
        any::<i64>().prop_map(PropertyValue::Int),
        any::<f64>()
            .prop_filter("NaN is not encodable", |f| !f.is_nan())
            .prop_map(PropertyValue::Float),
        "[a-z0-9 ]{0,12}".prop_map(PropertyValue::Str),
    ];
    leaf.prop_recursive(3, 32, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(PropertyValue::List),
            prop::collection::btree_map("[a-z]{0,6}", inner, 0..6).prop_map(PropertyValue::Map),
        ]
    })
}

fn arb_map() -> impl Strategy<Value = PropertyMap> {
    prop::collection::btree_map("[a-z]{1,8}", arb_value(), 0..6)
}

proptest! {
    /// Distinct values encode to distinct bytes; equal values encode equally.
    #[test]
    fn encoding_is_injective(a in arb_value(), b in arb_value()) {
        let ea = canonical_encode(&a).unwrap();
        let eb = canonical_encode(&b).unwrap();
        prop_assert_eq!(a == b, ea == eb);
    }

    /// Encoding a map is invariant under entry insertion order.
    #[test]
    fn map_encoding_is_insertion_order_invariant(map in arb_map()) {
        let entries: Vec<(String, PropertyValue)> = map.into_iter().collect();
        let forward: PropertyMap = entries.iter().cloned().collect();
        let reverse: PropertyMap = entries.iter().rev().cloned().collect();
        prop_assert_eq!(
            canonical_encode(&PropertyValue::Map(forward)).unwrap(),
            canonical_encode(&PropertyValue::Map(reverse)).unwrap()
        );
    }

    /// hash_root and hash_child are pure: equal inputs, byte-equal digests.
    #[test]
    fn hashes_are_stable(props in arb_map(), recipe_props in arb_map()) {
        let r1 = hash_root(&props).unwrap();
        let r2 = hash_root(&props.clone()).unwrap();
        prop_assert_eq!(r1, r2);
        let recipe = RecipeDescriptor::new("Step", recipe_props).unwrap();
        let c1 = hash_child(&r1, &recipe).unwrap();
        let c2 = hash_child(&r2, &recipe).unwrap();
        prop_assert_eq!(c1, c2);
        // Root and child digests colliding would mean a SHA-256 collision:
        // the domain prefixes keep their inputs byte-disjoint.
        prop_assert_ne!(r1, c1);
    }

    /// The same recipe applied under two different parents gives two
    /// different child hashes.
    #[test]
    fn child_hash_depends_on_parent(pa in arb_map(), pb in arb_map(), rp in arb_map()) {
        prop_assume!(pa != pb);
        let recipe = RecipeDescriptor::new("Step", rp).unwrap();
        let ha = hash_child(&hash_root(&pa).unwrap(), &recipe).unwrap();
        let hb = hash_child(&hash_root(&pb).unwrap(), &recipe).unwrap();
        prop_assert_ne!(ha, hb);
    }
}

/// Injectivity at desk scale: a generated corpus of more than 10^4
/// structurally distinct values must produce pairwise distinct encodings.
#[test]
fn corpus_of_ten_thousand_values_encodes_without_collision() {
    let mut corpus: Vec<PropertyValue> = Vec::new();
    for i in 0..3000i64 {
        corpus.push(PropertyValue::Int(i));
        corpus.push(PropertyValue::Float(i as f64 + 0.5));
        corpus.push(PropertyValue::Str(format!("s{i}")));
    }
    for i in 0..1500i64 {
        corpus.push(PropertyValue::List(vec![
            PropertyValue::Int(i),
            PropertyValue::Bool(i % 2 == 0),
        ]));
        let mut map = PropertyMap::new();
        map.insert("k".into(), PropertyValue::Int(i));
        corpus.push(PropertyValue::Map(map));
    }
    corpus.push(PropertyValue::Null);
    corpus.push(PropertyValue::Bool(false));
    corpus.push(PropertyValue::Bool(true));
    assert!(corpus.len() > 10_000);

    let encodings: HashSet<Vec<u8>> = corpus
        .iter()
        .map(|v| canonical_encode(v).unwrap())
        .collect();
    assert_eq!(encodings.len(), corpus.len());
}

/// Hashes react to any single-field perturbation of the property map.
#[test]
fn root_hash_is_sensitive_to_single_field_changes() {
    let mut base = PropertyMap::new();
    base.insert("alpha".into(), PropertyValue::Float(0.5));
    base.insert("beta".into(), PropertyValue::Int(7));
    base.insert("gamma".into(), PropertyValue::Str("g".into()));
    let base_hash = hash_root(&base).unwrap();

    for i in 0..2000i64 {
        for key in ["alpha", "beta", "gamma"] {
            let mut perturbed = base.clone();
            perturbed.insert(key.into(), PropertyValue::Int(1000 + i));
            assert_ne!(hash_root(&perturbed).unwrap(), base_hash, "{key} {i}");
        }
    }
}
