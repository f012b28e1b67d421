//! DOT export of an experiment tree.
//!
//! Output is deterministic: node statements in ascending hash order,
//! followed by one edge statement per parent link in ascending child
//! order. Node labels carry the 8-character hash prefix plus the node's
//! sorted tags; edge labels carry the recipe name.

use alloc::string::String;

use crate::graph::{ExperimentGraph, GraphError};

impl ExperimentGraph {
    /// Renders the graph as DOT text. Fails if the structural invariants
    /// do not hold.
    pub fn to_dot(&self) -> Result<String, GraphError> {
        let violations = self.check_invariants();
        if !violations.is_empty() {
            return Err(GraphError::InvalidGraph(violations));
        }
        let mut out = String::from("digraph experiment {\n");
        for descriptor in self.nodes() {
            let mut label = descriptor.hash.prefix8();
            if !descriptor.tags.is_empty() {
                label.push_str("\\n");
                let mut first = true;
                for tag in &descriptor.tags {
                    if !first {
                        label.push(',');
                    }
                    first = false;
                    label.push_str(&escape(tag));
                }
            }
            out.push_str("  \"");
            out.push_str(&descriptor.hash.to_hex());
            out.push_str("\" [label=\"");
            out.push_str(&label);
            out.push_str("\"];\n");
        }
        for descriptor in self.nodes() {
            if let (Some(parent), Some(recipe)) = (&descriptor.parent_hash, &descriptor.recipe) {
                out.push_str("  \"");
                out.push_str(&parent.to_hex());
                out.push_str("\" -> \"");
                out.push_str(&descriptor.hash.to_hex());
                out.push_str("\" [label=\"");
                out.push_str(&escape(recipe.name()));
                out.push_str("\"];\n");
            }
        }
        out.push_str("}\n");
        Ok(out)
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            other => out.push(other),
        }
    }
    out
}
