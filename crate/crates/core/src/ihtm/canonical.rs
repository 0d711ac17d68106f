//! Canonical JSON form of a [`ModelState`] and its digest.
//!
//! Schema: `{"root_id", "nodes": [...], "insert_cursor", "version"}` where
//! nodes are listed depth-first from the root with children sorted by
//! `node_id`, and each node is
//! `{"node_id", "kind", "children", "centroid"?: {term: weight}, "doc_id"?, "created_at"}`.
//! Weights are written with 12 significant digits so the text (and the hash)
//! does not depend on the last bits of floating point sums.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ModelError, ModelState, NodeId, NodeKind, TopicNode};
use crate::corpus::{Corpus, SparseVector};

pub(super) fn digest_of(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn fmt_weight(w: f64) -> String {
    format!("{w:.11e}")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

impl ModelState {
    /// Canonical serialization used for digests, snapshots and replay.
    pub fn canonical_json(&self) -> String {
        let mut out = String::with_capacity(256 * self.nodes.len());
        let _ = write!(out, "{{\"root_id\":{},\"nodes\":[", json_str(self.root_id.as_str()));
        let mut stack = vec![&self.root_id];
        let mut first = true;
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if !first {
                out.push(',');
            }
            first = false;
            let mut children: Vec<&NodeId> = node.children.iter().collect();
            children.sort();
            let _ = write!(
                out,
                "{{\"node_id\":{},\"kind\":\"{}\",\"children\":[",
                json_str(node.node_id.as_str()),
                node.kind.as_str()
            );
            for (i, c) in children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&json_str(c.as_str()));
            }
            out.push(']');
            if let Some(centroid) = &node.centroid {
                out.push_str(",\"centroid\":{");
                for (i, &(t, w)) in centroid.entries().iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{}:{}", json_str(self.vocab.term(t)), fmt_weight(w));
                }
                out.push('}');
            }
            if let Some(doc) = &node.doc_id {
                let _ = write!(out, ",\"doc_id\":{}", json_str(doc));
            }
            let _ = write!(out, ",\"created_at\":{}}}", node.created_at);
            // Depth-first, smallest child first.
            stack.extend(children.into_iter().rev());
        }
        let _ = write!(
            out,
            "],\"insert_cursor\":{},\"version\":{}}}",
            self.insert_cursor, self.version
        );
        out
    }

    /// Rebuild a state from its canonical form. Leaf vectors and the pending
    /// buffer come from `corpus`, which must be the corpus the state was built on.
    pub fn from_canonical(json: &str, corpus: &Corpus) -> Result<ModelState, ModelError> {
        let bad = |m: &str| ModelError::InvalidCanonical(m.to_string());
        let value: Value = serde_json::from_str(json).map_err(|e| bad(&e.to_string()))?;
        let root_id = NodeId::new(value["root_id"].as_str().ok_or_else(|| bad("root_id"))?);
        let vocab = Arc::clone(corpus.stats.vocabulary());
        let mut nodes = BTreeMap::new();
        let mut documents = BTreeMap::new();
        for raw in value["nodes"].as_array().ok_or_else(|| bad("nodes"))? {
            let node_id = NodeId::new(raw["node_id"].as_str().ok_or_else(|| bad("node_id"))?);
            let kind = match raw["kind"].as_str() {
                Some("root") => NodeKind::Root,
                Some("topic") => NodeKind::Topic,
                Some("doc_leaf") => NodeKind::DocLeaf,
                _ => return Err(bad("kind")),
            };
            let children = raw["children"]
                .as_array()
                .ok_or_else(|| bad("children"))?
                .iter()
                .map(|c| c.as_str().map(NodeId::new).ok_or_else(|| bad("child id")))
                .collect::<Result<Vec<_>, _>>()?;
            let centroid = match raw.get("centroid") {
                Some(Value::Object(map)) => {
                    let mut entries = Vec::with_capacity(map.len());
                    for (term, w) in map {
                        let id = vocab.id(term).ok_or_else(|| bad(&format!("unknown term {term}")))?;
                        entries.push((id, w.as_f64().ok_or_else(|| bad("weight"))?));
                    }
                    Some(SparseVector::from_entries(entries))
                }
                Some(_) => return Err(bad("centroid")),
                None => None,
            };
            let doc_id = raw.get("doc_id").and_then(Value::as_str).map(str::to_string);
            if let Some(doc) = &doc_id {
                let stored = corpus
                    .get(doc)
                    .ok_or_else(|| ModelError::UnknownDocument(doc.clone()))?;
                documents.insert(doc.clone(), Arc::clone(stored));
            }
            let created_at = raw["created_at"].as_u64().ok_or_else(|| bad("created_at"))?;
            nodes.insert(
                node_id.clone(),
                TopicNode {
                    node_id,
                    kind,
                    children,
                    centroid,
                    doc_id,
                    created_at,
                    parent: None,
                },
            );
        }
        let links: Vec<(NodeId, NodeId)> = nodes
            .values()
            .flat_map(|n| n.children.iter().map(|c| (c.clone(), n.node_id.clone())))
            .collect();
        for (child, parent) in links {
            nodes
                .get_mut(&child)
                .ok_or_else(|| ModelError::UnknownNode(child.to_string()))?
                .parent = Some(parent);
        }
        let buffer: VecDeque<_> = corpus
            .documents
            .iter()
            .filter(|d| !documents.contains_key(&d.id))
            .cloned()
            .collect();
        let insert_cursor = value["insert_cursor"].as_u64().ok_or_else(|| bad("insert_cursor"))? as usize;
        if insert_cursor != documents.len() {
            return Err(bad("insert_cursor does not match the documents in the tree"));
        }
        let state = ModelState {
            nodes,
            root_id,
            ingested: insert_cursor + buffer.len() + corpus.warnings.len(),
            documents,
            buffer,
            insert_cursor,
            skipped: corpus.warnings.len(),
            version: value["version"].as_u64().ok_or_else(|| bad("version"))?,
            vocab,
            digest: OnceLock::new(),
        };
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::corpus;
    use super::super::ModelParams;
    use super::*;

    #[test]
    fn weights_use_twelve_significant_digits() {
        assert_eq!(fmt_weight(0.5), "5.00000000000e-1");
        assert_eq!(fmt_weight(1.0 / 3.0), "3.33333333333e-1");
    }

    #[test]
    fn canonical_json_is_valid_json_with_schema_fields() {
        let c = corpus(&[("a", "rocket orbit launch"), ("b", "pitcher inning homer"), ("z", "filler words here")]);
        let mut s = ModelState::new(&c);
        s.insert_next(&ModelParams::default()).unwrap();
        let v: Value = serde_json::from_str(&s.canonical_json()).unwrap();
        assert_eq!(v["root_id"], "root");
        assert_eq!(v["insert_cursor"], 1);
        assert_eq!(v["version"], 1);
        let nodes = v["nodes"].as_array().unwrap();
        assert_eq!(nodes.len(), 3);
        assert_eq!(nodes[0]["kind"], "root");
        assert_eq!(nodes[2]["kind"], "doc_leaf");
        assert_eq!(nodes[2]["doc_id"], "a");
    }

    #[test]
    fn reload_preserves_digest() {
        let c = corpus(&[
            ("a", "rocket orbit launch"),
            ("b", "pitcher inning homer"),
            ("c", "rocket orbit shuttle"),
            ("z", "filler words here"),
        ]);
        let mut s = ModelState::new(&c);
        for _ in 0..3 {
            s.insert_next(&ModelParams::default()).unwrap();
        }
        let reloaded = ModelState::from_canonical(&s.canonical_json(), &c).unwrap();
        reloaded.validate().unwrap();
        assert_eq!(reloaded.digest(), s.digest());
        assert_eq!(reloaded.buffer().len(), 1);
    }
}
