//! Incremental hierarchical topic model.
//!
//! Documents are inserted one at a time into a tree whose inner nodes are
//! topics and whose leaves are documents. An insert descends from the root,
//! following the most similar topic child while its centroid cosine reaches
//! `theta_new`; otherwise a new topic is opened for the document. At
//! `max_depth` topic levels the document is attached to the current topic.
//!
//! A [`ModelState`] is a value: cloning gives an independent copy and every
//! mutation goes through [`ModelState::edit`], which restores all invariants
//! (empty topics pruned, centroids recomputed, version bumped) on commit.

mod canonical;
mod edit;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, SparseVector, Vocabulary};

pub use edit::TreeEdit;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("document {0:?} is already in the tree")]
    DuplicateDocument(String),
    #[error("document {0:?} has an empty vector")]
    EmptyVector(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("node {0:?} is not a topic")]
    NotATopic(String),
    #[error("invalid canonical state: {0}")]
    InvalidCanonical(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid model state: {0}")]
pub struct ValidationError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn root() -> Self {
        Self("root".into())
    }

    /// Leaf ids are derived from document ids, so a leaf keeps its id when moved.
    pub fn leaf(doc_id: &str) -> Self {
        Self(format!("doc:{doc_id}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    Topic,
    DocLeaf,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Root => "root",
            NodeKind::Topic => "topic",
            NodeKind::DocLeaf => "doc_leaf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicNode {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub children: Vec<NodeId>,
    /// Present on the root and on topics.
    pub centroid: Option<SparseVector>,
    /// Present on document leaves.
    pub doc_id: Option<String>,
    pub created_at: u64,
    parent: Option<NodeId>,
}

impl TopicNode {
    pub fn parent(&self) -> Option<&NodeId> {
        self.parent.as_ref()
    }

    pub fn is_topic(&self) -> bool {
        self.kind == NodeKind::Topic
    }

    pub fn is_leaf(&self) -> bool {
        self.kind == NodeKind::DocLeaf
    }
}

/// Insertion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Minimum centroid cosine for descending into an existing topic.
    pub theta_new: f64,
    /// Maximum number of topic levels below the root.
    pub max_depth: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            theta_new: 0.3,
            max_depth: 3,
        }
    }
}

impl ModelParams {
    /// Apply `theta_new` / `max_depth` overrides from a parameter map.
    pub fn with_overrides(mut self, overrides: &BTreeMap<String, f64>) -> Self {
        if let Some(&t) = overrides.get("theta_new") {
            self.theta_new = t;
        }
        if let Some(&d) = overrides.get("max_depth") {
            self.max_depth = d.max(1.0) as usize;
        }
        self
    }
}

#[derive(Clone)]
pub struct ModelState {
    nodes: BTreeMap<NodeId, TopicNode>,
    root_id: NodeId,
    documents: BTreeMap<String, Arc<Document>>,
    buffer: VecDeque<Arc<Document>>,
    insert_cursor: usize,
    skipped: usize,
    ingested: usize,
    version: u64,
    vocab: Arc<Vocabulary>,
    digest: OnceLock<String>,
}

impl fmt::Debug for ModelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelState")
            .field("root_id", &self.root_id)
            .field("nodes", &self.nodes.len())
            .field("insert_cursor", &self.insert_cursor)
            .field("buffer", &self.buffer.len())
            .field("version", &self.version)
            .finish()
    }
}

impl ModelState {
    /// Empty tree with every corpus document pending in the buffer.
    pub fn new(corpus: &Corpus) -> Self {
        let mut state = Self::with_buffer(
            Arc::clone(corpus.stats.vocabulary()),
            corpus.documents.iter().cloned(),
        );
        state.skipped = corpus.warnings.len();
        state.ingested += corpus.warnings.len();
        state
    }

    pub fn with_buffer(vocab: Arc<Vocabulary>, docs: impl IntoIterator<Item = Arc<Document>>) -> Self {
        let buffer: VecDeque<Arc<Document>> = docs.into_iter().collect();
        let root_id = NodeId::root();
        let root = TopicNode {
            node_id: root_id.clone(),
            kind: NodeKind::Root,
            children: Vec::new(),
            centroid: Some(SparseVector::default()),
            doc_id: None,
            created_at: 0,
            parent: None,
        };
        Self {
            nodes: BTreeMap::from([(root_id.clone(), root)]),
            root_id,
            documents: BTreeMap::new(),
            ingested: buffer.len(),
            buffer,
            insert_cursor: 0,
            skipped: 0,
            version: 0,
            vocab,
            digest: OnceLock::new(),
        }
    }

    pub fn root_id(&self) -> &NodeId {
        &self.root_id
    }

    pub fn root(&self) -> &TopicNode {
        &self.nodes[&self.root_id]
    }

    pub fn node(&self, id: &str) -> Option<&TopicNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TopicNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicNode> {
        self.nodes.values().filter(|n| n.is_topic())
    }

    pub fn topic_count(&self) -> usize {
        self.topics().count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TopicNode> {
        self.nodes.values().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.documents.len()
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn insert_cursor(&self) -> usize {
        self.insert_cursor
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn buffer(&self) -> &VecDeque<Arc<Document>> {
        &self.buffer
    }

    pub fn document(&self, doc_id: &str) -> Option<&Arc<Document>> {
        self.documents.get(doc_id)
    }

    /// Ids of all documents in the tree, sorted.
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.documents.keys().map(String::as_str)
    }

    pub fn contains_document(&self, doc_id: &str) -> bool {
        self.documents.contains_key(doc_id)
    }

    /// Parent of the leaf holding `doc_id`.
    pub fn parent_of_doc(&self, doc_id: &str) -> Option<&NodeId> {
        self.nodes.get(NodeId::leaf(doc_id).as_str())?.parent()
    }

    /// Number of edges between the root and `id`.
    pub fn depth(&self, id: &str) -> usize {
        let mut depth = 0;
        let mut cur = self.nodes.get(id).and_then(|n| n.parent.as_ref());
        while let Some(p) = cur {
            depth += 1;
            cur = self.nodes[p].parent.as_ref();
        }
        depth
    }

    /// Document ids of all leaves below `id`, sorted.
    pub fn descendant_docs(&self, id: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            let Some(node) = self.nodes.get(cur) else { continue };
            if let Some(doc) = &node.doc_id {
                out.push(doc.as_str());
            }
            stack.extend(node.children.iter().map(NodeId::as_str));
        }
        out.sort_unstable();
        out
    }

    /// Document ids of the direct leaf children of `id`, sorted.
    pub fn direct_docs(&self, id: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .nodes
            .get(id)
            .map(|n| {
                n.children
                    .iter()
                    .filter_map(|c| self.nodes[c].doc_id.as_deref())
                    .collect()
            })
            .unwrap_or_default();
        out.sort_unstable();
        out
    }

    /// Topic children of `id`.
    pub fn topic_children(&self, id: &str) -> impl Iterator<Item = &TopicNode> {
        self.nodes
            .get(id)
            .into_iter()
            .flat_map(|n| n.children.iter())
            .map(|c| &self.nodes[c])
            .filter(|n| n.is_topic())
    }

    /// Cosine between a document and the centroid of topic (or root) `id`.
    pub fn similarity(&self, doc: &Document, id: &str) -> f64 {
        self.nodes
            .get(id)
            .and_then(|n| n.centroid.as_ref())
            .map(|c| doc.vector.cosine(c))
            .unwrap_or(0.0)
    }

    /// Run `f` against a mutable view of the tree, then restore invariants.
    /// The version is bumped only if `f` changed something.
    pub fn edit<R>(&mut self, f: impl FnOnce(&mut TreeEdit<'_>) -> R) -> R {
        let mut edit = TreeEdit::new(self);
        let out = f(&mut edit);
        edit.commit();
        out
    }

    /// Insert `doc` from the root. The document is taken out of the buffer
    /// if it is pending there.
    pub fn insert_document(&self, doc: Arc<Document>, params: &ModelParams) -> Result<ModelState, ModelError> {
        let mut next = self.clone();
        next.insert_document_mut(doc, params)?;
        Ok(next)
    }

    pub fn insert_document_mut(&mut self, doc: Arc<Document>, params: &ModelParams) -> Result<(), ModelError> {
        if self.documents.contains_key(&doc.id) {
            return Err(ModelError::DuplicateDocument(doc.id.clone()));
        }
        if doc.vector.is_empty() {
            return Err(ModelError::EmptyVector(doc.id.clone()));
        }
        self.edit(|e| e.insert_new(doc, params))
    }

    /// Insert the next buffered document. Returns its id, or `None` when the
    /// buffer is empty.
    pub fn insert_next(&mut self, params: &ModelParams) -> Result<Option<String>, ModelError> {
        let Some(doc) = self.buffer.front().cloned() else {
            return Ok(None);
        };
        let id = doc.id.clone();
        self.insert_document_mut(doc, params)?;
        Ok(Some(id))
    }

    /// Recompute the centroid of `id` and all of its ancestors from the leaves.
    pub fn recompute_centroids(&self, id: &str) -> Result<ModelState, ModelError> {
        if !self.nodes.contains_key(id) {
            return Err(ModelError::UnknownNode(id.to_string()));
        }
        let mut next = self.clone();
        let mut cur = Some(NodeId::from(id));
        while let Some(node) = cur {
            next.refresh_centroid(&node);
            cur = next.nodes[&node].parent.clone();
        }
        next.digest = OnceLock::new();
        Ok(next)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> &str {
        self.digest
            .get_or_init(|| canonical::digest_of(&self.canonical_json()))
    }

    /// Check every structural invariant. Tests run this after each mutation.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let err = |m: String| Err(ValidationError(m));
        let root = match self.nodes.get(&self.root_id) {
            Some(r) if r.kind == NodeKind::Root && r.parent.is_none() => r,
            _ => return err("root missing or malformed".into()),
        };
        // Reachability: every node exactly once, parents consistent.
        let mut seen = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            if !seen.insert(node.node_id.clone()) {
                return err(format!("node {} reached twice", node.node_id));
            }
            for c in &node.children {
                let Some(child) = self.nodes.get(c) else {
                    return err(format!("dangling child {c} of {}", node.node_id));
                };
                if child.parent.as_ref() != Some(&node.node_id) {
                    return err(format!("parent link of {c} disagrees with {}", node.node_id));
                }
                stack.push(child);
            }
        }
        if seen.len() != self.nodes.len() {
            return err(format!(
                "{} nodes unreachable from root",
                self.nodes.len() - seen.len()
            ));
        }
        let mut leaf_docs = BTreeSet::new();
        for node in self.nodes.values() {
            if node.node_id != self.root_id && node.kind == NodeKind::Root {
                return err(format!("second root {}", node.node_id));
            }
            match node.kind {
                NodeKind::DocLeaf => {
                    if !node.children.is_empty() {
                        return err(format!("leaf {} has children", node.node_id));
                    }
                    let Some(doc) = &node.doc_id else {
                        return err(format!("leaf {} without doc_id", node.node_id));
                    };
                    if node.node_id != NodeId::leaf(doc) {
                        return err(format!("leaf id {} does not match doc {doc}", node.node_id));
                    }
                    if !leaf_docs.insert(doc.clone()) {
                        return err(format!("document {doc} referenced twice"));
                    }
                }
                NodeKind::Topic | NodeKind::Root => {
                    if node.doc_id.is_some() {
                        return err(format!("inner node {} carries a doc_id", node.node_id));
                    }
                    let docs = self.descendant_docs(node.node_id.as_str());
                    if node.kind == NodeKind::Topic && docs.is_empty() {
                        return err(format!("topic {} has no documents", node.node_id));
                    }
                    let Some(centroid) = &node.centroid else {
                        return err(format!("inner node {} without centroid", node.node_id));
                    };
                    let expected = brute_force_centroid(docs.iter().map(|d| &self.documents[*d].vector));
                    let mut keys: BTreeSet<u32> = expected.keys().copied().collect();
                    keys.extend(centroid.entries().iter().map(|&(t, _)| t));
                    for t in keys {
                        let want = expected.get(&t).copied().unwrap_or(0.0);
                        if (centroid.weight(t) - want).abs() > 1e-6 {
                            return err(format!("centroid of {} off at term {t}", node.node_id));
                        }
                    }
                }
            }
        }
        let stored: BTreeSet<String> = self.documents.keys().cloned().collect();
        if stored != leaf_docs {
            return err("document table disagrees with leaves".into());
        }
        if self.buffer.iter().any(|d| self.documents.contains_key(&d.id)) {
            return err("buffered document already in tree".into());
        }
        if self.insert_cursor + self.buffer.len() + self.skipped != self.ingested {
            return err(format!(
                "cursor {} + buffer {} + skipped {} != ingested {}",
                self.insert_cursor,
                self.buffer.len(),
                self.skipped,
                self.ingested
            ));
        }
        if let Some(cached) = self.digest.get() {
            if *cached != canonical::digest_of(&self.canonical_json()) {
                return err("stale digest".into());
            }
        }
        Ok(())
    }

    fn refresh_centroid(&mut self, id: &NodeId) {
        let node = &self.nodes[id];
        if node.kind == NodeKind::DocLeaf {
            return;
        }
        let docs = self.descendant_docs(id.as_str());
        let centroid = crate::corpus::normalized_sum(
            docs.iter().map(|d| &self.documents[*d].vector),
            self.vocab.len(),
        );
        self.nodes.get_mut(id).expect("node exists").centroid = Some(centroid);
    }
}

/// Normalized mean via a term map. Independent of the dense accumulator the
/// tree uses, so `validate` cross-checks it.
fn brute_force_centroid<'a>(vectors: impl Iterator<Item = &'a SparseVector>) -> BTreeMap<u32, f64> {
    let mut sum: BTreeMap<u32, f64> = BTreeMap::new();
    for v in vectors {
        for &(t, w) in v.entries() {
            *sum.entry(t).or_default() += w;
        }
    }
    let norm = sum.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        sum.values_mut().for_each(|w| *w /= norm);
    }
    sum
}


#[cfg(test)]
mod tests {
    use super::test_support::corpus;
    use super::*;

    #[test]
    fn disjoint_documents_open_two_topics() {
        let c = corpus(&[("a", "rocket orbit launch"), ("b", "pitcher inning homer"), ("z", "filler words here")]);
        let mut s = ModelState::new(&c);
        let p = ModelParams::default();
        s.insert_next(&p).unwrap();
        s.insert_next(&p).unwrap();
        s.validate().unwrap();
        assert_eq!(s.topic_children("root").count(), 2);
        for t in s.topic_children("root") {
            assert_eq!(s.descendant_docs(t.node_id.as_str()).len(), 1);
        }
    }

    #[test]
    fn identical_documents_share_a_topic() {
        let c = corpus(&[("a", "rocket orbit launch"), ("b", "rocket orbit launch"), ("z", "pitcher inning homer")]);
        let mut s = ModelState::new(&c);
        let p = ModelParams::default();
        s.insert_next(&p).unwrap();
        s.insert_next(&p).unwrap();
        s.validate().unwrap();
        let tops: Vec<_> = s.topic_children("root").collect();
        assert_eq!(tops.len(), 1);
        assert_eq!(s.descendant_docs(tops[0].node_id.as_str()), vec!["a", "b"]);
    }

    #[test]
    fn duplicate_insert_is_an_error() {
        let c = corpus(&[("a", "rocket orbit launch"), ("z", "pitcher inning homer")]);
        let mut s = ModelState::new(&c);
        let doc = c.documents[0].clone();
        s.insert_document_mut(doc.clone(), &ModelParams::default()).unwrap();
        assert_eq!(
            s.insert_document_mut(doc, &ModelParams::default()),
            Err(ModelError::DuplicateDocument("a".into()))
        );
    }

    #[test]
    fn empty_vector_is_an_error() {
        let c = corpus(&[("a", "rocket orbit launch"), ("z", "pitcher inning homer")]);
        let s = ModelState::new(&c);
        let mut doc = (*c.documents[0]).clone();
        doc.id = "empty".into();
        doc.vector = SparseVector::default();
        assert_eq!(
            s.insert_document(Arc::new(doc), &ModelParams::default()).unwrap_err(),
            ModelError::EmptyVector("empty".into())
        );
    }

    #[test]
    fn depth_limit_attaches_to_current_topic() {
        let c = corpus(&[
            ("a", "rocket orbit launch"),
            ("b", "rocket orbit launch"),
            ("c", "rocket orbit launch"),
            ("d", "rocket orbit launch"),
            ("z", "pitcher inning homer"),
        ]);
        let mut s = ModelState::new(&c);
        let p = ModelParams {
            theta_new: 0.3,
            max_depth: 2,
        };
        for _ in 0..4 {
            s.insert_next(&p).unwrap();
        }
        s.validate().unwrap();
        let deepest_topic = s.topics().map(|t| s.depth(t.node_id.as_str())).max().unwrap();
        assert_eq!(deepest_topic, 2);
        assert_eq!(s.leaf_count(), 4);
    }

    #[test]
    fn single_leaf_topic_centroid_is_leaf_vector() {
        let c = corpus(&[("a", "rocket orbit launch"), ("z", "pitcher inning homer")]);
        let mut s = ModelState::new(&c);
        s.insert_next(&ModelParams::default()).unwrap();
        let topic = s.parent_of_doc("a").unwrap().clone();
        let centroid = s.node(topic.as_str()).unwrap().centroid.clone().unwrap();
        assert_eq!(centroid, c.documents[0].vector);
    }

    #[test]
    fn digest_tracks_changes() {
        let c = corpus(&[("a", "rocket orbit launch"), ("z", "pitcher inning homer")]);
        let mut s = ModelState::new(&c);
        let copy = s.clone();
        assert_eq!(s.digest(), copy.digest());
        s.insert_next(&ModelParams::default()).unwrap();
        assert_ne!(s.digest(), copy.digest());
        assert_eq!(s.digest().len(), 64);
    }

    #[test]
    fn recompute_unknown_node() {
        let c = corpus(&[("a", "rocket orbit launch"), ("z", "pitcher inning homer")]);
        let s = ModelState::new(&c);
        assert_eq!(
            s.recompute_centroids("nope").unwrap_err(),
            ModelError::UnknownNode("nope".into())
        );
    }
}
