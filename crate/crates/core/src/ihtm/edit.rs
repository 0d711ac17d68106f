use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use super::{ModelError, ModelParams, ModelState, NodeId, NodeKind, TopicNode};
use crate::corpus::Document;

/// Mutable view of a [`ModelState`] handed out by [`ModelState::edit`].
///
/// Structural operations mark the nodes they touch. [`refresh`](Self::refresh)
/// prunes topics left without documents and recomputes stale centroids;
/// commit does the same and then bumps the version once. New topic ids are
/// `t{version}.{n}`, where `version` is the version the edit commits as.
pub struct TreeEdit<'a> {
    state: &'a mut ModelState,
    dirty: BTreeSet<NodeId>,
    detached: BTreeSet<String>,
    next_seq: u32,
    changed: bool,
}

impl<'a> TreeEdit<'a> {
    pub(super) fn new(state: &'a mut ModelState) -> Self {
        Self {
            state,
            dirty: BTreeSet::new(),
            detached: BTreeSet::new(),
            next_seq: 0,
            changed: false,
        }
    }

    /// Read access to the tree as it currently stands. Centroids of touched
    /// nodes are stale until the next [`refresh`](Self::refresh).
    pub fn state(&self) -> &ModelState {
        self.state
    }

    pub fn changed(&self) -> bool {
        self.changed
    }

    fn node(&self, id: &str) -> Result<&TopicNode, ModelError> {
        self.state
            .nodes
            .get(id)
            .ok_or_else(|| ModelError::UnknownNode(id.to_string()))
    }

    fn require_inner(&self, id: &str) -> Result<(), ModelError> {
        match self.node(id)?.kind {
            NodeKind::DocLeaf => Err(ModelError::NotATopic(id.to_string())),
            _ => Ok(()),
        }
    }

    fn touch(&mut self) {
        if !self.changed {
            self.changed = true;
            self.state.digest = OnceLock::new();
        }
    }

    fn link(&mut self, child: &NodeId, parent: &NodeId) {
        self.state.nodes.get_mut(parent).expect("parent").children.push(child.clone());
        self.state.nodes.get_mut(child).expect("child").parent = Some(parent.clone());
        self.dirty.insert(parent.clone());
    }

    fn unlink(&mut self, child: &NodeId) -> Option<NodeId> {
        let parent = self.state.nodes.get_mut(child)?.parent.take()?;
        let siblings = &mut self.state.nodes.get_mut(&parent).expect("parent").children;
        siblings.retain(|c| c != child);
        self.dirty.insert(parent.clone());
        Some(parent)
    }

    /// Open an empty topic under `parent`. It must receive a document before
    /// the next refresh or it is pruned.
    pub fn new_topic(&mut self, parent: &NodeId) -> Result<NodeId, ModelError> {
        self.require_inner(parent.as_str())?;
        self.touch();
        let created_at = self.state.version + 1;
        let id = NodeId(format!("t{}.{}", created_at, self.next_seq));
        self.next_seq += 1;
        self.state.nodes.insert(
            id.clone(),
            TopicNode {
                node_id: id.clone(),
                kind: NodeKind::Topic,
                children: Vec::new(),
                centroid: Some(Default::default()),
                doc_id: None,
                created_at,
                parent: None,
            },
        );
        self.link(&id, parent);
        Ok(id)
    }

    /// Add a leaf for a document that is not yet in the tree.
    pub fn attach_new(&mut self, doc: Arc<Document>, parent: &NodeId) -> Result<NodeId, ModelError> {
        self.require_inner(parent.as_str())?;
        if self.state.documents.contains_key(&doc.id) {
            return Err(ModelError::DuplicateDocument(doc.id.clone()));
        }
        if doc.vector.is_empty() {
            return Err(ModelError::EmptyVector(doc.id.clone()));
        }
        self.touch();
        match self.state.buffer.iter().position(|d| d.id == doc.id) {
            Some(pos) => {
                self.state.buffer.remove(pos);
            }
            None => self.state.ingested += 1,
        }
        self.state.insert_cursor += 1;
        let leaf = NodeId::leaf(&doc.id);
        self.state.nodes.insert(
            leaf.clone(),
            TopicNode {
                node_id: leaf.clone(),
                kind: NodeKind::DocLeaf,
                children: Vec::new(),
                centroid: None,
                doc_id: Some(doc.id.clone()),
                created_at: self.state.version + 1,
                parent: None,
            },
        );
        self.state.documents.insert(doc.id.clone(), doc);
        self.link(&leaf, parent);
        Ok(leaf)
    }

    /// Take a leaf out of the tree. It must be reattached before commit.
    pub fn detach(&mut self, doc_id: &str) -> Result<(), ModelError> {
        let leaf = NodeId::leaf(doc_id);
        if !self.state.nodes.contains_key(&leaf) {
            return Err(ModelError::UnknownDocument(doc_id.to_string()));
        }
        self.touch();
        self.unlink(&leaf);
        self.detached.insert(doc_id.to_string());
        Ok(())
    }

    pub fn reattach(&mut self, doc_id: &str, parent: &NodeId) -> Result<(), ModelError> {
        self.require_inner(parent.as_str())?;
        if !self.detached.remove(doc_id) {
            return Err(ModelError::UnknownDocument(doc_id.to_string()));
        }
        self.link(&NodeId::leaf(doc_id), parent);
        Ok(())
    }

    /// Move a leaf under another topic (or the root).
    pub fn move_leaf(&mut self, doc_id: &str, parent: &NodeId) -> Result<(), ModelError> {
        self.require_inner(parent.as_str())?;
        self.detach(doc_id)?;
        self.reattach(doc_id, parent)
    }

    /// Replace topic `id` by its children in its parent.
    pub fn splice_out(&mut self, id: &NodeId) -> Result<(), ModelError> {
        if self.node(id.as_str())?.kind != NodeKind::Topic {
            return Err(ModelError::NotATopic(id.to_string()));
        }
        self.touch();
        let parent = self.unlink(id).expect("topics have parents");
        let children = std::mem::take(&mut self.state.nodes.get_mut(id).expect("topic").children);
        for c in &children {
            self.state.nodes.get_mut(c).expect("child").parent = None;
            self.link(c, &parent);
        }
        self.state.nodes.remove(id);
        self.dirty.remove(id);
        Ok(())
    }

    /// Move every child of `from` under `into` and drop `from`.
    pub fn merge_topics(&mut self, into: &NodeId, from: &NodeId) -> Result<(), ModelError> {
        if into == from {
            return Ok(());
        }
        for id in [into, from] {
            if self.node(id.as_str())?.kind != NodeKind::Topic {
                return Err(ModelError::NotATopic(id.to_string()));
            }
        }
        self.touch();
        self.unlink(from);
        let children = std::mem::take(&mut self.state.nodes.get_mut(from).expect("topic").children);
        for c in &children {
            self.state.nodes.get_mut(c).expect("child").parent = None;
            self.link(c, into);
        }
        self.state.nodes.remove(from);
        self.dirty.remove(from);
        Ok(())
    }

    /// Choose the parent for `doc` by descending from the root. With
    /// `open_topics` false the descent ignores `theta_new` and only opens a
    /// topic when the root has none.
    fn place(&mut self, doc: &Document, params: &ModelParams, open_topics: bool) -> Result<NodeId, ModelError> {
        let root = self.state.root_id.clone();
        let mut cur = root.clone();
        let mut depth = 0usize;
        loop {
            if depth >= params.max_depth.max(1) {
                return Ok(cur);
            }
            let best = self
                .state
                .topic_children(cur.as_str())
                .map(|t| {
                    let sim = t.centroid.as_ref().map_or(0.0, |c| doc.vector.cosine(c));
                    (sim, t.created_at, t.node_id.clone())
                })
                .max_by(|a, b| {
                    a.0.total_cmp(&b.0)
                        .then(b.1.cmp(&a.1))
                        .then(b.2.cmp(&a.2))
                });
            match best {
                Some((sim, _, child)) if !open_topics || sim >= params.theta_new => {
                    cur = child;
                    depth += 1;
                }
                _ if !open_topics && cur != root => return Ok(cur),
                _ => return self.new_topic(&cur),
            }
        }
    }

    /// Insert a new document from the root.
    pub fn insert_new(&mut self, doc: Arc<Document>, params: &ModelParams) -> Result<(), ModelError> {
        if self.state.documents.contains_key(&doc.id) {
            return Err(ModelError::DuplicateDocument(doc.id.clone()));
        }
        if doc.vector.is_empty() {
            return Err(ModelError::EmptyVector(doc.id.clone()));
        }
        let parent = self.place(&doc, params, true)?;
        self.attach_new(doc, &parent)?;
        self.refresh();
        Ok(())
    }

    /// Reinsert a detached leaf from the root. `open_topics` as for insertion;
    /// when false the leaf joins the most similar existing topic.
    pub fn reinsert(&mut self, doc_id: &str, params: &ModelParams, open_topics: bool) -> Result<(), ModelError> {
        let doc = self
            .state
            .documents
            .get(doc_id)
            .cloned()
            .ok_or_else(|| ModelError::UnknownDocument(doc_id.to_string()))?;
        let parent = self.place(&doc, params, open_topics)?;
        self.reattach(doc_id, &parent)?;
        self.refresh();
        Ok(())
    }

    /// Prune topics without documents and recompute touched centroids.
    pub fn refresh(&mut self) {
        // Prune bottom-up: a topic becomes empty once its last child goes.
        loop {
            let empty: Vec<NodeId> = self
                .state
                .nodes
                .values()
                .filter(|n| n.kind == NodeKind::Topic && n.children.is_empty())
                .map(|n| n.node_id.clone())
                .collect();
            if empty.is_empty() {
                break;
            }
            for id in empty {
                self.unlink(&id);
                self.state.nodes.remove(&id);
                self.dirty.remove(&id);
            }
        }
        let mut stale: BTreeSet<NodeId> = BTreeSet::new();
        for id in std::mem::take(&mut self.dirty) {
            let mut cur = Some(id);
            while let Some(node) = cur {
                if !self.state.nodes.contains_key(&node) || !stale.insert(node.clone()) {
                    break;
                }
                cur = self.state.nodes[&node].parent.clone();
            }
        }
        for id in &stale {
            self.state.refresh_centroid(id);
        }
    }

    pub(super) fn commit(mut self) {
        debug_assert!(
            self.detached.is_empty(),
            "detached leaves not reattached: {:?}",
            self.detached
        );
        self.refresh();
        if self.changed {
            self.state.version += 1;
            self.state.digest = OnceLock::new();
        }
    }
}
