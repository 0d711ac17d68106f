//! Merged difference tree between an origin state and a candidate.
//!
//! Leaves match by document id. Topics match greedily on the Jaccard index
//! of their descendant document sets: pairs at or above `tau_match` are
//! taken in descending order, ties broken by the pair's smaller node id and
//! then its larger one, which makes `diff(a, b)` the mirror image of
//! `diff(b, a)`.
//!
//! The merged tree follows the candidate's shape. Nodes that exist only in
//! the origin hang under the merged counterpart of their origin parent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ihtm::{ModelState, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Unchanged,
    Added,
    Removed,
    Moved,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaNode {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<String>,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub change: ChangeKind,
    pub children: Vec<DeltaNode>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub unchanged: usize,
    pub added: usize,
    pub removed: usize,
    pub moved: usize,
    pub modified: usize,
}

impl DeltaSummary {
    fn bump(&mut self, change: ChangeKind) {
        match change {
            ChangeKind::Unchanged => self.unchanged += 1,
            ChangeKind::Added => self.added += 1,
            ChangeKind::Removed => self.removed += 1,
            ChangeKind::Moved => self.moved += 1,
            ChangeKind::Modified => self.modified += 1,
        }
    }

    /// Nodes with any change.
    pub fn changed(&self) -> usize {
        self.added + self.removed + self.moved + self.modified
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub origin: String,
    pub candidate: String,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTree {
    pub root: DeltaNode,
    pub summary: DeltaSummary,
    pub match_pairs: Vec<MatchPair>,
    pub tau_match: f64,
}

impl DeltaTree {
    /// Depth-first walk over the merged nodes.
    pub fn nodes(&self) -> Vec<&DeltaNode> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

/// Recount change classes over the merged tree.
pub fn summarize(delta: &DeltaTree) -> DeltaSummary {
    let mut s = DeltaSummary::default();
    for n in delta.nodes() {
        s.bump(n.change);
    }
    s
}

fn doc_sets(state: &ModelState) -> BTreeMap<String, BTreeSet<String>> {
    state
        .topics()
        .map(|t| {
            let docs = state.descendant_docs(t.node_id.as_str()).into_iter().map(str::to_string).collect();
            (t.node_id.to_string(), docs)
        })
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Greedy topic matching; see the module docs for the order.
pub fn match_topics(origin: &ModelState, candidate: &ModelState, tau_match: f64) -> Vec<MatchPair> {
    let a = doc_sets(origin);
    let b = doc_sets(candidate);
    let mut pairs: Vec<MatchPair> = Vec::new();
    for (oid, oset) in &a {
        for (cid, cset) in &b {
            let j = jaccard(oset, cset);
            if j >= tau_match && j > 0.0 {
                pairs.push(MatchPair {
                    origin: oid.clone(),
                    candidate: cid.clone(),
                    jaccard: j,
                });
            }
        }
    }
    let key = |p: &MatchPair| {
        let (lo, hi) = if p.origin <= p.candidate {
            (p.origin.clone(), p.candidate.clone())
        } else {
            (p.candidate.clone(), p.origin.clone())
        };
        (lo, hi)
    };
    pairs.sort_by(|x, y| y.jaccard.total_cmp(&x.jaccard).then_with(|| key(x).cmp(&key(y))));
    let mut used_o = BTreeSet::new();
    let mut used_c = BTreeSet::new();
    pairs
        .into_iter()
        .filter(|p| {
            if used_o.contains(&p.origin) || used_c.contains(&p.candidate) {
                return false;
            }
            used_o.insert(p.origin.clone());
            used_c.insert(p.candidate.clone());
            true
        })
        .collect()
}

struct Ctx<'a> {
    origin: &'a ModelState,
    candidate: &'a ModelState,
    o2c: BTreeMap<String, String>,
    c2o: BTreeMap<String, String>,
    /// Origin nodes with no counterpart, grouped by origin parent.
    removed_under: BTreeMap<String, Vec<String>>,
}

impl Ctx<'_> {
    fn direct_docs(state: &ModelState, id: &str) -> BTreeSet<String> {
        state.direct_docs(id).into_iter().map(str::to_string).collect()
    }

    fn parent(state: &ModelState, id: &str) -> Option<String> {
        state.node(id)?.parent().map(|p| p.to_string())
    }

    fn counterpart_in_origin(&self, cand_id: &str) -> Option<String> {
        let node = self.candidate.node(cand_id)?;
        match &node.doc_id {
            Some(doc) => self.origin.contains_document(doc).then(|| cand_id.to_string()),
            None => self.c2o.get(cand_id).cloned(),
        }
    }

    fn build_candidate(&self, cand_id: &str) -> DeltaNode {
        let node = self.candidate.node(cand_id).expect("candidate node");
        let origin_id = self.counterpart_in_origin(cand_id);
        let change = match &origin_id {
            None => ChangeKind::Added,
            Some(oid) if node.kind == NodeKind::Root => {
                if Self::direct_docs(self.origin, oid) == Self::direct_docs(self.candidate, cand_id) {
                    ChangeKind::Unchanged
                } else {
                    ChangeKind::Modified
                }
            }
            Some(oid) => {
                let o_parent = Self::parent(self.origin, oid).expect("non-root has a parent");
                let c_parent = Self::parent(self.candidate, cand_id).expect("non-root has a parent");
                if self.o2c.get(&o_parent) != Some(&c_parent) {
                    ChangeKind::Moved
                } else if node.kind == NodeKind::Topic
                    && Self::direct_docs(self.origin, oid) != Self::direct_docs(self.candidate, cand_id)
                {
                    ChangeKind::Modified
                } else {
                    ChangeKind::Unchanged
                }
            }
        };
        let mut kids: Vec<&str> = node.children.iter().map(|c| c.as_str()).collect();
        kids.sort_unstable();
        let mut children: Vec<DeltaNode> = kids.into_iter().map(|c| self.build_candidate(c)).collect();
        if let Some(oid) = &origin_id {
            if node.kind != NodeKind::DocLeaf {
                children.extend(self.removed_children(oid));
            }
        }
        DeltaNode {
            origin_id,
            candidate_id: Some(cand_id.to_string()),
            kind: node.kind,
            doc_id: node.doc_id.clone(),
            change,
            children,
        }
    }

    fn removed_children(&self, origin_parent: &str) -> Vec<DeltaNode> {
        self.removed_under
            .get(origin_parent)
            .map(|ids| ids.iter().map(|id| self.build_removed(id)).collect())
            .unwrap_or_default()
    }

    fn build_removed(&self, origin_id: &str) -> DeltaNode {
        let node = self.origin.node(origin_id).expect("origin node");
        DeltaNode {
            origin_id: Some(origin_id.to_string()),
            candidate_id: None,
            kind: node.kind,
            doc_id: node.doc_id.clone(),
            change: ChangeKind::Removed,
            children: self.removed_children(origin_id),
        }
    }
}

/// Merge `origin` and `candidate` into one annotated tree.
pub fn diff(origin: &ModelState, candidate: &ModelState, tau_match: f64) -> DeltaTree {
    let match_pairs = match_topics(origin, candidate, tau_match);
    let mut o2c: BTreeMap<String, String> = match_pairs
        .iter()
        .map(|p| (p.origin.clone(), p.candidate.clone()))
        .collect();
    o2c.insert(origin.root_id().to_string(), candidate.root_id().to_string());
    let c2o: BTreeMap<String, String> = o2c.iter().map(|(o, c)| (c.clone(), o.clone())).collect();
    let mut removed_under: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for n in origin.nodes() {
        let gone = match (&n.kind, &n.doc_id) {
            (NodeKind::Root, _) => false,
            (NodeKind::DocLeaf, Some(doc)) => !candidate.contains_document(doc),
            _ => !o2c.contains_key(n.node_id.as_str()),
        };
        if gone {
            let parent = n.parent().expect("non-root has a parent").to_string();
            removed_under.entry(parent).or_default().push(n.node_id.to_string());
        }
    }
    for ids in removed_under.values_mut() {
        ids.sort();
    }
    let ctx = Ctx {
        origin,
        candidate,
        o2c,
        c2o,
        removed_under,
    };
    let root = ctx.build_candidate(candidate.root_id().as_str());
    let mut delta = DeltaTree {
        root,
        summary: DeltaSummary::default(),
        match_pairs,
        tau_match,
    };
    delta.summary = summarize(&delta);
    delta
}

/// Structural checks on a delta: summary consistency, each document at most
/// once, and no document both added and removed.
pub fn check_invariants(delta: &DeltaTree) -> Result<(), String> {
    if summarize(delta) != delta.summary {
        return Err("summary does not match the annotations".into());
    }
    let mut seen = BTreeSet::new();
    let mut added = BTreeSet::new();
    let mut removed = BTreeSet::new();
    for n in delta.nodes() {
        if n.origin_id.is_none() && n.candidate_id.is_none() {
            return Err("node without ids".into());
        }
        match n.change {
            ChangeKind::Added if n.origin_id.is_some() => return Err("added node has an origin id".into()),
            ChangeKind::Removed if n.candidate_id.is_some() => {
                return Err("removed node has a candidate id".into())
            }
            _ => {}
        }
        if let Some(doc) = &n.doc_id {
            if !seen.insert(doc.clone()) {
                return Err(format!("document {doc} appears twice"));
            }
            match n.change {
                ChangeKind::Added => {
                    added.insert(doc.clone());
                }
                ChangeKind::Removed => {
                    removed.insert(doc.clone());
                }
                _ => {}
            }
        }
    }
    if let Some(doc) = added.intersection(&removed).next() {
        return Err(format!("document {doc} both added and removed"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ihtm::test_support::corpus;
    use crate::ihtm::{ModelParams, NodeId};

    const FLAT: ModelParams = ModelParams {
        theta_new: 0.3,
        max_depth: 1,
    };

    fn grown() -> (crate::corpus::Corpus, ModelState) {
        let c = corpus(&[
            ("a", "rocket orbit launch"),
            ("b", "pitcher inning homer"),
            ("c", "rocket shuttle orbit"),
            ("d", "inning pitcher bullpen"),
            ("e", "rocket launch pad"),
            ("f", "homer pitcher glove"),
        ]);
        let mut s = ModelState::new(&c);
        while s.insert_next(&FLAT).unwrap().is_some() {}
        (c, s)
    }

    #[test]
    fn identical_states_are_unchanged() {
        let (_, s) = grown();
        let d = diff(&s, &s.clone(), 0.5);
        check_invariants(&d).unwrap();
        assert_eq!(d.summary.changed(), 0);
        assert_eq!(d.summary.unchanged, s.node_count());
    }

    #[test]
    fn one_leaf_move_is_one_moved_leaf_and_two_modified_topics() {
        let (_, s) = grown();
        let topics: Vec<NodeId> = s.topics().map(|t| t.node_id.clone()).collect();
        assert_eq!(topics.len(), 2);
        let doc = s.direct_docs(topics[0].as_str())[0].to_string();
        let mut moved = s.clone();
        moved.edit(|e| e.move_leaf(&doc, &topics[1])).unwrap();
        let d = diff(&s, &moved, 0.5);
        check_invariants(&d).unwrap();
        assert_eq!(d.summary.moved, 1);
        assert_eq!(d.summary.modified, 2);
        assert_eq!(d.summary.added + d.summary.removed, 0);
        let leaf = d.nodes().into_iter().find(|n| n.change == ChangeKind::Moved).unwrap();
        assert_eq!(leaf.doc_id.as_deref(), Some(doc.as_str()));
    }

    #[test]
    fn added_and_removed_mirror() {
        let (c, s) = grown();
        let mut small = ModelState::new(&c);
        for _ in 0..3 {
            small.insert_next(&FLAT).unwrap();
        }
        let fwd = diff(&small, &s, 0.5);
        let back = diff(&s, &small, 0.5);
        check_invariants(&fwd).unwrap();
        check_invariants(&back).unwrap();
        assert_eq!(fwd.summary.added, back.summary.removed);
        assert_eq!(fwd.summary.removed, back.summary.added);
    }

    #[test]
    fn jaccard_basics() {
        let a: BTreeSet<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        let b: BTreeSet<String> = ["y", "z"].iter().map(|s| s.to_string()).collect();
        assert!((jaccard(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }

    #[test]
    fn serializes_change_names() {
        let (_, s) = grown();
        let v = serde_json::to_value(diff(&s, &s, 0.5)).unwrap();
        assert_eq!(v["root"]["change"], "unchanged");
        assert_eq!(v["root"]["kind"], "root");
        assert!(v["summary"]["moved"].is_number());
    }
}
