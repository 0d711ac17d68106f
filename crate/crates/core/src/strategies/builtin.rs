use std::collections::{BTreeMap, BTreeSet};

use super::{spherical_two_means, Strategy, StrategyCategory, StrategyContext, StrategyDescriptor, StrategyError};
use crate::corpus::SparseVector;
use crate::ihtm::{ModelState, NodeId, TopicNode};
use crate::quality::topic_coherence;

fn descriptor(id: &str, name: &str, category: StrategyCategory, params: &[(&str, f64)]) -> StrategyDescriptor {
    StrategyDescriptor {
        strategy_id: id.to_string(),
        display_name: name.to_string(),
        parameters: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        category,
    }
}

fn centroid_cosine(a: &TopicNode, b: &TopicNode) -> f64 {
    match (&a.centroid, &b.centroid) {
        (Some(x), Some(y)) => x.cosine(y),
        _ => 0.0,
    }
}

/// Older first: lower `created_at`, then lower id.
fn older<'a>(a: &'a TopicNode, b: &'a TopicNode) -> (&'a TopicNode, &'a TopicNode) {
    if (a.created_at, &a.node_id) <= (b.created_at, &b.node_id) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Leaves that sit directly under a topic, with their parent.
pub(crate) fn leaves_under_topics(state: &ModelState) -> Vec<(String, NodeId)> {
    state
        .leaves()
        .filter_map(|leaf| {
            let parent = leaf.parent()?;
            state.node(parent.as_str())?.is_topic().then(|| {
                (leaf.doc_id.clone().expect("leaves carry a doc id"), parent.clone())
            })
        })
        .collect()
}

/// Merge the most similar pair of sibling topics while some pair reaches
/// `tau_merge`. The older topic absorbs the younger one.
pub struct MergeSimilarSiblings;

impl MergeSimilarSiblings {
    fn best_pair(state: &ModelState, tau: f64) -> Option<(NodeId, NodeId)> {
        let mut best: Option<(f64, NodeId, NodeId)> = None;
        let inner = state.nodes().filter(|n| !n.is_leaf());
        for parent in inner {
            let mut kids: Vec<&TopicNode> = state.topic_children(parent.node_id.as_str()).collect();
            kids.sort_by(|a, b| a.node_id.cmp(&b.node_id));
            for (i, a) in kids.iter().enumerate() {
                for b in &kids[i + 1..] {
                    let sim = centroid_cosine(a, b);
                    if sim < tau {
                        continue;
                    }
                    let better = match &best {
                        None => true,
                        Some((s, x, y)) => sim > *s || (sim == *s && (&a.node_id, &b.node_id) < (x, y)),
                    };
                    if better {
                        best = Some((sim, a.node_id.clone(), b.node_id.clone()));
                    }
                }
            }
        }
        let (_, a, b) = best?;
        let (into, from) = older(state.node(a.as_str())?, state.node(b.as_str())?);
        Some((into.node_id.clone(), from.node_id.clone()))
    }
}

impl Strategy for MergeSimilarSiblings {
    fn descriptor(&self) -> StrategyDescriptor {
        descriptor(
            "merge_similar_siblings",
            "Merge similar sibling topics",
            StrategyCategory::Merge,
            &[("tau_merge", 0.6)],
        )
    }

    fn apply(
        &self,
        state: &mut ModelState,
        params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        let tau = params["tau_merge"];
        let mut applied = false;
        while let Some((into, from)) = Self::best_pair(state, tau) {
            ctx.cancel.checkpoint()?;
            state.edit(|e| e.merge_topics(&into, &from))?;
            applied = true;
        }
        Ok(applied)
    }
}

/// Split the least coherent topic in two by spherical 2-means over its direct
/// leaves. One cluster stays, the other moves to a new sibling topic.
pub struct SplitIncoherentTopic;

impl Strategy for SplitIncoherentTopic {
    fn descriptor(&self) -> StrategyDescriptor {
        descriptor(
            "split_incoherent_topic",
            "Split the least coherent topic",
            StrategyCategory::Split,
            &[],
        )
    }

    fn apply(
        &self,
        state: &mut ModelState,
        _params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        let mut candidates: Vec<(f64, NodeId)> = state
            .topics()
            .filter(|t| state.direct_docs(t.node_id.as_str()).len() >= 2)
            .map(|t| {
                let c = topic_coherence(state, t.node_id.as_str(), ctx.stats).unwrap_or(f64::NEG_INFINITY);
                (c, t.node_id.clone())
            })
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let dim = state.vocabulary().len();
        for (_, topic) in candidates {
            ctx.cancel.checkpoint()?;
            let docs: Vec<String> = state.direct_docs(topic.as_str()).iter().map(|d| d.to_string()).collect();
            let vectors: Vec<&SparseVector> = docs
                .iter()
                .map(|d| &state.document(d).expect("leaf documents are known").vector)
                .collect();
            let labels = spherical_two_means(&vectors, dim, ctx.seed);
            let movers: Vec<String> = docs
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l != labels[0])
                .map(|(d, _)| d.clone())
                .collect();
            if movers.is_empty() {
                continue;
            }
            let parent = state
                .node(topic.as_str())
                .and_then(TopicNode::parent)
                .cloned()
                .expect("topics have parents");
            state.edit(|e| -> Result<(), StrategyError> {
                let sibling = e.new_topic(&parent)?;
                for d in &movers {
                    e.move_leaf(d, &sibling)?;
                }
                Ok(())
            })?;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Take out leaves far from their topic centroid and insert them again from
/// the root, allowing new topics.
pub struct RemoveOutlierDocuments;

impl Strategy for RemoveOutlierDocuments {
    fn descriptor(&self) -> StrategyDescriptor {
        descriptor(
            "remove_outlier_documents",
            "Reinsert outlier documents",
            StrategyCategory::Outlier,
            &[("tau_out", 0.15)],
        )
    }

    fn apply(
        &self,
        state: &mut ModelState,
        params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        let tau = params["tau_out"];
        let outliers: Vec<String> = leaves_under_topics(state)
            .into_iter()
            .filter(|(doc, parent)| {
                let d = state.document(doc).expect("leaf documents are known");
                state.similarity(d, parent.as_str()) < tau
            })
            .map(|(doc, _)| doc)
            .collect();
        if outliers.is_empty() {
            return Ok(false);
        }
        ctx.cancel.checkpoint()?;
        reinsert_all(state, &outliers, ctx, true)?;
        Ok(true)
    }
}

fn reinsert_all(
    state: &mut ModelState,
    docs: &[String],
    ctx: &StrategyContext<'_>,
    open_topics: bool,
) -> Result<(), StrategyError> {
    let model = ctx.model;
    state.edit(|e| -> Result<(), StrategyError> {
        for d in docs {
            e.detach(d)?;
        }
        e.refresh();
        for d in docs {
            e.reinsert(d, &model, open_topics)?;
        }
        Ok(())
    })
}

/// Splice out every topic that has a single child.
pub struct CompactChains;

impl Strategy for CompactChains {
    fn descriptor(&self) -> StrategyDescriptor {
        descriptor("compact_chains", "Compact topic chains", StrategyCategory::Compact, &[])
    }

    fn apply(
        &self,
        state: &mut ModelState,
        _params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        let mut applied = false;
        loop {
            let chains: Vec<NodeId> = state
                .topics()
                .filter(|t| t.children.len() == 1)
                .map(|t| t.node_id.clone())
                .collect();
            if chains.is_empty() {
                return Ok(applied);
            }
            ctx.cancel.checkpoint()?;
            state.edit(|e| chains.iter().try_for_each(|t| e.splice_out(t)))?;
            applied = true;
        }
    }
}

/// Move the worst-fitting leaf whose most similar topic is not its parent.
pub struct ReassignMisfitDocument;

impl Strategy for ReassignMisfitDocument {
    fn descriptor(&self) -> StrategyDescriptor {
        descriptor(
            "reassign_misfit_document",
            "Reassign the worst-fitting document",
            StrategyCategory::Reassign,
            &[],
        )
    }

    fn apply(
        &self,
        state: &mut ModelState,
        _params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        let mut worst: Option<(f64, String, NodeId)> = None;
        for (doc_id, parent) in leaves_under_topics(state) {
            ctx.cancel.checkpoint()?;
            let doc = state.document(&doc_id).expect("leaf documents are known");
            let fit = state.similarity(doc, parent.as_str());
            if worst.as_ref().is_some_and(|(w, id, _)| (*w, id) <= (fit, &doc_id)) {
                continue;
            }
            if let Some(target) = best_topic(state, &doc.vector) {
                if target != parent {
                    worst = Some((fit, doc_id, target));
                }
            }
        }
        let Some((_, doc_id, target)) = worst else {
            return Ok(false);
        };
        state.edit(|e| e.move_leaf(&doc_id, &target))?;
        Ok(true)
    }
}

/// Topic with the highest centroid cosine; ties go to the older topic.
pub(crate) fn best_topic(state: &ModelState, v: &SparseVector) -> Option<NodeId> {
    state
        .topics()
        .map(|t| (t.centroid.as_ref().map_or(0.0, |c| v.cosine(c)), t))
        .max_by(|(sa, a), (sb, b)| {
            sa.total_cmp(sb)
                .then(b.created_at.cmp(&a.created_at))
                .then_with(|| b.node_id.cmp(&a.node_id))
        })
        .map(|(_, t)| t.node_id.clone())
}

/// Dissolve topics holding fewer than `min_size` documents and place their
/// documents in the most similar remaining topics.
pub struct RebalanceSmallTopics;

impl Strategy for RebalanceSmallTopics {
    fn descriptor(&self) -> StrategyDescriptor {
        descriptor(
            "rebalance_small_topics",
            "Dissolve small topics",
            StrategyCategory::Rebalance,
            &[("min_size", 2.0)],
        )
    }

    fn apply(
        &self,
        state: &mut ModelState,
        params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        let min_size = params["min_size"];
        let mut docs = BTreeSet::new();
        for t in state.topics() {
            let below = state.descendant_docs(t.node_id.as_str());
            if (below.len() as f64) < min_size {
                docs.extend(below.into_iter().map(str::to_string));
            }
        }
        if docs.is_empty() {
            return Ok(false);
        }
        ctx.cancel.checkpoint()?;
        let docs: Vec<String> = docs.into_iter().collect();
        reinsert_all(state, &docs, ctx, false)?;
        Ok(true)
    }
}

/// No-op; a sandbox running it only forecasts future inserts.
pub struct Identity;

impl Strategy for Identity {
    fn descriptor(&self) -> StrategyDescriptor {
        descriptor("identity", "Keep the current tree", StrategyCategory::Identity, &[])
    }

    fn apply(
        &self,
        _state: &mut ModelState,
        _params: &BTreeMap<String, f64>,
        _ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        Ok(false)
    }
}
