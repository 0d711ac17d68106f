//! User interactions as speculation triggers.
//!
//! Starting a drag is level 1: rank drop targets, read-only. Completing a
//! move is level 2: guess the next move. The `threshold`-th consecutive
//! move between the same two topics is level 3: auto-complete the pattern
//! for every remaining document that fits the target better than its source.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SparseVector;
use crate::engine::{Dimensions, LeafMove, SpeculationRequest, Trigger, AUTO_COMPLETE, NEXT_MOVE};
use crate::ihtm::ModelState;
use crate::strategies::{best_topic, leaves_under_topics};

pub const PATTERN_CAPACITY: usize = 10;
pub const REPETITION_THRESHOLD: usize = 3;
pub const NEXT_MOVE_CANDIDATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionType {
    DragStart,
    DragDrop,
    Select,
    Accept,
    Reject,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_topic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub event_id: String,
    #[serde(rename = "type")]
    pub kind: InteractionType,
    #[serde(default)]
    pub payload: InteractionPayload,
    /// Insert cursor when the event happened.
    #[serde(default)]
    pub cursor: usize,
    /// Client clock in milliseconds; informational only.
    #[serde(default)]
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub fn trigger(self) -> Trigger {
        match self {
            Level::L1 => Trigger::L1,
            Level::L2 => Trigger::L2,
            Level::L3 => Trigger::L3,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum InteractError {
    #[error("event {0}: drag_drop without a matching drag_start")]
    OrphanDrop(String),
    #[error("event {event_id}: missing payload field {field}")]
    MissingField { event_id: String, field: &'static str },
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("unknown topic {0}")]
    UnknownTopic(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletedMove {
    pub source_topic: String,
    pub target_topic: String,
    pub doc_vector: SparseVector,
}

/// Recent completed moves plus the drag currently in flight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternState {
    capacity: usize,
    threshold: usize,
    moves: VecDeque<CompletedMove>,
    open_drag: Option<String>,
}

impl Default for PatternState {
    fn default() -> Self {
        Self::new(PATTERN_CAPACITY, REPETITION_THRESHOLD)
    }
}

impl PatternState {
    pub fn new(capacity: usize, threshold: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            threshold: threshold.max(1),
            moves: VecDeque::new(),
            open_drag: None,
        }
    }

    pub fn moves(&self) -> impl Iterator<Item = &CompletedMove> {
        self.moves.iter()
    }

    pub fn open_drag(&self) -> Option<&str> {
        self.open_drag.as_deref()
    }

    /// Count of trailing moves between `source` and `target`.
    fn trailing_run(&self, source: &str, target: &str) -> usize {
        self.moves
            .iter()
            .rev()
            .take_while(|m| m.source_topic == source && m.target_topic == target)
            .count()
    }

    /// Fold an event in after it has been classified and carried out.
    pub fn observe(&mut self, event: &InteractionEvent, state: &ModelState) {
        let p = &event.payload;
        match event.kind {
            InteractionType::DragStart => self.open_drag = p.doc_id.clone(),
            InteractionType::DragDrop => {
                self.open_drag = None;
                let (Some(doc), Some(source), Some(target)) = (&p.doc_id, &p.source_topic, &p.target_topic) else {
                    return;
                };
                if self.moves.len() == self.capacity {
                    self.moves.pop_front();
                }
                self.moves.push_back(CompletedMove {
                    source_topic: source.clone(),
                    target_topic: target.clone(),
                    doc_vector: state.document(doc).map(|d| d.vector.clone()).unwrap_or_default(),
                });
            }
            InteractionType::Select | InteractionType::Accept | InteractionType::Reject => {}
        }
    }
}

fn field<'a>(event: &'a InteractionEvent, v: &'a Option<String>, name: &'static str) -> Result<&'a str, InteractError> {
    v.as_deref().ok_or_else(|| InteractError::MissingField {
        event_id: event.event_id.clone(),
        field: name,
    })
}

/// Level of an event, or `None` for accept and reject, which are decisions
/// rather than speculation triggers. Does not modify `pattern`.
pub fn classify_event(event: &InteractionEvent, pattern: &PatternState) -> Result<Option<Level>, InteractError> {
    let p = &event.payload;
    match event.kind {
        InteractionType::DragStart | InteractionType::Select => {
            field(event, &p.doc_id, "doc_id")?;
            Ok(Some(Level::L1))
        }
        InteractionType::DragDrop => {
            let doc = field(event, &p.doc_id, "doc_id")?;
            let source = field(event, &p.source_topic, "source_topic")?;
            let target = field(event, &p.target_topic, "target_topic")?;
            if pattern.open_drag.as_deref() != Some(doc) {
                return Err(InteractError::OrphanDrop(event.event_id.clone()));
            }
            if pattern.trailing_run(source, target) + 1 >= pattern.threshold {
                Ok(Some(Level::L3))
            } else {
                Ok(Some(Level::L2))
            }
        }
        InteractionType::Accept | InteractionType::Reject => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropTarget {
    pub topic_id: String,
    pub similarity: f64,
    /// The document already sits directly in this topic.
    pub current: bool,
}

/// Topics ordered by cosine between the document and their centroids,
/// ties by topic id.
pub fn rank_drop_targets(state: &ModelState, doc_id: &str) -> Result<Vec<DropTarget>, InteractError> {
    let doc = state
        .document(doc_id)
        .ok_or_else(|| InteractError::UnknownDocument(doc_id.to_string()))?;
    let parent = state.parent_of_doc(doc_id);
    let mut targets: Vec<DropTarget> = state
        .topics()
        .map(|t| DropTarget {
            topic_id: t.node_id.to_string(),
            similarity: state.similarity(doc, t.node_id.as_str()),
            current: parent == Some(&t.node_id),
        })
        .collect();
    targets.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.topic_id.cmp(&b.topic_id)));
    Ok(targets)
}

/// The worst-fitting leaves whose best topic is elsewhere, as single moves.
pub fn next_moves(state: &ModelState, exclude: Option<&str>, limit: usize) -> Vec<LeafMove> {
    let mut misfits: Vec<(f64, String, String)> = leaves_under_topics(state)
        .into_iter()
        .filter(|(doc_id, _)| Some(doc_id.as_str()) != exclude)
        .filter_map(|(doc_id, parent)| {
            let doc = state.document(&doc_id)?;
            let target = best_topic(state, &doc.vector)?;
            (target != parent).then(|| (state.similarity(doc, parent.as_str()), doc_id, target.to_string()))
        })
        .collect();
    misfits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    misfits
        .into_iter()
        .take(limit)
        .map(|(_, doc_id, target)| LeafMove { doc_id, target })
        .collect()
}

/// Leaves directly under `source` that are closer to `target`'s centroid.
pub fn pattern_moves(state: &ModelState, source: &str, target: &str) -> Result<Vec<LeafMove>, InteractError> {
    for t in [source, target] {
        if !state.node(t).is_some_and(|n| !n.is_leaf()) {
            return Err(InteractError::UnknownTopic(t.to_string()));
        }
    }
    Ok(state
        .direct_docs(source)
        .into_iter()
        .filter(|doc_id| {
            let doc = state.document(doc_id).expect("leaf documents are known");
            state.similarity(doc, target) > state.similarity(doc, source)
        })
        .map(|doc_id| LeafMove {
            doc_id: doc_id.to_string(),
            target: target.to_string(),
        })
        .collect())
}

/// What an interaction asks for: a read-only ranking, a batch, or neither.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Proposal {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub drop_targets: Vec<DropTarget>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request: Option<SpeculationRequest>,
}

/// Speculation for an already classified event. For drops, `state` is the
/// main state after the user's move was applied.
pub fn propose_speculations(
    level: Level,
    event: &InteractionEvent,
    state: &ModelState,
) -> Result<Proposal, InteractError> {
    let p = &event.payload;
    let request = |dimensions: Vec<Dimensions>, reason: String| SpeculationRequest {
        trigger: level.trigger(),
        budget: level.trigger().default_budget(),
        dimensions,
        reason: Some(reason),
    };
    match level {
        Level::L1 => Ok(Proposal {
            drop_targets: rank_drop_targets(state, field(event, &p.doc_id, "doc_id")?)?,
            request: None,
        }),
        Level::L2 => {
            let dims: Vec<Dimensions> = next_moves(state, p.doc_id.as_deref(), NEXT_MOVE_CANDIDATES)
                .into_iter()
                .map(|m| Dimensions::moves(NEXT_MOVE, vec![m]))
                .collect();
            Ok(Proposal {
                drop_targets: Vec::new(),
                request: (!dims.is_empty()).then(|| request(dims, format!("next move after {}", event.event_id))),
            })
        }
        Level::L3 => {
            let source = field(event, &p.source_topic, "source_topic")?;
            let target = field(event, &p.target_topic, "target_topic")?;
            // The user's moves may have emptied and pruned the source.
            if state.node(source).is_none() {
                return Ok(Proposal::default());
            }
            let moves = pattern_moves(state, source, target)?;
            Ok(Proposal {
                drop_targets: Vec::new(),
                request: (!moves.is_empty()).then(|| {
                    request(
                        vec![Dimensions::moves(AUTO_COMPLETE, moves)],
                        format!("auto-complete {source} -> {target}"),
                    )
                }),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ihtm::test_support::corpus;
    use crate::ihtm::NodeId;

    fn event(id: &str, kind: InteractionType, doc: &str, source: &str, target: &str) -> InteractionEvent {
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        InteractionEvent {
            event_id: id.into(),
            kind,
            payload: InteractionPayload {
                doc_id: opt(doc),
                source_topic: opt(source),
                target_topic: opt(target),
            },
            cursor: 0,
            timestamp: 0.0,
        }
    }

    /// Topic A holds three rocket documents and seven baseball ones;
    /// topic B holds three baseball documents.
    fn handcrafted() -> (ModelState, NodeId, NodeId) {
        let c = corpus(&[
            ("a1", "rocket orbit launch"),
            ("a2", "rocket orbit shuttle"),
            ("a3", "orbit launch shuttle"),
            ("m1", "pitcher inning bullpen"),
            ("m2", "homer bullpen glove"),
            ("m3", "inning homer glove"),
            ("m4", "pitcher bullpen homer"),
            ("b1", "pitcher inning homer"),
            ("b2", "inning homer bullpen"),
            ("b3", "pitcher bullpen inning"),
            ("u1", "pitcher homer glove"),
            ("u2", "inning bullpen glove"),
            ("u3", "homer pitcher glove"),
        ]);
        let mut s = ModelState::new(&c);
        let (a, b) = s.edit(|e| {
            let a = e.new_topic(&NodeId::root()).unwrap();
            let b = e.new_topic(&NodeId::root()).unwrap();
            for d in &c.documents {
                let parent = if d.id.starts_with('a') || d.id.starts_with('m') || d.id.starts_with('u') {
                    &a
                } else {
                    &b
                };
                e.attach_new(d.clone(), parent).unwrap();
            }
            (a, b)
        });
        s.validate().unwrap();
        (s, a, b)
    }

    #[test]
    fn drag_start_is_level_one() {
        let p = PatternState::default();
        let e = event("e1", InteractionType::DragStart, "a1", "", "");
        assert_eq!(classify_event(&e, &p).unwrap(), Some(Level::L1));
    }

    #[test]
    fn a_completed_move_is_level_two() {
        let (s, a, b) = handcrafted();
        let mut p = PatternState::default();
        let start = event("e1", InteractionType::DragStart, "m1", "", "");
        p.observe(&start, &s);
        let drop = event("e2", InteractionType::DragDrop, "m1", a.as_str(), b.as_str());
        assert_eq!(classify_event(&drop, &p).unwrap(), Some(Level::L2));
    }

    #[test]
    fn third_identical_move_is_level_three() {
        let (s, a, b) = handcrafted();
        let mut p = PatternState::default();
        let mut levels = Vec::new();
        for (i, doc) in ["u1", "u2", "u3"].iter().enumerate() {
            let start = event(&format!("s{i}"), InteractionType::DragStart, doc, "", "");
            p.observe(&start, &s);
            let drop = event(&format!("d{i}"), InteractionType::DragDrop, doc, a.as_str(), b.as_str());
            levels.push(classify_event(&drop, &p).unwrap().unwrap());
            p.observe(&drop, &s);
        }
        assert_eq!(levels, vec![Level::L2, Level::L2, Level::L3]);
    }

    #[test]
    fn a_different_pair_breaks_the_run() {
        let (s, a, b) = handcrafted();
        let mut p = PatternState::default();
        let pairs = [(a.as_str(), b.as_str()), (b.as_str(), a.as_str()), (a.as_str(), b.as_str()), (a.as_str(), b.as_str())];
        let mut last = None;
        for (i, (src, dst)) in pairs.iter().enumerate() {
            p.observe(&event("s", InteractionType::DragStart, "m1", "", ""), &s);
            let drop = event(&format!("d{i}"), InteractionType::DragDrop, "m1", src, dst);
            last = classify_event(&drop, &p).unwrap();
            p.observe(&drop, &s);
        }
        assert_eq!(last, Some(Level::L2));
    }

    #[test]
    fn orphan_drop_is_an_error() {
        let p = PatternState::default();
        let drop = event("d", InteractionType::DragDrop, "a1", "t1", "t2");
        assert_eq!(classify_event(&drop, &p), Err(InteractError::OrphanDrop("d".into())));
    }

    #[test]
    fn decisions_have_no_level() {
        let p = PatternState::default();
        assert_eq!(classify_event(&event("x", InteractionType::Accept, "", "", ""), &p).unwrap(), None);
        assert_eq!(classify_event(&event("y", InteractionType::Reject, "", "", ""), &p).unwrap(), None);
    }

    #[test]
    fn classification_does_not_touch_the_pattern() {
        let (s, a, b) = handcrafted();
        let mut p = PatternState::default();
        p.observe(&event("s", InteractionType::DragStart, "m1", "", ""), &s);
        let before = p.clone();
        let drop = event("d", InteractionType::DragDrop, "m1", a.as_str(), b.as_str());
        classify_event(&drop, &p).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn ring_buffer_is_bounded() {
        let (s, a, b) = handcrafted();
        let mut p = PatternState::new(4, 3);
        for i in 0..9 {
            p.observe(&event("s", InteractionType::DragStart, "m1", "", ""), &s);
            p.observe(&event(&format!("d{i}"), InteractionType::DragDrop, "m1", a.as_str(), b.as_str()), &s);
        }
        assert_eq!(p.moves().count(), 4);
    }

    #[test]
    fn identical_document_ranks_its_topic_first() {
        let c = corpus(&[("x", "rocket orbit launch"), ("y", "pitcher inning homer"), ("z", "rocket orbit launch")]);
        let mut s = ModelState::new(&c);
        let p = crate::ihtm::ModelParams {
            theta_new: 0.3,
            max_depth: 1,
        };
        s.insert_next(&p).unwrap();
        s.insert_next(&p).unwrap();
        let before = s.digest().to_string();
        let home = s.parent_of_doc("x").unwrap().to_string();
        let ranked = rank_drop_targets(&s, "x").unwrap();
        assert_eq!(ranked[0].topic_id, home);
        assert!((ranked[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(s.digest(), before);
        assert!(rank_drop_targets(&s, "nope").is_err());
    }

    #[test]
    fn level_one_proposes_no_sandbox() {
        let (s, _, _) = handcrafted();
        let e = event("e", InteractionType::DragStart, "m1", "", "");
        let out = propose_speculations(Level::L1, &e, &s).unwrap();
        assert!(out.request.is_none());
        assert_eq!(out.drop_targets.len(), 2);
    }

    #[test]
    fn level_two_proposes_at_most_three_single_moves() {
        let (mut s, a, b) = handcrafted();
        s.edit(|e| e.move_leaf("u1", &b)).unwrap();
        let e = event("e", InteractionType::DragDrop, "u1", a.as_str(), b.as_str());
        let req = propose_speculations(Level::L2, &e, &s).unwrap().request.unwrap();
        assert!(req.dimensions.len() <= 3 && !req.dimensions.is_empty());
        assert_eq!(req.trigger, Trigger::L2);
        for d in &req.dimensions {
            assert_eq!(d.strategy_id, NEXT_MOVE);
            assert_eq!(d.moves.len(), 1);
            assert_ne!(d.moves[0].doc_id, "u1");
        }
    }

    #[test]
    fn level_three_completes_the_pattern() {
        let (mut s, a, b) = handcrafted();
        // The user has moved u1..u3 from A to B.
        for doc in ["u1", "u2", "u3"] {
            s.edit(|e| e.move_leaf(doc, &b)).unwrap();
        }
        let e = event("d3", InteractionType::DragDrop, "u3", a.as_str(), b.as_str());
        let req = propose_speculations(Level::L3, &e, &s).unwrap().request.unwrap();
        assert_eq!(req.dimensions.len(), 1);
        let dims = &req.dimensions[0];
        assert_eq!(dims.strategy_id, AUTO_COMPLETE);

        // Exhaustive check: exactly the A leaves closer to B move.
        let mut expected: Vec<&str> = s
            .direct_docs(a.as_str())
            .into_iter()
            .filter(|d| {
                let v = &s.document(d).unwrap().vector;
                let ca = s.node(a.as_str()).unwrap().centroid.as_ref().unwrap();
                let cb = s.node(b.as_str()).unwrap().centroid.as_ref().unwrap();
                v.cosine(cb) > v.cosine(ca)
            })
            .collect();
        expected.sort_unstable();
        assert_eq!(expected, vec!["m1", "m2", "m3", "m4"]);
        let mut moved: Vec<&str> = dims.moves.iter().map(|m| m.doc_id.as_str()).collect();
        moved.sort_unstable();
        assert_eq!(moved, expected);

        let mut result = s.clone();
        for m in &dims.moves {
            result.edit(|e| e.move_leaf(&m.doc_id, &NodeId::new(m.target.as_str()))).unwrap();
        }
        result.validate().unwrap();
        for d in &expected {
            assert_eq!(result.parent_of_doc(d), Some(&b));
        }
        let docs = |st: &ModelState| {
            let mut v: Vec<String> = st.doc_ids().map(str::to_string).collect();
            v.sort();
            v
        };
        assert_eq!(docs(&result), docs(&s));
    }

    #[test]
    fn events_round_trip_through_json() {
        let e = event("e", InteractionType::DragDrop, "a1", "t1", "t2");
        let json = serde_json::to_string(&e).unwrap();
        assert!(json.contains("\"type\":\"drag_drop\""));
        assert_eq!(serde_json::from_str::<InteractionEvent>(&json).unwrap(), e);
    }
}
