//! Random small trees and a brute-force topic matching oracle, shared by
//! the delta tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use specex_core::corpus::{build_corpus, Corpus, RawDocument, TokenizerOptions};
use specex_core::delta::jaccard;
use specex_core::ihtm::{ModelState, NodeId};

pub const POOL: usize = 10;
pub const MAX_NODES: usize = 12;

const WORDS: [&str; 12] = [
    "rocket", "orbit", "launch", "pitcher", "inning", "homer", "engine", "piston", "brake", "vaccine", "doctor",
    "clinic",
];

/// Ten documents with distinct, non-empty vectors.
pub fn pool_corpus() -> Corpus {
    let raw = (0..POOL)
        .map(|i| RawDocument {
            id: format!("d{i}"),
            text: format!("{} {} {}", WORDS[i], WORDS[(i + 1) % 12], WORDS[(i + 5) % 12]),
            label: None,
        })
        .collect();
    build_corpus(raw, &TokenizerOptions::default(), "pool").unwrap()
}

/// Tree shape: topic `j` hangs under `topics[j]` (0 = root, `i` = topic `i - 1`,
/// always an earlier topic) and each document under a slot in the same scheme.
#[derive(Debug, Clone)]
pub struct Shape {
    pub topics: Vec<usize>,
    pub docs: BTreeMap<usize, usize>,
}

impl Shape {
    pub fn node_bound(&self) -> usize {
        1 + self.topics.len() + self.docs.len()
    }

    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n_docs = rng.random_range(2..=7);
        let n_topics = rng.random_range(1..=(MAX_NODES - 1 - n_docs).min(4));
        let topics = (0..n_topics).map(|j| rng.random_range(0..=j)).collect();
        let mut ids: Vec<usize> = (0..POOL).collect();
        ids.shuffle(rng);
        let docs = ids[..n_docs]
            .iter()
            .map(|&d| (d, rng.random_range(0..=n_topics)))
            .collect();
        Self { topics, docs }
    }

    /// A few random edits: moves, drops, additions and topic re-parenting.
    pub fn perturb(&self, rng: &mut ChaCha8Rng) -> Self {
        let mut s = self.clone();
        for _ in 0..rng.random_range(1..=3) {
            let slots = s.topics.len() + 1;
            match rng.random_range(0..5) {
                0 | 1 => {
                    let keys: Vec<usize> = s.docs.keys().copied().collect();
                    let d = keys[rng.random_range(0..keys.len())];
                    s.docs.insert(d, rng.random_range(0..slots));
                }
                2 if s.docs.len() > 2 => {
                    let keys: Vec<usize> = s.docs.keys().copied().collect();
                    s.docs.remove(&keys[rng.random_range(0..keys.len())]);
                }
                3 if s.node_bound() < MAX_NODES => {
                    let free: Vec<usize> = (0..POOL).filter(|d| !s.docs.contains_key(d)).collect();
                    if let Some(&d) = free.get(rng.random_range(0..free.len().max(1))) {
                        s.docs.insert(d, rng.random_range(0..slots));
                    }
                }
                _ => {
                    let j = rng.random_range(0..s.topics.len());
                    s.topics[j] = rng.random_range(0..=j);
                }
            }
        }
        s
    }

    pub fn build(&self, corpus: &Corpus) -> ModelState {
        let mut state = ModelState::new(corpus);
        state.edit(|e| {
            let mut slots = vec![NodeId::root()];
            for &p in &self.topics {
                let id = e.new_topic(&slots[p]).unwrap();
                slots.push(id);
            }
            for (&d, &p) in &self.docs {
                e.attach_new(corpus.documents[d].clone(), &slots[p]).unwrap();
            }
        });
        state.validate().unwrap();
        state
    }
}

/// An origin and a candidate of at most twelve nodes each. Half the
/// candidates are edits of the origin, half are unrelated.
pub fn random_pair(rng: &mut ChaCha8Rng, corpus: &Corpus) -> (ModelState, ModelState) {
    let a = Shape::random(rng);
    let b = if rng.random_bool(0.5) { a.perturb(rng) } else { Shape::random(rng) };
    let (a, b) = (a.build(corpus), b.build(corpus));
    assert!(a.node_count() <= MAX_NODES && b.node_count() <= MAX_NODES);
    (a, b)
}

fn topic_sets(state: &ModelState) -> Vec<BTreeSet<String>> {
    state
        .topics()
        .map(|t| {
            state
                .descendant_docs(t.node_id.as_str())
                .into_iter()
                .map(str::to_string)
                .collect()
        })
        .collect()
}

/// Best total Jaccard over every one-to-one topic matching whose pairs all
/// reach `tau`, by exhaustive search.
pub fn optimal_score(origin: &ModelState, candidate: &ModelState, tau: f64) -> f64 {
    let a = topic_sets(origin);
    let b = topic_sets(candidate);
    let w: Vec<Vec<f64>> = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| {
                    let j = jaccard(x, y);
                    if j >= tau && j > 0.0 {
                        j
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect();
    fn go(i: usize, used: &mut Vec<bool>, w: &[Vec<f64>]) -> f64 {
        if i == w.len() {
            return 0.0;
        }
        let mut best = go(i + 1, used, w);
        for c in 0..used.len() {
            if !used[c] && w[i][c].is_finite() {
                used[c] = true;
                best = best.max(w[i][c] + go(i + 1, used, w));
                used[c] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; b.len()], &w)
}

/// Eight documents on two clean themes, then twelve unrelated word pairs.
/// Quality peaks once the themes have formed and falls steadily after.
pub fn decline_texts() -> Vec<String> {
    let themes = [
        ["rocket", "orbit", "launch", "shuttle", "satellite"],
        ["pitcher", "inning", "homer", "bullpen", "glove"],
    ];
    let mut out: Vec<String> = (0..8)
        .map(|i| {
            let t = &themes[i % 2];
            format!("{} {} {} {}", t[i % 5], t[(i + 1) % 5], t[(i + 2) % 5], t[(i + 3) % 5])
        })
        .collect();
    for pair in [
        "zebra quartz", "violin marble", "tundra pepper", "cobalt sonnet", "walrus ember", "falcon opal",
        "lagoon cipher", "meadow rivet", "harbor thistle", "canyon mosaic", "ferret lantern", "glacier whisk",
    ] {
        out.push(pair.to_string());
    }
    out
}

/// Write `texts` as a JSONL corpus with ids `d00`, `d01`, ...
pub fn write_corpus(dir: &std::path::Path, name: &str, texts: &[String]) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut body = String::new();
    for (i, t) in texts.iter().enumerate() {
        body.push_str(&serde_json::json!({ "id": format!("d{i:02}"), "text": t }).to_string());
        body.push('\n');
    }
    std::fs::write(&path, body).unwrap();
    path
}

pub fn desk280() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk280.jsonl")
}
