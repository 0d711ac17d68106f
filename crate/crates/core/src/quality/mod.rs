//! Model quality monitor: per-state metrics, decline detection and the
//! consensus ranking of competing sandboxes.

mod history;
mod ranking;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, TermId};
use crate::ihtm::ModelState;

pub use history::{should_trigger, HistoryError, QualityHistory, TriggerDecision};
pub use ranking::{
    consensus_rank, dominates, normalize_candidates, Candidate, ConsensusMethod, MetricWeights, RankedCandidate,
    RankingError,
};

pub const TOPIC_COUNT: &str = "topic_count";
pub const MEAN_TOPIC_SIZE: &str = "mean_topic_size";
pub const SIZE_ENTROPY: &str = "size_entropy";
pub const COHERENCE_PMI: &str = "coherence_pmi";
pub const MAX_DEPTH: &str = "max_depth";

/// Metric names in canonical order.
pub const METRICS: [&str; 5] = [TOPIC_COUNT, MEAN_TOPIC_SIZE, SIZE_ENTROPY, COHERENCE_PMI, MAX_DEPTH];

/// Number of centroid terms per topic that enter the coherence score.
pub const TOP_TERMS: usize = 10;

/// Preferred leaf depth: a single topic level between root and documents.
pub const TARGET_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    pub topic_count: usize,
    pub mean_topic_size: f64,
    pub size_entropy: f64,
    pub coherence_pmi: f64,
    pub max_depth: usize,
    /// Topics with fewer than two top terms; they contribute coherence 0.
    pub degenerate_topics: usize,
    /// Corpus size the targets below are derived from.
    pub corpus_size: usize,
    /// Metric → value in [0, 1], higher is better.
    pub normalized: BTreeMap<String, f64>,
}

impl QualityVector {
    /// `round(sqrt(k))`, at least 1.
    pub fn target_topic_count(&self) -> f64 {
        (self.corpus_size as f64).sqrt().round().max(1.0)
    }

    /// Raw metrics turned "higher is better": closeness metrics become the
    /// negated distance to their target.
    pub fn oriented(&self) -> BTreeMap<String, f64> {
        let target = self.target_topic_count();
        let size_target = self.corpus_size as f64 / target;
        BTreeMap::from([
            (TOPIC_COUNT.to_string(), -(self.topic_count as f64 - target).abs()),
            (MEAN_TOPIC_SIZE.to_string(), -(self.mean_topic_size - size_target).abs()),
            (SIZE_ENTROPY.to_string(), self.size_entropy),
            (COHERENCE_PMI.to_string(), self.coherence_pmi),
            (MAX_DEPTH.to_string(), -(self.max_depth as f64 - TARGET_DEPTH as f64).abs()),
        ])
    }

    /// Fixed-scale normalization used for the trigger history, where values
    /// must be comparable across time rather than across a candidate set.
    pub fn absolute_normalized(&self) -> BTreeMap<String, f64> {
        let k = self.corpus_size.max(1) as f64;
        let target = self.target_topic_count();
        let entropy = if self.topic_count >= 2 {
            self.size_entropy / (self.topic_count as f64).ln()
        } else {
            0.0
        };
        // Smoothed PMI lies in [-ln k, ln 2k].
        let (lo, hi) = (-k.ln(), (2.0 * k).ln());
        let coherence = ((self.coherence_pmi - lo) / (hi - lo)).clamp(0.0, 1.0);
        BTreeMap::from([
            (TOPIC_COUNT.to_string(), closeness(self.topic_count as f64, target)),
            (MEAN_TOPIC_SIZE.to_string(), closeness(self.mean_topic_size, k / target)),
            (SIZE_ENTROPY.to_string(), entropy.clamp(0.0, 1.0)),
            (COHERENCE_PMI.to_string(), coherence),
            (MAX_DEPTH.to_string(), closeness(self.max_depth as f64, TARGET_DEPTH as f64)),
        ])
    }

    /// Equal-weight mean of the normalized metrics.
    pub fn score(&self) -> f64 {
        if self.normalized.is_empty() {
            return 0.0;
        }
        self.normalized.values().sum::<f64>() / self.normalized.len() as f64
    }
}

fn closeness(x: f64, target: f64) -> f64 {
    let scale = x.abs().max(target.abs());
    if scale == 0.0 {
        1.0
    } else {
        1.0 - (x - target).abs() / scale
    }
}

/// `ln(p(a,b) / (p(a) p(b)))` from document frequencies, adding `smoothing`
/// to the joint count.
pub fn pmi(stats: &CorpusStats, a: TermId, b: TermId, smoothing: f64) -> f64 {
    let k = stats.k as f64;
    let joint = (stats.cooccurrence(a, b) as f64 + smoothing) / k;
    let pa = stats.df(a) as f64 / k;
    let pb = stats.df(b) as f64 / k;
    (joint / (pa * pb)).ln()
}

/// Mean smoothed PMI over all pairs of the topic's top centroid terms.
/// `None` when the centroid has fewer than two terms.
pub fn topic_coherence(state: &ModelState, topic_id: &str, stats: &CorpusStats) -> Option<f64> {
    let centroid = state.node(topic_id)?.centroid.as_ref()?;
    let terms = centroid.top_terms(TOP_TERMS);
    if terms.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in terms.iter().enumerate() {
        for &b in &terms[i + 1..] {
            sum += pmi(stats, a, b, 1.0);
            pairs += 1;
        }
    }
    Some(sum / pairs as f64)
}

/// Evaluate the metric vector of a state. Topic size is the number of
/// documents below the topic; entropy is over sizes normalized to sum 1.
pub fn evaluate(state: &ModelState, stats: &CorpusStats) -> QualityVector {
    let topics: Vec<_> = state.topics().collect();
    let sizes: Vec<f64> = topics
        .iter()
        .map(|t| state.descendant_docs(t.node_id.as_str()).len() as f64)
        .collect();
    let total: f64 = sizes.iter().sum();
    let mean_topic_size = if sizes.is_empty() { 0.0 } else { total / sizes.len() as f64 };
    let size_entropy = if sizes.len() < 2 || total == 0.0 {
        0.0
    } else {
        sizes
            .iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| {
                let p = s / total;
                -p * p.ln()
            })
            .sum::<f64>()
            .max(0.0)
    };
    let mut degenerate_topics = 0;
    let mut coherence_sum = 0.0;
    for t in &topics {
        match topic_coherence(state, t.node_id.as_str(), stats) {
            Some(c) => coherence_sum += c,
            None => degenerate_topics += 1,
        }
    }
    let coherence_pmi = if topics.is_empty() {
        0.0
    } else {
        coherence_sum / topics.len() as f64
    };
    let max_depth = state
        .leaves()
        .map(|l| state.depth(l.node_id.as_str()))
        .max()
        .unwrap_or(0);
    let mut q = QualityVector {
        topic_count: topics.len(),
        mean_topic_size,
        size_entropy,
        coherence_pmi,
        max_depth,
        degenerate_topics,
        corpus_size: stats.k,
        normalized: BTreeMap::new(),
    };
    q.normalized = q.absolute_normalized();
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ihtm::test_support::corpus;
    use crate::ihtm::ModelParams;

    #[test]
    fn universal_term_has_zero_unsmoothed_pmi() {
        let lists = vec![vec!["alpha", "beta"], vec!["alpha"], vec!["alpha", "beta", "gamma"]];
        let stats = CorpusStats::from_token_lists(&lists);
        let v = stats.vocabulary();
        let (a, b) = (v.id("alpha").unwrap(), v.id("beta").unwrap());
        assert!(pmi(&stats, a, b, 0.0).abs() < 1e-12);
    }

    #[test]
    fn single_topic_has_zero_entropy() {
        let c = corpus(&[
            ("a", "rocket orbit launch"),
            ("b", "rocket orbit launch"),
            ("z", "pitcher inning homer"),
        ]);
        let mut s = ModelState::new(&c);
        let p = ModelParams { theta_new: 0.3, max_depth: 1 };
        s.insert_next(&p).unwrap();
        s.insert_next(&p).unwrap();
        let q = evaluate(&s, &c.stats);
        assert_eq!(q.topic_count, 1);
        assert_eq!(q.size_entropy, 0.0);
        assert_eq!(q.mean_topic_size, 2.0);
        assert_eq!(q.max_depth, 2);
    }

    #[test]
    fn normalized_values_are_in_unit_interval() {
        let c = corpus(&[
            ("a", "rocket orbit launch"),
            ("b", "pitcher inning homer"),
            ("c", "rocket shuttle orbit"),
            ("d", "inning pitcher bullpen"),
        ]);
        let mut s = ModelState::new(&c);
        for _ in 0..4 {
            s.insert_next(&ModelParams::default()).unwrap();
        }
        let q = evaluate(&s, &c.stats);
        assert_eq!(q.normalized.len(), METRICS.len());
        assert!(q.normalized.values().all(|v| (0.0..=1.0).contains(v)));
        assert!(q.size_entropy <= (q.topic_count as f64).ln() + 1e-12);
    }

    #[test]
    fn closeness_is_one_on_target() {
        assert_eq!(closeness(3.0, 3.0), 1.0);
        assert_eq!(closeness(0.0, 0.0), 1.0);
        assert_eq!(closeness(0.0, 4.0), 0.0);
        assert!((closeness(6.0, 3.0) - 0.5).abs() < 1e-12);
    }
}
