use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{QualityVector, METRICS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusMethod {
    #[default]
    WeightedSum,
    ParetoThenSum,
    Borda,
}

impl ConsensusMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsensusMethod::WeightedSum => "weighted_sum",
            ConsensusMethod::ParetoThenSum => "pareto_then_sum",
            ConsensusMethod::Borda => "borda",
        }
    }
}

impl std::str::FromStr for ConsensusMethod {
    type Err = RankingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weighted_sum" => Ok(Self::WeightedSum),
            "pareto_then_sum" => Ok(Self::ParetoThenSum),
            "borda" => Ok(Self::Borda),
            other => Err(RankingError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankingError {
    #[error("unknown consensus method {0:?}")]
    UnknownMethod(String),
    #[error("metric weights must be finite, non-negative and not all zero")]
    InvalidWeights,
}

/// Per-metric weights; normalized to sum 1 when scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricWeights(pub BTreeMap<String, f64>);

impl Default for MetricWeights {
    fn default() -> Self {
        Self(METRICS.iter().map(|m| (m.to_string(), 1.0)).collect())
    }
}

impl MetricWeights {
    pub fn normalized(&self) -> Result<BTreeMap<String, f64>, RankingError> {
        if self.0.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RankingError::InvalidWeights);
        }
        let total: f64 = self.0.values().sum();
        if total <= 0.0 {
            return Err(RankingError::InvalidWeights);
        }
        Ok(self.0.iter().map(|(m, w)| (m.clone(), w / total)).collect())
    }
}

/// One entry of a ranking request: metric values already scaled to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sandbox_id: String,
    pub normalized: BTreeMap<String, f64>,
    /// Acceptance-history weight of the candidate's schema, 0.5 is neutral.
    pub strategy_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub sandbox_id: String,
    pub rank: usize,
    pub score: f64,
    /// Pareto front index (0 = non-dominated); 0 for the other methods.
    pub front: usize,
}

/// Min-max scale oriented metric values over `candidates` plus `origin`, so a
/// candidate is judged against the state it started from as well as its
/// siblings. Constant metrics map to 0.5.
pub fn normalize_candidates(origin: &QualityVector, candidates: &[&QualityVector]) -> Vec<BTreeMap<String, f64>> {
    let oriented: Vec<BTreeMap<String, f64>> = candidates.iter().map(|q| q.oriented()).collect();
    let base = origin.oriented();
    let mut out = vec![BTreeMap::new(); candidates.len()];
    for m in METRICS {
        let values = oriented.iter().map(|o| o[m]).chain(std::iter::once(base[m]));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        for (slot, o) in out.iter_mut().zip(&oriented) {
            let v = if hi > lo { (o[m] - lo) / (hi - lo) } else { 0.5 };
            slot.insert(m.to_string(), v);
        }
    }
    out
}

/// `a` is at least as good as `b` on every weighted metric and strictly
/// better on one.
pub fn dominates(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>, weights: &BTreeMap<String, f64>) -> bool {
    let mut strictly = false;
    for (m, &w) in weights {
        if w <= 0.0 {
            continue;
        }
        let (x, y) = (value(a, m), value(b, m));
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

fn value(map: &BTreeMap<String, f64>, metric: &str) -> f64 {
    map.get(metric).copied().unwrap_or(0.0)
}

fn weighted_sum(c: &Candidate, weights: &BTreeMap<String, f64>) -> f64 {
    let base: f64 = weights.iter().map(|(m, w)| w * value(&c.normalized, m)).sum();
    base * (0.5 + c.strategy_weight)
}

fn pareto_fronts(candidates: &[Candidate], weights: &BTreeMap<String, f64>) -> Vec<usize> {
    let mut front = vec![usize::MAX; candidates.len()];
    let mut level = 0;
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    while !remaining.is_empty() {
        let current: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| {
                !remaining
                    .iter()
                    .any(|&j| j != i && dominates(&candidates[j].normalized, &candidates[i].normalized, weights))
            })
            .collect();
        for &i in &current {
            front[i] = level;
        }
        remaining.retain(|i| !current.contains(i));
        level += 1;
    }
    front
}

/// Per metric, a candidate earns one point for every candidate it strictly
/// beats, scaled by the metric weight.
fn borda_points(candidates: &[Candidate], weights: &BTreeMap<String, f64>) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| {
            weights
                .iter()
                .map(|(m, w)| {
                    let mine = value(&c.normalized, m);
                    let beaten = candidates.iter().filter(|o| value(&o.normalized, m) < mine).count();
                    w * beaten as f64
                })
                .sum()
        })
        .collect()
}

/// Total order over candidates, best first. Ties fall back to `sandbox_id`.
pub fn consensus_rank(
    candidates: &[Candidate],
    method: ConsensusMethod,
    weights: &MetricWeights,
) -> Result<Vec<RankedCandidate>, RankingError> {
    let weights = weights.normalized()?;
    let (scores, fronts): (Vec<f64>, Vec<usize>) = match method {
        ConsensusMethod::WeightedSum => (
            candidates.iter().map(|c| weighted_sum(c, &weights)).collect(),
            vec![0; candidates.len()],
        ),
        ConsensusMethod::ParetoThenSum => (
            candidates.iter().map(|c| weighted_sum(c, &weights)).collect(),
            pareto_fronts(candidates, &weights),
        ),
        ConsensusMethod::Borda => (borda_points(candidates, &weights), vec![0; candidates.len()]),
    };
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        fronts[a]
            .cmp(&fronts[b])
            .then(scores[b].total_cmp(&scores[a]))
            .then_with(|| candidates[a].sandbox_id.cmp(&candidates[b].sandbox_id))
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| RankedCandidate {
            sandbox_id: candidates[i].sandbox_id.clone(),
            rank,
            score: scores[i],
            front: fronts[i],
        })
        .collect())
}
