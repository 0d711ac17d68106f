use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{QualityVector, METRICS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("cursor {got} does not advance past {last}")]
    CursorNotIncreasing { last: usize, got: usize },
}

/// Ring buffer of `(insert_cursor, QualityVector)` readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityHistory {
    capacity: usize,
    entries: VecDeque<(usize, QualityVector)>,
}

impl QualityHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, cursor: usize, quality: QualityVector) -> Result<(), HistoryError> {
        if let Some(&(last, _)) = self.entries.back() {
            if cursor <= last {
                return Err(HistoryError::CursorNotIncreasing { last, got: cursor });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((cursor, quality));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&(usize, QualityVector)> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, QualityVector)> {
        self.entries.iter()
    }

    /// Keep only the latest reading, so the next trigger needs a fresh decline.
    pub fn rebase(&mut self) {
        while self.entries.len() > 1 {
            self.entries.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub fire: bool,
    /// Score drop from the window maximum to the latest reading.
    pub drop: f64,
    /// Metric with the largest decline over the same span.
    pub reason: Option<String>,
}

/// Fire when the equal-weight score fell by more than `tau` between the best
/// reading of the last `window` entries and the latest one.
pub fn should_trigger(history: &QualityHistory, tau: f64, window: usize) -> TriggerDecision {
    let quiet = TriggerDecision {
        fire: false,
        drop: 0.0,
        reason: None,
    };
    if history.len() < 2 {
        return quiet;
    }
    let skip = history.len().saturating_sub(window.max(2));
    let recent: Vec<&QualityVector> = history.iter().skip(skip).map(|(_, q)| q).collect();
    let latest = *recent.last().expect("non-empty");
    let best = recent
        .iter()
        .copied()
        .max_by(|a, b| a.score().total_cmp(&b.score()))
        .expect("non-empty");
    let drop = best.score() - latest.score();
    let reason = METRICS
        .iter()
        .map(|m| {
            let before = best.normalized.get(*m).copied().unwrap_or(0.0);
            let after = latest.normalized.get(*m).copied().unwrap_or(0.0);
            (*m, before - after)
        })
        .filter(|&(_, d)| d > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(m, _)| m.to_string());
    TriggerDecision {
        fire: drop > tau,
        drop,
        reason,
    }
}
