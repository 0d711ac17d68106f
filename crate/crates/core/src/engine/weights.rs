use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Weight of an unseen schema.
pub const NEUTRAL_WEIGHT: f64 = 0.5;

/// Acceptance history per sandbox schema (the strategy id, or the kind of
/// interaction move). Weights stay in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyWeights(BTreeMap<String, f64>);

impl StrategyWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, schema: &str) -> f64 {
        self.0.get(schema).copied().unwrap_or(NEUTRAL_WEIGHT)
    }

    pub fn record(&mut self, schema: &str, accepted: bool, alpha: f64) {
        let w = update_strategy_weight(self.get(schema), accepted, alpha);
        self.0.insert(schema.to_string(), w);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// `w' = (1 - alpha) w + alpha [accepted]`.
pub fn update_strategy_weight(w: f64, accepted: bool, alpha: f64) -> f64 {
    let target = if accepted { 1.0 } else { 0.0 };
    ((1.0 - alpha) * w + alpha * target).clamp(0.0, 1.0)
}

/// Functional form: returns the updated map.
pub fn update_strategy_weights(
    weights: &StrategyWeights,
    strategy_id: &str,
    accepted: bool,
    alpha: f64,
) -> StrategyWeights {
    let mut next = weights.clone();
    next.record(strategy_id, accepted, alpha);
    next
}
