use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ihtm::ModelParams;
use crate::quality::{ConsensusMethod, MetricWeights};

/// Budget class of a speculation batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BudgetLevel {
    L1,
    L2,
    L3,
    #[serde(rename = "metric")]
    Metric,
}

impl BudgetLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetLevel::L1 => "L1",
            BudgetLevel::L2 => "L2",
            BudgetLevel::L3 => "L3",
            BudgetLevel::Metric => "metric",
        }
    }
}

impl std::str::FromStr for BudgetLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L1" | "l1" => Ok(Self::L1),
            "L2" | "l2" => Ok(Self::L2),
            "L3" | "l3" => Ok(Self::L3),
            "metric" => Ok(Self::Metric),
            other => Err(format!("unknown budget level {other:?}")),
        }
    }
}

/// Runtime budgets in milliseconds per level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    #[serde(rename = "L1")]
    pub l1: u64,
    #[serde(rename = "L2")]
    pub l2: u64,
    #[serde(rename = "L3")]
    pub l3: u64,
    pub metric: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            l1: 500,
            l2: 5000,
            l3: 5000,
            metric: 5000,
        }
    }
}

impl Budgets {
    pub fn get(&self, level: BudgetLevel) -> Duration {
        Duration::from_millis(match level {
            BudgetLevel::L1 => self.l1,
            BudgetLevel::L2 => self.l2,
            BudgetLevel::L3 => self.l3,
            BudgetLevel::Metric => self.metric,
        })
    }
}

/// When a session speculates on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerMode {
    /// On quality decline.
    #[default]
    Metric,
    /// Before every `b`-th insert, regardless of quality.
    EveryBuffer,
    Off,
}

impl TriggerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerMode::Metric => "metric",
            TriggerMode::EveryBuffer => "every-buffer",
            TriggerMode::Off => "off",
        }
    }
}

impl std::str::FromStr for TriggerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "metric" => Ok(Self::Metric),
            "every-buffer" | "every_buffer" => Ok(Self::EveryBuffer),
            "off" => Ok(Self::Off),
            other => Err(format!("unknown trigger mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeculationConfig {
    /// Corpus size; filled in from the corpus when a session starts.
    pub k: Option<usize>,
    /// Strategies per automatic batch, taken in catalog order.
    pub n: usize,
    /// Buffer size and forecast horizon.
    pub b: usize,
    pub budgets: Budgets,
    pub max_workers: usize,
    pub theta_new: f64,
    pub max_depth: usize,
    pub tau_trigger: f64,
    pub window: usize,
    pub tau_match: f64,
    /// Acceptance EMA rate.
    pub alpha: f64,
    pub consensus: ConsensusMethod,
    pub metric_weights: MetricWeights,
    pub trigger: TriggerMode,
    /// Budget class used by automatic triggers; defaults to `metric`.
    pub trigger_budget: BudgetLevel,
    pub pause_on_speculation: bool,
    /// Sandboxes pushed to subscribers with a delta.
    pub present_top: usize,
    /// Strategy id → artificial delay in ms, for budget tests.
    pub fault_injection_ms: BTreeMap<String, u64>,
}

impl Default for SpeculationConfig {
    fn default() -> Self {
        Self {
            k: None,
            n: 7,
            b: 10,
            budgets: Budgets::default(),
            max_workers: 4,
            theta_new: 0.3,
            max_depth: 3,
            tau_trigger: 0.10,
            window: 10,
            tau_match: 0.5,
            alpha: 0.3,
            consensus: ConsensusMethod::WeightedSum,
            metric_weights: MetricWeights::default(),
            trigger: TriggerMode::Metric,
            trigger_budget: BudgetLevel::Metric,
            pause_on_speculation: true,
            present_top: 3,
            fault_injection_ms: BTreeMap::new(),
        }
    }
}

impl SpeculationConfig {
    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            theta_new: self.theta_new,
            max_depth: self.max_depth,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if self.k == Some(0) {
            problems.push("k must be at least 1");
        }
        if self.n == 0 {
            problems.push("n must be at least 1");
        }
        if self.b == 0 {
            problems.push("b must be at least 1");
        }
        let b = self.budgets;
        if b.l1 == 0 || b.l2 == 0 || b.l3 == 0 || b.metric == 0 {
            problems.push("budgets must be positive");
        }
        if self.max_workers == 0 {
            problems.push("max_workers must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push("alpha must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.theta_new) {
            problems.push("theta_new must lie in [0, 1]");
        }
        if self.max_depth == 0 {
            problems.push("max_depth must be at least 1");
        }
        if !(self.tau_match > 0.0 && self.tau_match <= 1.0) {
            problems.push("tau_match must lie in (0, 1]");
        }
        if self.tau_trigger.is_nan() || self.tau_trigger < 0.0 {
            problems.push("tau_trigger must be non-negative");
        }
        if self.window < 2 {
            problems.push("window must be at least 2");
        }
        if self.metric_weights.normalized().is_err() {
            problems.push("metric weights must be non-negative and not all zero");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}
