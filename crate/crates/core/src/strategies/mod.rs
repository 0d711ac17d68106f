//! Tree optimization strategies run inside sandboxes.
//!
//! Every strategy is a deterministic function of `(state, params, seed)` that
//! preserves the set of documents in the tree. Strategies that find nothing
//! to do return the input unchanged with `applied == false`.

mod builtin;
mod kmeans;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cancel::{CancelToken, Interrupted};
use crate::corpus::CorpusStats;
use crate::ihtm::{ModelError, ModelParams, ModelState};

pub use builtin::{
    CompactChains, Identity, MergeSimilarSiblings, ReassignMisfitDocument, RebalanceSmallTopics,
    RemoveOutlierDocuments, SplitIncoherentTopic,
};
pub use kmeans::spherical_two_means;
pub(crate) use builtin::{best_topic, leaves_under_topics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyCategory {
    Merge,
    Split,
    Outlier,
    Compact,
    Reassign,
    Rebalance,
    Identity,
    /// Strategies registered from outside the built-in catalog.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyDescriptor {
    pub strategy_id: String,
    pub display_name: String,
    /// Parameter name → default value.
    pub parameters: BTreeMap<String, f64>,
    pub category: StrategyCategory,
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("strategy {strategy} has no parameter {param:?}")]
    UnknownParameter { strategy: String, param: String },
    #[error("strategy {0:?} is already registered")]
    Duplicate(String),
    #[error(transparent)]
    Interrupted(#[from] Interrupted),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything a strategy may read besides the tree itself.
#[derive(Debug, Clone)]
pub struct StrategyContext<'a> {
    pub stats: &'a CorpusStats,
    pub model: ModelParams,
    pub seed: u64,
    pub cancel: CancelToken,
}

impl<'a> StrategyContext<'a> {
    pub fn new(stats: &'a CorpusStats, seed: u64) -> Self {
        Self {
            stats,
            model: ModelParams::default(),
            seed,
            cancel: CancelToken::new(),
        }
    }
}

/// Extension point for tree optimizations.
pub trait Strategy: Send + Sync {
    fn descriptor(&self) -> StrategyDescriptor;

    /// Mutate `state` in place. `params` holds every declared parameter,
    /// defaults filled in. Returns whether anything was done.
    fn apply(
        &self,
        state: &mut ModelState,
        params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError>;
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub state: ModelState,
    pub applied: bool,
}

/// Ordered set of strategies keyed by id.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    entries: Vec<(StrategyDescriptor, Arc<dyn Strategy>)>,
}

impl std::fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|(d, _)| &d.strategy_id)).finish()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The seven built-in strategies in catalog order.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        let all: [Arc<dyn Strategy>; 7] = [
            Arc::new(MergeSimilarSiblings),
            Arc::new(SplitIncoherentTopic),
            Arc::new(RemoveOutlierDocuments),
            Arc::new(CompactChains),
            Arc::new(ReassignMisfitDocument),
            Arc::new(RebalanceSmallTopics),
            Arc::new(Identity),
        ];
        for s in all {
            r.register(s).expect("built-in ids are unique");
        }
        r
    }

    pub fn register(&mut self, strategy: Arc<dyn Strategy>) -> Result<(), StrategyError> {
        let d = strategy.descriptor();
        if self.get(&d.strategy_id).is_some() {
            return Err(StrategyError::Duplicate(d.strategy_id));
        }
        self.entries.push((d, strategy));
        Ok(())
    }

    /// Swap the implementation behind an existing id, keeping its position.
    pub fn replace(&mut self, strategy: Arc<dyn Strategy>) -> Result<(), StrategyError> {
        let d = strategy.descriptor();
        let slot = self
            .entries
            .iter_mut()
            .find(|(e, _)| e.strategy_id == d.strategy_id)
            .ok_or_else(|| StrategyError::UnknownStrategy(d.strategy_id.clone()))?;
        *slot = (d, strategy);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Strategy>> {
        self.entries.iter().find(|(d, _)| d.strategy_id == id).map(|(_, s)| s)
    }

    pub fn descriptors(&self) -> Vec<StrategyDescriptor> {
        self.entries.iter().map(|(d, _)| d.clone()).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|(d, _)| d.strategy_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Defaults of `id` overlaid with `overrides`.
    pub fn resolve_params(
        &self,
        id: &str,
        overrides: &BTreeMap<String, f64>,
    ) -> Result<BTreeMap<String, f64>, StrategyError> {
        let (d, _) = self
            .entries
            .iter()
            .find(|(d, _)| d.strategy_id == id)
            .ok_or_else(|| StrategyError::UnknownStrategy(id.to_string()))?;
        let mut params = d.parameters.clone();
        for (k, v) in overrides {
            match params.get_mut(k) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(StrategyError::UnknownParameter {
                        strategy: id.to_string(),
                        param: k.clone(),
                    })
                }
            }
        }
        Ok(params)
    }

    /// Apply strategy `id` to a copy of `state`.
    pub fn apply(
        &self,
        state: &ModelState,
        id: &str,
        overrides: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<StrategyOutcome, StrategyError> {
        let strategy = self
            .get(id)
            .ok_or_else(|| StrategyError::UnknownStrategy(id.to_string()))?;
        let params = self.resolve_params(id, overrides)?;
        ctx.cancel.checkpoint()?;
        let mut next = state.clone();
        let applied = strategy.apply(&mut next, &params, ctx)?;
        if !applied {
            return Ok(StrategyOutcome {
                state: state.clone(),
                applied,
            });
        }
        Ok(StrategyOutcome { state: next, applied })
    }
}

fn builtin_registry() -> &'static StrategyRegistry {
    static REGISTRY: OnceLock<StrategyRegistry> = OnceLock::new();
    REGISTRY.get_or_init(StrategyRegistry::builtin)
}

/// Descriptors of the built-in catalog.
pub fn list_strategies() -> Vec<StrategyDescriptor> {
    builtin_registry().descriptors()
}

/// Apply a built-in strategy with default model parameters and no deadline.
pub fn apply_strategy(
    state: &ModelState,
    strategy_id: &str,
    params: &BTreeMap<String, f64>,
    seed: u64,
    stats: &CorpusStats,
) -> Result<StrategyOutcome, StrategyError> {
    builtin_registry().apply(state, strategy_id, params, &StrategyContext::new(stats, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ihtm::test_support::corpus;
    use crate::ihtm::NodeId;

    #[test]
    fn catalog_has_seven_distinct_strategies() {
        let all = list_strategies();
        assert_eq!(all.len(), 7);
        let ids: std::collections::BTreeSet<_> = all.iter().map(|d| d.strategy_id.as_str()).collect();
        assert_eq!(ids.len(), 7);
        assert_eq!(
            all.iter().filter(|d| d.category == StrategyCategory::Identity).count(),
            1
        );
    }

    #[test]
    fn compact_collapses_a_chain() {
        let c = corpus(&[("a", "rocket orbit launch"), ("z", "pitcher inning homer")]);
        let mut s = ModelState::new(&c);
        let doc = c.get("a").unwrap().clone();
        s.edit(|e| -> Result<(), ModelError> {
            let t1 = e.new_topic(&NodeId::root())?;
            let t2 = e.new_topic(&t1)?;
            e.attach_new(doc, &t2)?;
            Ok(())
        })
        .unwrap();
        assert_eq!(s.depth("doc:a"), 3);
        let out = apply_strategy(&s, "compact_chains", &BTreeMap::new(), 0, &c.stats).unwrap();
        assert!(out.applied);
        out.state.validate().unwrap();
        assert_eq!(out.state.depth("doc:a"), 1);
        assert_eq!(out.state.leaf_count(), 1);
    }

    #[test]
    fn merge_joins_identical_siblings() {
        let c = corpus(&[
            ("a", "rocket orbit launch"),
            ("b", "rocket orbit launch"),
            ("z", "pitcher inning homer"),
        ]);
        let mut s = ModelState::new(&c);
        let (a, b) = (c.get("a").unwrap().clone(), c.get("b").unwrap().clone());
        s.edit(|e| -> Result<(), ModelError> {
            let t1 = e.new_topic(&NodeId::root())?;
            let t2 = e.new_topic(&NodeId::root())?;
            e.attach_new(a, &t1)?;
            e.attach_new(b, &t2)?;
            Ok(())
        })
        .unwrap();
        assert_eq!(s.topic_count(), 2);
        let out = apply_strategy(&s, "merge_similar_siblings", &BTreeMap::new(), 0, &c.stats).unwrap();
        assert!(out.applied);
        out.state.validate().unwrap();
        assert_eq!(out.state.topic_count(), 1);
        assert_eq!(out.state.leaf_count(), 2);
    }

    #[test]
    fn identity_leaves_digest_unchanged() {
        let c = corpus(&[("a", "rocket orbit launch"), ("b", "pitcher inning homer")]);
        let mut s = ModelState::new(&c);
        s.insert_next(&ModelParams::default()).unwrap();
        let out = apply_strategy(&s, "identity", &BTreeMap::new(), 0, &c.stats).unwrap();
        assert!(!out.applied);
        assert_eq!(out.state.digest(), s.digest());
    }

    #[test]
    fn unknown_strategy_and_parameter_are_errors() {
        let c = corpus(&[("a", "rocket orbit launch"), ("b", "pitcher inning homer")]);
        let s = ModelState::new(&c);
        assert!(matches!(
            apply_strategy(&s, "shuffle", &BTreeMap::new(), 0, &c.stats),
            Err(StrategyError::UnknownStrategy(_))
        ));
        let bad = BTreeMap::from([("tau".to_string(), 0.1)]);
        assert!(matches!(
            apply_strategy(&s, "merge_similar_siblings", &bad, 0, &c.stats),
            Err(StrategyError::UnknownParameter { .. })
        ));
    }

    #[test]
    fn registry_rejects_duplicates_and_accepts_replacements() {
        let mut r = StrategyRegistry::builtin();
        assert!(matches!(r.register(Arc::new(Identity)), Err(StrategyError::Duplicate(_))));
        r.replace(Arc::new(Identity)).unwrap();
        assert_eq!(r.len(), 7);
        assert_eq!(r.ids().last().map(String::as_str), Some("identity"));
    }

    #[test]
    fn cancelled_context_interrupts() {
        let c = corpus(&[("a", "rocket orbit launch"), ("b", "pitcher inning homer")]);
        let s = ModelState::new(&c);
        let ctx = StrategyContext::new(&c.stats, 0);
        ctx.cancel.cancel();
        let r = StrategyRegistry::builtin().apply(&s, "identity", &BTreeMap::new(), &ctx);
        assert!(matches!(r, Err(StrategyError::Interrupted(Interrupted::Cancelled))));
    }
}
