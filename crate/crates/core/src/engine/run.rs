use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::sandbox::{Dimensions, AUTO_COMPLETE, NEXT_MOVE, USER_MOVE};
use crate::cancel::{CancelToken, Interrupted};
use crate::corpus::CorpusStats;
use crate::ihtm::{ModelError, ModelParams, ModelState, NodeId};
use crate::quality::{evaluate, QualityVector};
use crate::strategies::{Strategy, StrategyContext, StrategyDescriptor, StrategyError, StrategyRegistry};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Interrupted(#[from] Interrupted),
    #[error(transparent)]
    Strategy(StrategyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("sandbox computation panicked")]
    Panicked,
}

impl From<StrategyError> for RunError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::Interrupted(i) => RunError::Interrupted(i),
            other => RunError::Strategy(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forecast {
    pub state: ModelState,
    pub inserted: usize,
    /// The buffer held fewer documents than asked for.
    pub short: bool,
}

/// Insert the next `min(horizon, |buffer|)` buffered documents.
pub fn forecast(
    state: &ModelState,
    horizon: usize,
    params: &ModelParams,
    cancel: &CancelToken,
) -> Result<Forecast, RunError> {
    let mut next = state.clone();
    let mut inserted = 0;
    while inserted < horizon {
        cancel.checkpoint()?;
        if next.insert_next(params)?.is_none() {
            break;
        }
        inserted += 1;
    }
    Ok(Forecast {
        state: next,
        inserted,
        short: inserted < horizon,
    })
}

#[derive(Debug, Clone)]
pub struct SandboxRun {
    pub state: ModelState,
    pub quality: QualityVector,
    pub applied: bool,
    pub inserted: usize,
    pub warning: Option<String>,
}

/// Moves, then strategy, then forecast, then evaluation.
pub fn execute(
    origin: &ModelState,
    dims: &Dimensions,
    registry: &StrategyRegistry,
    stats: &CorpusStats,
    base: ModelParams,
    cancel: &CancelToken,
) -> Result<SandboxRun, RunError> {
    let model = base.with_overrides(&dims.model_overrides);
    let mut state = origin.clone();
    let mut applied = false;
    for m in &dims.moves {
        cancel.checkpoint()?;
        let target = NodeId::new(m.target.as_str());
        let from = state.parent_of_doc(&m.doc_id).cloned();
        if from.as_ref() != Some(&target) {
            state.edit(|e| e.move_leaf(&m.doc_id, &target))?;
            applied = true;
        }
    }
    if registry.get(&dims.strategy_id).is_some() {
        let ctx = StrategyContext {
            stats,
            model,
            seed: dims.seed,
            cancel: cancel.clone(),
        };
        let out = registry.apply(&state, &dims.strategy_id, &dims.params, &ctx)?;
        applied |= out.applied;
        state = out.state;
    } else if ![USER_MOVE, NEXT_MOVE, AUTO_COMPLETE].contains(&dims.strategy_id.as_str()) {
        return Err(RunError::UnknownStrategy(dims.strategy_id.clone()));
    }
    let f = forecast(&state, dims.temporal_horizon, &model, cancel)?;
    let warning = f
        .short
        .then(|| format!("forecast horizon {} cut to {}", dims.temporal_horizon, f.inserted));
    cancel.checkpoint()?;
    let quality = evaluate(&f.state, stats);
    cancel.checkpoint()?;
    Ok(SandboxRun {
        state: f.state,
        quality,
        applied,
        inserted: f.inserted,
        warning,
    })
}

/// Wraps a strategy with a cooperative delay; used to test budgets.
pub struct Delayed {
    pub inner: Arc<dyn Strategy>,
    pub delay: Duration,
}

impl Strategy for Delayed {
    fn descriptor(&self) -> StrategyDescriptor {
        self.inner.descriptor()
    }

    fn apply(
        &self,
        state: &mut ModelState,
        params: &BTreeMap<String, f64>,
        ctx: &StrategyContext<'_>,
    ) -> Result<bool, StrategyError> {
        ctx.cancel.sleep(self.delay)?;
        self.inner.apply(state, params, ctx)
    }
}

/// Built-in registry with the configured delays applied.
pub fn registry_with_faults(faults: &BTreeMap<String, u64>) -> Result<StrategyRegistry, StrategyError> {
    let mut registry = StrategyRegistry::builtin();
    for (id, ms) in faults {
        let inner = registry
            .get(id)
            .cloned()
            .ok_or_else(|| StrategyError::UnknownStrategy(id.clone()))?;
        registry.replace(Arc::new(Delayed {
            inner,
            delay: Duration::from_millis(*ms),
        }))?;
    }
    Ok(registry)
}
