//! Sessions without a user: a fixed policy resolves every batch.
//!
//! The driver inserts one document at a time. Whenever a batch opens it waits
//! for the batch to settle, then lets the policy accept or reject. Pausing is
//! switched off, since nothing would ever resume it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{BudgetLevel, SandboxStatus, TriggerMode};
use crate::quality::QualityVector;
use crate::service::{Session, SessionConfig, SessionError};

/// How a headless run resolves each batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoPolicy {
    /// Leave batches alone; the next insert makes them stale.
    None,
    /// Accept the best-ranked ready sandbox.
    Top1,
    /// With probability `p` accept a uniformly chosen ready sandbox,
    /// otherwise reject them all.
    Random(f64),
    /// Reject every ready sandbox.
    Reject,
}

impl fmt::Display for AutoPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AutoPolicy::None => f.write_str("none"),
            AutoPolicy::Top1 => f.write_str("top1"),
            AutoPolicy::Random(p) => write!(f, "random:{p}"),
            AutoPolicy::Reject => f.write_str("reject"),
        }
    }
}

impl FromStr for AutoPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(AutoPolicy::None),
            "top1" => Ok(AutoPolicy::Top1),
            "reject" => Ok(AutoPolicy::Reject),
            _ => {
                let p = s
                    .strip_prefix("random:")
                    .ok_or_else(|| format!("unknown policy {s:?}; expected none, top1, reject or random:<p>"))?;
                let p: f64 = p.parse().map_err(|_| format!("bad probability in {s:?}"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("probability in {s:?} must lie in [0, 1]"));
                }
                Ok(AutoPolicy::Random(p))
            }
        }
    }
}

impl Serialize for AutoPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AutoPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50: f64,
    pub p95: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles; all zero for no samples.
    pub fn of(samples: &[f64]) -> Self {
        let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            count: v.len(),
            p50: rank(0.50),
            p95: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub overall: Percentiles,
    pub by_budget: BTreeMap<String, Percentiles>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub accepted: usize,
    pub rejected: usize,
    /// Batches left unresolved.
    pub ignored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub cursor: usize,
    pub score: f64,
}

/// Summary of one headless run, written as JSON by `specex run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub seed: u64,
    pub policy: AutoPolicy,
    pub trigger: TriggerMode,
    pub k: usize,
    pub n: usize,
    pub b: usize,
    pub batches: usize,
    pub sandboxes_total: usize,
    pub by_status: BTreeMap<String, usize>,
    pub decisions: Decisions,
    /// Score after every change to the main state.
    pub quality_trajectory: Vec<TrajectoryPoint>,
    /// Sandbox runtimes in milliseconds.
    pub latency_ms: Latency,
    pub final_digest: String,
    pub final_quality: QualityVector,
    pub runtime_ms: f64,
}

/// Drive `session` to the end of its buffer under `policy`.
pub fn run(session: &mut Session, policy: AutoPolicy) -> Result<RunResults, SessionError> {
    let started = Instant::now();
    session.set_pause_on_speculation(false);
    let mut rng = ChaCha8Rng::seed_from_u64(session.config().seed);
    let mut decisions = Decisions::default();
    let mut trajectory = vec![point(session)];
    let mut batches = 0;
    loop {
        let report = session.step(1)?;
        if report.inserted > 0 {
            trajectory.push(point(session));
        }
        for batch in &report.batches {
            batches += 1;
            session.wait_batch(batch, None)?;
            let ranked = session.rank_batch(batch)?;
            let choice = match policy {
                AutoPolicy::None => {
                    decisions.ignored += 1;
                    continue;
                }
                AutoPolicy::Top1 => ranked.first().map(|r| r.sandbox_id.clone()),
                AutoPolicy::Reject => None,
                AutoPolicy::Random(p) => {
                    if !ranked.is_empty() && rng.random::<f64>() < p {
                        Some(ranked[rng.random_range(0..ranked.len())].sandbox_id.clone())
                    } else {
                        None
                    }
                }
            };
            match choice {
                Some(id) => {
                    session.accept(&id)?;
                    decisions.accepted += 1;
                    trajectory.push(point(session));
                }
                None => {
                    for r in &ranked {
                        session.reject(&r.sandbox_id)?;
                    }
                    decisions.rejected += 1;
                }
            }
        }
        if report.inserted == 0 && report.batches.is_empty() {
            break;
        }
    }
    session.sync()?;
    Ok(results(session, policy, batches, decisions, trajectory, started))
}

/// Open `corpus` with `config` and run it.
pub fn run_corpus(corpus: &Path, config: SessionConfig, policy: AutoPolicy) -> Result<RunResults, SessionError> {
    let mut session = Session::create(corpus, config)?;
    run(&mut session, policy)
}

/// One cell of a benchmark matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub n: usize,
    pub b: usize,
    pub policy: AutoPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub b: usize,
    pub policy: AutoPolicy,
    pub sandboxes: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub timed_out: usize,
    pub final_quality: f64,
    pub runtime_ms: f64,
}

impl BenchRow {
    fn from_results(cell: BenchCell, r: &RunResults) -> Self {
        Self {
            n: cell.n,
            b: cell.b,
            policy: cell.policy,
            sandboxes: r.sandboxes_total,
            p50_ms: r.latency_ms.overall.p50,
            p95_ms: r.latency_ms.overall.p95,
            timed_out: r.by_status.get("timed_out").copied().unwrap_or(0),
            final_quality: r.final_quality.score(),
            runtime_ms: r.runtime_ms,
        }
    }
}

/// Run every cell on one corpus, each with `base` but the cell's `n`, `b`
/// and policy.
pub fn bench_matrix(corpus: &Path, base: &SessionConfig, cells: &[BenchCell]) -> Result<Vec<BenchRow>, SessionError> {
    let mut rows = Vec::with_capacity(cells.len());
    for &cell in cells {
        let mut config = base.clone();
        config.speculation.n = cell.n;
        config.speculation.b = cell.b;
        let r = run_corpus(corpus, config, cell.policy)?;
        rows.push(BenchRow::from_results(cell, &r));
    }
    Ok(rows)
}

/// Rows as an aligned plain-text table.
pub fn format_table(rows: &[BenchRow]) -> String {
    let header = ["n", "b", "policy", "sandboxes", "p50_ms", "p95_ms", "timed_out", "quality", "runtime_ms"];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.n.to_string(),
                r.b.to_string(),
                r.policy.to_string(),
                r.sandboxes.to_string(),
                format!("{:.1}", r.p50_ms),
                format!("{:.1}", r.p95_ms),
                r.timed_out.to_string(),
                format!("{:.4}", r.final_quality),
                format!("{:.0}", r.runtime_ms),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &body {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(width).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in &body {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

fn point(session: &Session) -> TrajectoryPoint {
    TrajectoryPoint {
        cursor: session.main().insert_cursor(),
        score: session.quality().score(),
    }
}

fn results(
    session: &Session,
    policy: AutoPolicy,
    batches: usize,
    decisions: Decisions,
    quality_trajectory: Vec<TrajectoryPoint>,
    started: Instant,
) -> RunResults {
    let engine = session.engine();
    let mut all = Vec::new();
    let mut per_budget: BTreeMap<BudgetLevel, Vec<f64>> = BTreeMap::new();
    for sb in engine.sandboxes() {
        // A sandbox cancelled mid-run says nothing about how long the
        // computation takes; one cancelled after finishing does.
        if sb.status == SandboxStatus::Cancelled && sb.result_digest.is_none() {
            continue;
        }
        if let Some(ms) = sb.runtime_ms {
            all.push(ms);
            per_budget.entry(sb.budget).or_default().push(ms);
        }
    }
    let spec = &session.config().speculation;
    RunResults {
        seed: session.config().seed,
        policy,
        trigger: spec.trigger,
        k: session.corpus().len(),
        n: spec.n,
        b: spec.b,
        batches,
        sandboxes_total: engine.sandboxes().count(),
        by_status: engine
            .status_counts()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        decisions,
        quality_trajectory,
        latency_ms: Latency {
            overall: Percentiles::of(&all),
            by_budget: per_budget
                .into_iter()
                .map(|(b, v)| (b.as_str().to_string(), Percentiles::of(&v)))
                .collect(),
        },
        final_digest: session.main().digest().to_string(),
        final_quality: session.quality().clone(),
        runtime_ms: started.elapsed().as_secs_f64() * 1000.0,
    }
}
