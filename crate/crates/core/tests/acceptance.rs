//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specex_core::corpus::{build_corpus, Corpus, CorpusError, RawDocument, TokenizerOptions};
use specex_core::delta::{check_invariants, diff};
use specex_core::engine::{
    search_space_accounting, update_strategy_weight, BudgetLevel, Dimensions, LeafMove, SandboxStatus, StrategyWeights,
    TriggerMode,
};
use specex_core::headless::{run, AutoPolicy};
use specex_core::ihtm::{ModelParams, ModelState, NodeId};
use specex_core::quality::{
    consensus_rank, dominates, evaluate, Candidate, ConsensusMethod, MetricWeights, TOP_TERMS,
};
use specex_core::service::{normalize_timestamps, replay, to_jsonl, ReplayOptions, Session, SessionConfig};
use specex_core::strategies::StrategyRegistry;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_config(trigger: TriggerMode) -> SessionConfig {
    let mut c = SessionConfig::default();
    c.speculation.trigger = trigger;
    c
}

fn sandbox_count() -> Outcome {
    let started = Instant::now();
    let mut s = Session::create(&common::desk280(), desk_config(TriggerMode::EveryBuffer)).map_err(|e| e.to_string())?;
    let r = run(&mut s, AutoPolicy::Reject).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(
        r.k == 280 && r.sandboxes_total == 196 && secs < 60.0,
        format!("k={} n={} b={}: {} sandboxes in {secs:.1}s", r.k, r.n, r.b, r.sandboxes_total),
    )
}

fn accounting() -> Outcome {
    let s = search_space_accounting(280, 7, 10);
    let log10_factorial: f64 = (2..=280u32).map(|i| f64::from(i).log10()).sum();
    let paths = 28.0 * 7f64.log10();
    let trees = 278.0 * 280f64.log10();
    let errs = [
        (s.full_option_paths_log10 - paths).abs(),
        (s.incremental_orders_log10 - log10_factorial).abs(),
        (s.all_trees_log10 - trees).abs(),
    ];
    let floors = [
        s.full_option_paths_log10.floor(),
        s.incremental_orders_log10.floor(),
        s.all_trees_log10.floor(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(
        floors == [23.0, 565.0, 680.0] && worst < 1e-6,
        format!(
            "log10 = {:.4} / {:.4} / {:.4}, max oracle error {worst:.1e}",
            s.full_option_paths_log10, s.incremental_orders_log10, s.all_trees_log10
        ),
    )
}

/// The first 60 desk documents, written to `dir`.
fn desk_prefix(dir: &Path, n: usize) -> PathBuf {
    let text = std::fs::read_to_string(common::desk280()).unwrap();
    let path = dir.join(format!("desk{n}.jsonl"));
    let lines: Vec<&str> = text.lines().take(n).collect();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn random_dimensions(rng: &mut ChaCha8Rng, s: &Session, ids: &[String]) -> Vec<Dimensions> {
    let count = rng.random_range(1..=7);
    (0..count)
        .map(|_| {
            let mut d = Dimensions::strategy(ids.choose(rng).unwrap(), rng.random(), rng.random_range(0..=5));
            if rng.random_bool(0.3) {
                d.model_overrides.insert("theta_new".into(), rng.random_range(0.1..0.6));
            }
            if rng.random_bool(0.3) {
                let docs: Vec<String> = s.main().doc_ids().map(str::to_string).collect();
                let topics: Vec<String> = s.main().topics().map(|t| t.node_id.to_string()).collect();
                if let (Some(doc), Some(target)) = (docs.choose(rng), topics.choose(rng)) {
                    d.moves.push(LeafMove {
                        doc_id: doc.clone(),
                        target: target.clone(),
                    });
                }
            }
            d
        })
        .collect()
}

fn isolation() -> Outcome {
    const BATCHES: usize = 1000;
    let dir = tempfile::tempdir().unwrap();
    let corpus = desk_prefix(dir.path(), 60);
    let ids = StrategyRegistry::builtin().ids();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fresh = || {
        let mut c = desk_config(TriggerMode::Off);
        c.speculation.pause_on_speculation = false;
        Session::create(&corpus, c).unwrap()
    };
    let mut s = fresh();
    let (mut accepts, mut sandboxes, mut violations) = (0, 0, Vec::new());
    for i in 0..BATCHES {
        if s.main().buffer().is_empty() {
            s = fresh();
        }
        s.step(rng.random_range(0..=3)).unwrap();
        let before = s.main().digest().to_string();
        let dims = random_dimensions(&mut rng, &s, &ids);
        let batch = s.speculate(dims, None).unwrap();
        s.wait_batch(&batch, None).unwrap();
        if s.main().digest() != before {
            violations.push(format!("batch {i}: main changed while sandboxes ran"));
        }
        let ready: Vec<(String, String)> = s
            .engine()
            .batch_sandboxes(&batch)
            .into_iter()
            .filter(|sb| sb.status == SandboxStatus::Ready)
            .map(|sb| (sb.sandbox_id.clone(), sb.result_digest.clone().unwrap()))
            .collect();
        sandboxes += s.engine().batch(&batch).unwrap().sandbox_ids.len();
        match rng.random_range(0..3) {
            0 if !ready.is_empty() => {
                let (id, digest) = ready.choose(&mut rng).unwrap().clone();
                s.accept(&id).unwrap();
                accepts += 1;
                if s.main().digest() != digest {
                    violations.push(format!("batch {i}: accepted {id} but main differs from its result"));
                }
            }
            1 => {
                for (id, _) in &ready {
                    s.reject(id).unwrap();
                }
                if s.main().digest() != before {
                    violations.push(format!("batch {i}: rejecting changed main"));
                }
            }
            _ => {
                if s.main().digest() != before {
                    violations.push(format!("batch {i}: main changed without a decision"));
                }
            }
        }
    }
    check(
        violations.is_empty(),
        format!(
            "{BATCHES} batches, {sandboxes} sandboxes, {accepts} accepts, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

fn budget() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = desk_prefix(dir.path(), 40);
    let mut c = desk_config(TriggerMode::Off);
    c.speculation.fault_injection_ms.insert("identity".into(), 600);
    let mut s = Session::create(&corpus, c).map_err(|e| e.to_string())?;
    let (mut slow, mut timed_out, mut ranked_slow) = (0, 0, 0);
    for round in 0..5 {
        s.step(5).unwrap();
        let dims = vec![
            Dimensions::strategy("identity", round, 0),
            Dimensions::strategy("merge_similar_siblings", round, 0),
        ];
        let batch = s.speculate(dims, Some(BudgetLevel::L1)).unwrap();
        s.wait_batch(&batch, Some(Duration::from_secs(10))).unwrap();
        let ranked: BTreeSet<String> = s.rank_batch(&batch).unwrap().into_iter().map(|r| r.sandbox_id).collect();
        for sb in s.engine().batch_sandboxes(&batch) {
            if sb.dimensions.strategy_id == "identity" {
                slow += 1;
                timed_out += usize::from(sb.status == SandboxStatus::TimedOut);
                ranked_slow += usize::from(ranked.contains(&sb.sandbox_id));
            }
        }
        let ready = s.rank_batch(&batch).unwrap();
        for r in ready {
            s.reject(&r.sandbox_id).unwrap();
        }
    }

    let mut honest = desk_config(TriggerMode::EveryBuffer);
    honest.speculation.trigger_budget = BudgetLevel::L1;
    let mut h = Session::create(&common::desk280(), honest).map_err(|e| e.to_string())?;
    let r = run(&mut h, AutoPolicy::Reject).map_err(|e| e.to_string())?;
    let l1 = r.latency_ms.by_budget.get("L1").copied().unwrap_or_default();
    let honest_timeouts = r.by_status.get("timed_out").copied().unwrap_or(0);
    check(
        timed_out == slow && ranked_slow == 0 && l1.p95 < 500.0,
        format!(
            "injected 600ms: {timed_out}/{slow} timed out, {ranked_slow} ranked; honest L1 p95 {:.1}ms over {} sandboxes ({} timed out, soft)",
            l1.p95, l1.count, honest_timeouts
        ),
    )
}

fn delta() -> Outcome {
    const CASES: u64 = 1000;
    let corpus = common::pool_corpus();
    let (mut optimal, mut broken) = (0, 0);
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = common::random_pair(&mut rng, &corpus);
        let d = diff(&a, &b, 0.5);
        if check_invariants(&d).is_err() {
            broken += 1;
        }
        let greedy: f64 = d.match_pairs.iter().map(|p| p.jaccard).sum();
        if (common::optimal_score(&a, &b, 0.5) - greedy).abs() <= 1e-9 {
            optimal += 1;
        }
    }
    let rate = optimal as f64 / CASES as f64;
    check(
        broken == 0 && rate >= 0.95,
        format!("{CASES} cases: invariants broken in {broken}, greedy optimal in {:.1}%", rate * 100.0),
    )
}

const TOY_WORDS: [&str; 8] = ["rocket", "orbit", "launch", "pitcher", "inning", "homer", "engine", "piston"];

/// A random corpus of 2 to 5 short documents; draws where every document
/// ends up degenerate are redrawn.
fn toy_corpus(rng: &mut ChaCha8Rng) -> Corpus {
    loop {
        if let Ok(c) = draw_toy(rng) {
            return c;
        }
    }
}

fn draw_toy(rng: &mut ChaCha8Rng) -> Result<Corpus, CorpusError> {
    let docs = rng.random_range(2..=5);
    let raw = (0..docs)
        .map(|i| {
            let n = rng.random_range(1..=5);
            let words: Vec<&str> = TOY_WORDS.choose_multiple(rng, n).copied().collect();
            RawDocument {
                id: format!("t{i}"),
                text: words.join(" "),
                label: None,
            }
        })
        .collect();
    build_corpus(raw, &TokenizerOptions::default(), "toy")
}

/// Mean over topics of the mean smoothed PMI of top-term pairs, counting
/// documents directly from their token lists.
fn pmi_oracle(state: &ModelState, corpus: &Corpus) -> f64 {
    let sets: Vec<BTreeSet<&str>> = corpus
        .documents
        .iter()
        .map(|d| d.tokens.iter().map(String::as_str).collect())
        .collect();
    let k = sets.len() as f64;
    let count = |terms: &[&str]| sets.iter().filter(|s| terms.iter().all(|t| s.contains(t))).count() as f64;
    let vocab = state.vocabulary();
    let topics: Vec<_> = state.topics().collect();
    if topics.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for t in &topics {
        let Some(centroid) = &t.centroid else { continue };
        let terms: Vec<&str> = centroid.top_terms(TOP_TERMS).into_iter().map(|id| vocab.term(id)).collect();
        if terms.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0.0;
        for i in 0..terms.len() {
            for j in i + 1..terms.len() {
                let joint = (count(&[terms[i], terms[j]]) + 1.0) / k;
                let pa = count(&[terms[i]]) / k;
                let pb = count(&[terms[j]]) / k;
                sum += (joint / (pa * pb)).ln();
                pairs += 1.0;
            }
        }
        total += sum / pairs;
    }
    total / topics.len() as f64
}

fn quality_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let corpus = toy_corpus(&mut rng);
        let theta = rng.random_range(0.0..0.9);
        let params = ModelParams {
            theta_new: theta,
            max_depth: rng.random_range(1..=3),
        };
        let mut state = ModelState::new(&corpus);
        while state.insert_next(&params).unwrap().is_some() {
            let q = evaluate(&state, &corpus.stats);
            let e = (q.coherence_pmi - pmi_oracle(&state, &corpus)).abs();
            worst = worst.max(e);
        }
    }

    // Sizes 2, 1, 1 under the root, and one of them nested: hand values.
    let raw = ["rocket orbit", "orbit launch", "pitcher inning", "engine piston"]
        .iter()
        .enumerate()
        .map(|(i, t)| RawDocument {
            id: format!("h{i}"),
            text: t.to_string(),
            label: None,
        })
        .collect();
    let corpus = build_corpus(raw, &TokenizerOptions::default(), "hand").unwrap();
    let mut state = ModelState::new(&corpus);
    state.edit(|e| {
        let a = e.new_topic(&NodeId::root()).unwrap();
        let b = e.new_topic(&NodeId::root()).unwrap();
        let c = e.new_topic(&b).unwrap();
        e.attach_new(corpus.documents[0].clone(), &a).unwrap();
        e.attach_new(corpus.documents[1].clone(), &a).unwrap();
        e.attach_new(corpus.documents[2].clone(), &c).unwrap();
        e.attach_new(corpus.documents[3].clone(), &NodeId::root()).unwrap();
    });
    let q = evaluate(&state, &corpus.stats);
    // Topic sizes count all documents below: a = 2, b = 1, c = 1.
    let entropy = 1.5 * std::f64::consts::LN_2;
    let exact = q.topic_count == 3
        && q.mean_topic_size == 4.0 / 3.0
        && q.max_depth == 3
        && (q.size_entropy - entropy).abs() <= 4.0 * f64::EPSILON;
    check(
        worst <= 1e-9 && exact,
        format!(
            "PMI max error {worst:.1e} over 500 toy corpora; hand tree: topics {}, mean size {}, entropy {} (expected {entropy}), depth {}",
            q.topic_count, q.mean_topic_size, q.size_entropy, q.max_depth
        ),
    )
}

fn determinism() -> Outcome {
    let mut logs = Vec::new();
    let mut divergences = 0;
    let mut entries = 0;
    for (trigger, policy) in [
        (TriggerMode::EveryBuffer, AutoPolicy::Random(0.5)),
        (TriggerMode::EveryBuffer, AutoPolicy::Random(0.5)),
        (TriggerMode::Metric, AutoPolicy::Top1),
    ] {
        let mut s = Session::create(&common::desk280(), desk_config(trigger)).unwrap();
        let r = run(&mut s, policy).unwrap();
        match replay(s.provenance().entries(), &ReplayOptions::default()) {
            Ok(back) if back.main().digest() == r.final_digest => entries += s.provenance().len(),
            _ => divergences += 1,
        }
        logs.push(to_jsonl(&normalize_timestamps(s.provenance().entries())));
    }
    check(
        logs[0] == logs[1] && divergences == 0,
        format!(
            "same-seed logs identical: {} ({} bytes); {entries} entries replayed over 3 runs, {divergences} divergences",
            logs[0] == logs[1],
            logs[0].len()
        ),
    )
}

fn ranking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let metrics = ["a", "b", "c", "d", "e"];
    let mut failures = Vec::new();
    for set in 0..1000 {
        let size = rng.random_range(2..=8);
        let candidates: Vec<Candidate> = (0..size)
            .map(|i| Candidate {
                sandbox_id: format!("s{i}"),
                // Coarse values so that ties and dominance both occur.
                normalized: metrics.iter().map(|m| (m.to_string(), f64::from(rng.random_range(0..5u8)) / 4.0)).collect(),
                strategy_weight: rng.random_range(0.0..=1.0),
            })
            .collect();
        let weights = MetricWeights(metrics.iter().map(|m| (m.to_string(), rng.random_range(0.1..2.0))).collect());
        let normalized = weights.normalized().unwrap();

        let pareto = consensus_rank(&candidates, ConsensusMethod::ParetoThenSum, &weights).unwrap();
        let pos: BTreeMap<&str, usize> = pareto.iter().map(|r| (r.sandbox_id.as_str(), r.rank)).collect();
        for a in &candidates {
            for b in &candidates {
                if dominates(&a.normalized, &b.normalized, &normalized) && pos[a.sandbox_id.as_str()] > pos[b.sandbox_id.as_str()] {
                    failures.push(format!("set {set}: {} dominates {} but ranks below", a.sandbox_id, b.sandbox_id));
                }
            }
        }
        for r in pareto.iter().filter(|r| r.front == 0) {
            let me = candidates.iter().find(|c| c.sandbox_id == r.sandbox_id).unwrap();
            if candidates.iter().any(|o| dominates(&o.normalized, &me.normalized, &normalized)) {
                failures.push(format!("set {set}: {} on front 0 is dominated", r.sandbox_id));
            }
        }

        let before = consensus_rank(&candidates, ConsensusMethod::WeightedSum, &weights).unwrap();
        let i = rng.random_range(0..size);
        let m = metrics.choose(&mut rng).unwrap().to_string();
        let mut raised = candidates.clone();
        let v = raised[i].normalized.get_mut(&m).unwrap();
        *v = (*v + rng.random_range(0.01..0.5)).min(1.0);
        let after = consensus_rank(&raised, ConsensusMethod::WeightedSum, &weights).unwrap();
        let find = |r: &[specex_core::quality::RankedCandidate]| {
            r.iter().find(|x| x.sandbox_id == candidates[i].sandbox_id).cloned().unwrap()
        };
        let (old, new) = (find(&before), find(&after));
        if new.score < old.score - 1e-12 || new.rank > old.rank {
            failures.push(format!("set {set}: raising {m} of s{i} lowered it"));
        }
    }

    let mut ema_out = 0;
    let mut updates = 0;
    for _ in 0..1000 {
        let alpha = rng.random_range(0.0..=1.0);
        let mut w = rng.random_range(0.0..=1.0);
        let mut table = StrategyWeights::new();
        for _ in 0..rng.random_range(1..50) {
            let accepted = rng.random_bool(0.5);
            w = update_strategy_weight(w, accepted, alpha);
            table.record("x", accepted, alpha);
            updates += 1;
            if !(0.0..=1.0).contains(&w) || !(0.0..=1.0).contains(&table.get("x")) {
                ema_out += 1;
            }
        }
    }
    check(
        failures.is_empty() && ema_out == 0,
        format!(
            "1000 candidate sets: {} ordering violations{}; {updates} EMA updates, {ema_out} outside [0, 1]",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("sandbox count (k=280, n=7, b=10)", sandbox_count),
        ("search-space accounting", accounting),
        ("isolation", isolation),
        ("budget enforcement", budget),
        ("delta correctness", delta),
        ("quality oracle equivalence", quality_oracle),
        ("determinism and replay", determinism),
        ("ranking properties", ranking),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
