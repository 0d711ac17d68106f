mod common;

use specex_core::engine::TriggerMode;
use specex_core::headless::{bench_matrix, run, run_corpus, AutoPolicy, BenchCell, RunResults};
use specex_core::service::{replay, ReplayOptions, Session, SessionConfig};

fn every_buffer() -> SessionConfig {
    let mut c = SessionConfig::default();
    c.speculation.trigger = TriggerMode::EveryBuffer;
    c
}

fn decline_corpus(dir: &std::path::Path) -> std::path::PathBuf {
    common::write_corpus(dir, "decline.jsonl", &common::decline_texts())
}

#[test]
fn every_buffer_run_opens_one_batch_per_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_corpus(&decline_corpus(dir.path()), every_buffer(), AutoPolicy::Reject).unwrap();
    assert_eq!((r.k, r.n, r.b), (20, 7, 10));
    assert_eq!(r.batches, 2);
    assert_eq!(r.sandboxes_total, 14);
    assert_eq!(r.decisions.rejected, 2);
    assert_eq!(r.quality_trajectory.last().unwrap().cursor, 20);
    assert_eq!(r.by_status.values().sum::<usize>(), r.sandboxes_total);
}

#[test]
fn runs_are_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = decline_corpus(dir.path());
    let once = |policy| {
        let mut s = Session::create(&corpus, every_buffer()).unwrap();
        let r = run(&mut s, policy).unwrap();
        (r, s)
    };
    for policy in [AutoPolicy::Top1, AutoPolicy::Random(0.5), AutoPolicy::None] {
        let (a, sa) = once(policy);
        let (b, _) = once(policy);
        assert_eq!(a.final_digest, b.final_digest, "{policy}");
        assert_eq!(a.decisions, b.decisions, "{policy}");
        let back = replay(sa.provenance().entries(), &ReplayOptions::default()).unwrap();
        assert_eq!(back.main().digest(), a.final_digest, "{policy}");
    }
}

#[test]
fn results_serialize_with_the_policy_as_text() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_corpus(&decline_corpus(dir.path()), every_buffer(), AutoPolicy::Random(0.5)).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    assert_eq!(v["policy"], "random:0.5");
    assert_eq!(v["trigger"], "every-buffer");
    let back: RunResults = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
}

#[test]
fn matrix_rows_follow_the_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cells = [
        BenchCell { n: 7, b: 5, policy: AutoPolicy::Reject },
        BenchCell { n: 7, b: 10, policy: AutoPolicy::Reject },
        BenchCell { n: 3, b: 10, policy: AutoPolicy::Top1 },
    ];
    let rows = bench_matrix(&decline_corpus(dir.path()), &every_buffer(), &cells).unwrap();
    let counts: Vec<usize> = rows.iter().map(|r| r.sandboxes).collect();
    assert_eq!(counts, vec![28, 14, 6]);
    assert!(rows.iter().all(|r| r.timed_out == 0));
}

#[test]
fn without_triggers_nothing_is_speculated() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = SessionConfig::default();
    c.speculation.trigger = TriggerMode::Off;
    let mut s = Session::create(&decline_corpus(dir.path()), c).unwrap();
    let r = run(&mut s, AutoPolicy::None).unwrap();
    assert_eq!(r.sandboxes_total, 0);
    assert_eq!(s.main().leaf_count(), 20);
}
