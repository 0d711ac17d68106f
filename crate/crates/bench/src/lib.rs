//! Benchmark fixtures shared by the criterion suites.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use specex_core::corpus::{ingest_corpus, Corpus, TokenizerOptions};
use specex_core::ihtm::{ModelParams, ModelState};

/// The 280-document desk corpus used by the core tests.
pub fn desk_corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/desk280.jsonl")
}

pub fn desk_corpus() -> Arc<Corpus> {
    Arc::new(ingest_corpus(&desk_corpus_path(), &TokenizerOptions::default()).expect("desk corpus loads"))
}

/// A main state with the first `cursor` documents inserted.
pub fn grown(corpus: &Corpus, cursor: usize) -> ModelState {
    let params = ModelParams::default();
    let mut state = ModelState::new(corpus);
    for _ in 0..cursor {
        if state.insert_next(&params).expect("insert").is_none() {
            break;
        }
    }
    state
}
