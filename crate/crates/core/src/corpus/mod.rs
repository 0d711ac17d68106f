//! Corpus ingestion and TF-IDF vectors.
//!
//! Ingestion runs in two passes: every document is tokenized first, then
//! document frequencies over the whole corpus drive the vector weights
//! `tf(t) * ln(k / df(t))`, L2-normalized. A document left with no tokens is
//! skipped with a warning instead of failing the whole corpus.

mod tokenize;
mod vector;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use tokenize::{Tokenizer, TokenizerOptions};
pub use vector::{normalized_sum, SparseVector, TermId};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("no usable documents in {0}")]
    NoDocuments(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("degenerate vector")]
    DegenerateVector,
}

/// Sorted term list; a term's [`TermId`] is its position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, TermId>,
}

impl Vocabulary {
    pub fn from_terms(terms: impl IntoIterator<Item = String>) -> Self {
        let mut terms: Vec<String> = terms.into_iter().collect();
        terms.sort();
        terms.dedup();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TermId))
            .collect();
        Self { terms, index }
    }

    pub fn id(&self, term: &str) -> Option<TermId> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub ingest_index: usize,
    pub tokens: Vec<String>,
    pub vector: SparseVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Corpus-wide counts. Co-occurrence is answered from per-term postings so
/// only the pairs actually asked for (top terms of topics) are ever counted.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    pub k: usize,
    vocabulary: Arc<Vocabulary>,
    document_frequency: Vec<u32>,
    postings: Vec<Vec<u32>>,
}

impl CorpusStats {
    /// Build from tokenized documents; `k` is the number of token lists.
    pub fn from_token_lists<L: AsRef<[S]>, S: AsRef<str>>(lists: &[L]) -> Self {
        let vocabulary = Vocabulary::from_terms(
            lists
                .iter()
                .flat_map(|l| l.as_ref().iter().map(|t| t.as_ref().to_string())),
        );
        let mut postings = vec![Vec::new(); vocabulary.len()];
        for (doc, tokens) in lists.iter().enumerate() {
            for t in tokens.as_ref() {
                let id = vocabulary.id(t.as_ref()).expect("term in vocabulary") as usize;
                if postings[id].last() != Some(&(doc as u32)) {
                    postings[id].push(doc as u32);
                }
            }
        }
        let document_frequency = postings.iter().map(|p| p.len() as u32).collect();
        Self {
            k: lists.len(),
            vocabulary: Arc::new(vocabulary),
            document_frequency,
            postings,
        }
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocabulary
    }

    pub fn df(&self, term: TermId) -> u32 {
        self.document_frequency[term as usize]
    }

    pub fn document_frequency(&self) -> BTreeMap<&str, u32> {
        self.vocabulary
            .terms()
            .iter()
            .zip(&self.document_frequency)
            .map(|(t, &df)| (t.as_str(), df))
            .collect()
    }

    /// Number of documents containing both terms.
    pub fn cooccurrence(&self, a: TermId, b: TermId) -> u32 {
        if a == b {
            return self.df(a);
        }
        let (pa, pb) = (&self.postings[a as usize], &self.postings[b as usize]);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < pa.len() && j < pb.len() {
            match pa[i].cmp(&pb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// Co-occurrence counts for every unordered pair of `terms`.
    pub fn cooccurrence_table(&self, terms: &[TermId]) -> BTreeMap<(TermId, TermId), u32> {
        let mut table = BTreeMap::new();
        for (i, &a) in terms.iter().enumerate() {
            for &b in &terms[i + 1..] {
                let key = if a < b { (a, b) } else { (b, a) };
                table.entry(key).or_insert_with(|| self.cooccurrence(a, b));
            }
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub doc_id: String,
    pub reason: String,
}

/// The ordered document stream plus its statistics. Immutable once built.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<Arc<Document>>,
    pub stats: Arc<CorpusStats>,
    pub warnings: Vec<IngestWarning>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Arc<Document>> {
        self.documents.iter().find(|d| d.id == doc_id)
    }

    /// SHA-256 over ids and token streams, in stream order. Used by replay to
    /// confirm it re-ingested the same corpus.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for doc in &self.documents {
            hasher.update(doc.id.as_bytes());
            hasher.update([0u8]);
            for t in &doc.tokens {
                hasher.update(t.as_bytes());
                hasher.update(b" ");
            }
            hasher.update(b"\n");
        }
        for w in &self.warnings {
            hasher.update(b"skip:");
            hasher.update(w.doc_id.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// A raw document before tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Read a directory of `.txt` files (ordered by file name) or a `.jsonl` file.
pub fn ingest_corpus(source: &Path, options: &TokenizerOptions) -> Result<Corpus, CorpusError> {
    if !source.exists() {
        return Err(CorpusError::MissingPath(source.to_path_buf()));
    }
    let raw = if source.is_dir() {
        read_text_dir(source)?
    } else {
        read_jsonl(source)?
    };
    if raw.is_empty() {
        return Err(CorpusError::NoDocuments(source.display().to_string()));
    }
    build_corpus(raw, options, &source.display().to_string())
}

/// Tokenize and vectorize in-memory documents, keeping their order.
pub fn build_corpus(
    raw: Vec<RawDocument>,
    options: &TokenizerOptions,
    origin: &str,
) -> Result<Corpus, CorpusError> {
    let tokenizer = Tokenizer::new(options)?;
    let mut seen = std::collections::HashSet::new();
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for doc in raw {
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        let tokens = tokenizer.tokenize(&doc.text);
        if tokens.is_empty() {
            log::warn!("document {} has no tokens after stopword removal; skipped", doc.id);
            warnings.push(IngestWarning {
                doc_id: doc.id,
                reason: "no tokens after stopword removal".into(),
            });
            continue;
        }
        kept.push((doc, tokens));
    }
    if kept.is_empty() {
        return Err(CorpusError::NoDocuments(origin.to_string()));
    }

    // Dropping a document with a degenerate vector changes document
    // frequencies, which can make another vector degenerate; repeat until
    // the statistics describe exactly the documents that are kept.
    let (stats, vectors) = loop {
        let lists: Vec<&[String]> = kept.iter().map(|(_, t)| t.as_slice()).collect();
        let stats = CorpusStats::from_token_lists(&lists);
        let vectors: Vec<Option<SparseVector>> = kept.iter().map(|(_, t)| vectorize(t, &stats).ok()).collect();
        if vectors.iter().all(Option::is_some) {
            break (stats, vectors);
        }
        let mut survivors = Vec::with_capacity(kept.len());
        for ((doc, tokens), v) in kept.into_iter().zip(&vectors) {
            if v.is_some() {
                survivors.push((doc, tokens));
            } else {
                log::warn!("document {} has a degenerate vector; skipped", doc.id);
                warnings.push(IngestWarning {
                    doc_id: doc.id,
                    reason: "degenerate vector".into(),
                });
            }
        }
        kept = survivors;
        if kept.is_empty() {
            return Err(CorpusError::NoDocuments(origin.to_string()));
        }
    };
    let documents: Vec<Arc<Document>> = kept
        .into_iter()
        .zip(vectors)
        .enumerate()
        .map(|(i, ((doc, tokens), vector))| {
            Arc::new(Document {
                id: doc.id,
                ingest_index: i,
                tokens,
                vector: vector.expect("all vectors present"),
                label: doc.label,
            })
        })
        .collect();
    Ok(Corpus {
        documents,
        stats: Arc::new(stats),
        warnings,
    })
}

/// TF-IDF weights `tf * ln(k / df)`, L2-normalized. Terms unknown to `stats`
/// are ignored.
pub fn vectorize<S: AsRef<str>>(tokens: &[S], stats: &CorpusStats) -> Result<SparseVector, CorpusError> {
    let mut tf: BTreeMap<TermId, u32> = BTreeMap::new();
    for t in tokens {
        if let Some(id) = stats.vocabulary.id(t.as_ref()) {
            *tf.entry(id).or_default() += 1;
        }
    }
    let k = stats.k as f64;
    let weights = tf
        .into_iter()
        .map(|(t, count)| (t, count as f64 * (k / stats.df(t) as f64).ln()))
        .collect();
    let v = SparseVector::from_entries(weights);
    if v.is_empty() {
        return Err(CorpusError::DegenerateVector);
    }
    Ok(v.normalized())
}

fn read_text_dir(dir: &Path) -> Result<Vec<RawDocument>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(RawDocument { id, text, label: None })
        })
        .collect()
}

fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| CorpusError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
