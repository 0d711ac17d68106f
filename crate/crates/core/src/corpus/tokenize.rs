use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::CorpusError;

const BUILTIN_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Tokenizer settings. The defaults reproduce the built-in pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerOptions {
    /// Tokens shorter than this (in characters) are dropped.
    pub min_token_len: usize,
    /// Replacement stopword list, one term per line. `None` uses the built-in list.
    pub stopwords_path: Option<PathBuf>,
}

impl Default for TokenizerOptions {
    fn default() -> Self {
        Self {
            min_token_len: 3,
            stopwords_path: None,
        }
    }
}

/// Lowercase, split on non-alphanumerics, drop short tokens and stopwords.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    min_len: usize,
    stopwords: HashSet<String>,
}

impl Tokenizer {
    pub fn new(options: &TokenizerOptions) -> Result<Self, CorpusError> {
        let list = match &options.stopwords_path {
            Some(path) => std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?,
            None => BUILTIN_STOPWORDS.to_string(),
        };
        Ok(Self {
            min_len: options.min_token_len,
            stopwords: parse_stopwords(&list),
        })
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|raw| !raw.is_empty())
            .map(str::to_lowercase)
            .filter(|tok| tok.chars().count() >= self.min_len && !self.stopwords.contains(tok))
            .collect()
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            min_len: 3,
            stopwords: parse_stopwords(BUILTIN_STOPWORDS),
        }
    }
}

fn parse_stopwords(list: &str) -> HashSet<String> {
    list.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}
