//! Text cleaning and tokenization.
//!
//! Cleaning is applied in a fixed order: URL removal, ASCII punctuation to
//! space, ASCII digits to space, lowercasing, whitespace collapse. Tokens are
//! the space-separated pieces of the cleaned text minus stopwords.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusSplit, RawDocument};
use crate::error::{Error, Result};

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub label_id: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StopwordList {
    words: HashSet<String>,
    /// SHA-256 (hex) of the file the list was parsed from.
    pub source_checksum: String,
}

impl StopwordList {
    /// The vendored 179-word English list.
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS).expect("vendored stopword list is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut words = HashSet::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!(
                    "stopword entry {line:?} is not a single token"
                )));
            }
            words.insert(line.to_lowercase());
        }
        if words.is_empty() {
            return Err(Error::InvalidInput("stopword list is empty".into()));
        }
        Ok(Self {
            words,
            source_checksum: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| Regex::new(r"https?://\S+|www\.\S+").unwrap())
}

pub fn clean_text(raw: &str) -> String {
    let without_urls = url_pattern().replace_all(raw, "");
    let spaced: String = without_urls
        .chars()
        .map(|c| {
            if c.is_ascii_punctuation() || c.is_ascii_digit() {
                ' '
            } else {
                c
            }
        })
        .collect();
    let lowered = spaced.to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits cleaned text on spaces and drops stopwords. Order and duplicates
/// are kept.
pub fn tokenize(cleaned: &str, stopwords: &StopwordList) -> Vec<String> {
    cleaned
        .split(' ')
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .map(String::from)
        .collect()
}

pub fn preprocess_doc(doc: &RawDocument, stopwords: &StopwordList) -> TokenizedDoc {
    TokenizedDoc {
        doc_id: doc.doc_id.clone(),
        label_id: doc.label_id,
        tokens: tokenize(&clean_text(&doc.text), stopwords),
    }
}

/// Documents left with no tokens are kept so both arms stay aligned.
pub fn preprocess_corpus(
    corpus: &CorpusSplit,
    stopwords: &StopwordList,
) -> (Vec<TokenizedDoc>, Vec<TokenizedDoc>) {
    let run = |docs: &[RawDocument]| docs.iter().map(|d| preprocess_doc(d, stopwords)).collect();
    (run(&corpus.train), run(&corpus.test))
}
