//! Text preprocessing: markup and URL stripping, tokenization, stop-word
//! and number removal, Porter stemming, and the shared vocabulary.

mod porter;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::RawDocument;

pub use porter::stem;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// Tokens shorter than this (in characters) are dropped.
pub const DEFAULT_MIN_TOKEN_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    /// One term per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Self {
        StopWords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(StopWords::parse(&fs::read_to_string(path)?))
    }

    pub fn empty() -> Self {
        StopWords(HashSet::new())
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for StopWords {
    /// The shipped English list.
    fn default() -> Self {
        StopWords::parse(DEFAULT_STOPWORDS)
    }
}

impl<S: Into<String>> FromIterator<S> for StopWords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        StopWords(iter.into_iter().map(Into::into).collect())
    }
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<!--.*?-->|</?[A-Za-z][^<>]*>").expect("tag regex"))
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)https?://\S*").expect("url regex"))
}

/// Strips markup tags and http(s) URLs, lowercases, and collapses runs of
/// whitespace to single spaces. Stripping repeats until nothing matches, so
/// nested leftovers such as `<a<b>>` go too.
pub fn normalize(text: &str) -> String {
    let mut current = text.to_lowercase();
    loop {
        let without_tags = tag_regex().replace_all(&current, " ");
        let without_urls = url_regex().replace_all(&without_tags, " ");
        if without_urls == current {
            break;
        }
        current = without_urls.into_owned();
    }
    current.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits normalized text on non-alphanumeric characters and drops tokens
/// containing digits, tokens shorter than `min_len` characters, and
/// stop-words. Order is preserved.
pub fn tokenize_with(text: &str, stopwords: &StopWords, min_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !t.chars().any(char::is_numeric))
        .filter(|t| t.chars().count() >= min_len)
        .filter(|t| !stopwords.contains(t))
        .map(str::to_string)
        .collect()
}

pub fn tokenize(text: &str, stopwords: &StopWords) -> Vec<String> {
    tokenize_with(text, stopwords, DEFAULT_MIN_TOKEN_LEN)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl TokenizedDocument {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>) -> Self {
        TokenizedDocument {
            doc_id: doc_id.into(),
            tokens,
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// The full chain for one raw document.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub stopwords: StopWords,
    pub min_token_len: usize,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            stopwords: StopWords::default(),
            min_token_len: DEFAULT_MIN_TOKEN_LEN,
        }
    }
}

impl Preprocessor {
    pub fn new(stopwords: StopWords) -> Self {
        Preprocessor {
            stopwords,
            min_token_len: DEFAULT_MIN_TOKEN_LEN,
        }
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        tokenize_with(&normalize(text), &self.stopwords, self.min_token_len)
            .iter()
            .map(|t| stem(t))
            .collect()
    }

    pub fn document(&self, doc: &RawDocument) -> TokenizedDocument {
        TokenizedDocument::new(doc.id.clone(), self.tokens(&doc.text))
    }

    pub fn documents<'a, I>(&self, docs: I) -> Vec<TokenizedDocument>
    where
        I: IntoIterator<Item = &'a RawDocument>,
    {
        docs.into_iter().map(|d| self.document(d)).collect()
    }
}

pub fn preprocess_document(doc: &RawDocument, stopwords: &StopWords) -> TokenizedDocument {
    Preprocessor::new(stopwords.clone()).document(doc)
}

/// Dense bijection between terms and indices `0..len()`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    index_to_term: Vec<String>,
    term_to_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary in the given order. Duplicate terms keep their
    /// first index.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for term in terms {
            let term = term.into();
            if !vocab.term_to_index.contains_key(&term) {
                vocab
                    .term_to_index
                    .insert(term.clone(), vocab.index_to_term.len());
                vocab.index_to_term.push(term);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.index_to_term.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_term.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.term_to_index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.index_to_term.get(index).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.index_to_term
    }

    /// In-vocabulary token indices, in order.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.index_of(t)).collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.index_to_term.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let terms = Vec::<String>::deserialize(deserializer)?;
        let vocab = Vocabulary::from_terms(terms.iter().cloned());
        if vocab.len() != terms.len() {
            return Err(serde::de::Error::custom("vocabulary repeats a term"));
        }
        Ok(vocab)
    }
}

/// Terms occurring at least `min_frequency` times across `docs`, indexed by
/// descending frequency with ties broken lexicographically.
pub fn build_vocabulary(docs: &[TokenizedDocument], min_frequency: usize) -> Vocabulary {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        for token in &doc.tokens {
            *freq.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|(_, n)| *n >= min_frequency.max(1))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_terms(entries.into_iter().map(|(t, _)| t))
}
