//! Crowd text corpora: loading, validation, context filtering and summary
//! statistics.
//!
//! A corpus file holds one JSON record per line:
//!
//! ```text
//! {"id":"t1","text":"Signal out at 5th #yyc","source":"twitter","ts":"2019-03-01T08:00:00Z","tags":["yyc"]}
//! ```
//!
//! `lat`/`lon`, `tags` and `meta` are optional; unknown fields are ignored.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meta key under which a document's hashtags are kept (comma separated,
/// lowercase, without the leading `#`).
pub const META_HASHTAGS: &str = "hashtags";
/// Meta key holding the context keyword (or `#hashtag`) a document matched
/// during [`filter_by_context`].
pub const META_QUERY_TERM: &str = "query_term";
/// Meta key holding a document's language code, when known.
pub const META_LANG: &str = "lang";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("invalid document `{id}`: {message}")]
    InvalidDocument { id: String, message: String },
    #[error("invalid context: {0}")]
    InvalidContext(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Twitter,
    Historical,
    CameraLog,
    SensorLog,
    Manual,
}

impl SourceKind {
    pub const ALL: [SourceKind; 5] = [
        SourceKind::Twitter,
        SourceKind::Historical,
        SourceKind::CameraLog,
        SourceKind::SensorLog,
        SourceKind::Manual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Twitter => "twitter",
            SourceKind::Historical => "historical",
            SourceKind::CameraLog => "camera_log",
            SourceKind::SensorLog => "sensor_log",
            SourceKind::Manual => "manual",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown source kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn validate(&self) -> Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} outside [-180, 180]", self.lon));
        }
        Ok(())
    }

    /// Great-circle distance in kilometres (haversine, mean earth radius).
    pub fn distance_km(&self, other: &GeoPoint) -> f64 {
        const EARTH_RADIUS_KM: f64 = 6371.0088;
        let (lat1, lat2) = (self.lat.to_radians(), other.lat.to_radians());
        let dlat = lat2 - lat1;
        let dlon = (other.lon - self.lon).to_radians();
        let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
    }
}

/// One crowd text record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub source_kind: SourceKind,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    pub geo: Option<GeoPoint>,
    pub meta: BTreeMap<String, String>,
}

impl RawDocument {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err("text is empty".into());
        }
        if let Some(geo) = &self.geo {
            geo.validate()?;
        }
        Ok(())
    }

    pub fn hashtags(&self) -> Vec<&str> {
        self.meta
            .get(META_HASHTAGS)
            .map(|h| h.split(',').filter(|t| !t.is_empty()).collect())
            .unwrap_or_default()
    }

    pub fn query_term(&self) -> Option<&str> {
        self.meta.get(META_QUERY_TERM).map(String::as_str)
    }
}

fn hashtag_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#(\w+)").expect("hashtag regex"))
}

fn normalize_tag(tag: &str) -> String {
    tag.trim().trim_start_matches('#').to_lowercase()
}

/// Line record as it appears on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
    pub source: SourceKind,
    pub ts: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl DocumentRecord {
    pub fn into_document(self) -> Result<RawDocument, String> {
        let timestamp = DateTime::parse_from_rfc3339(&self.ts)
            .map_err(|e| format!("bad timestamp `{}`: {e}", self.ts))?
            .with_timezone(&Utc)
            .trunc_subsecs(0);
        let geo = match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Some(GeoPoint { lat, lon }),
            (None, None) => None,
            _ => return Err("lat and lon must be given together".into()),
        };

        let mut tags: Vec<String> = Vec::new();
        let from_text = hashtag_regex()
            .captures_iter(&self.text)
            .map(|c| c[1].to_string());
        for tag in self.tags.iter().cloned().chain(from_text) {
            let tag = normalize_tag(&tag);
            if !tag.is_empty() && !tag.contains(',') && !tags.contains(&tag) {
                tags.push(tag);
            }
        }
        let mut meta = self.meta;
        meta.remove(META_HASHTAGS);
        if !tags.is_empty() {
            meta.insert(META_HASHTAGS.to_string(), tags.join(","));
        }

        let doc = RawDocument {
            id: self.id,
            source_kind: self.source,
            text: self.text,
            timestamp,
            geo,
            meta,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn from_document(doc: &RawDocument) -> Self {
        let mut meta = doc.meta.clone();
        meta.remove(META_HASHTAGS);
        DocumentRecord {
            id: doc.id.clone(),
            text: doc.text.clone(),
            source: doc.source_kind,
            ts: doc
                .timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            lat: doc.geo.map(|g| g.lat),
            lon: doc.geo.map(|g| g.lon),
            tags: doc.hashtags().into_iter().map(String::from).collect(),
            meta,
        }
    }
}

/// An ordered, id-unique collection of documents. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    documents: Vec<RawDocument>,
    source_counts: BTreeMap<SourceKind, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<RawDocument>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(documents.len());
        let mut source_counts = BTreeMap::new();
        for doc in &documents {
            doc.validate()
                .map_err(|message| CorpusError::InvalidDocument {
                    id: doc.id.clone(),
                    message,
                })?;
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
            *source_counts.entry(doc.source_kind).or_insert(0) += 1;
        }
        Ok(Corpus {
            documents,
            source_counts,
        })
    }

    /// Concatenates corpora in order; ids must stay unique across all parts.
    pub fn merge<I: IntoIterator<Item = Corpus>>(parts: I) -> Result<Self, CorpusError> {
        let docs = parts.into_iter().flat_map(|c| c.documents).collect();
        Corpus::new(docs)
    }

    pub fn documents(&self) -> &[RawDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn source_counts(&self) -> &BTreeMap<SourceKind, usize> {
        &self.source_counts
    }

    pub fn get(&self, id: &str) -> Option<&RawDocument> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let record = DocumentRecord::from_document(doc);
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses line-delimited corpus records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_jsonl(content: &str) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let doc = record
            .into_document()
            .map_err(|message| CorpusError::InvalidRecord {
                line: line_no,
                message,
            })?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Corpus::new(docs)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&content)
}

/// Source of crowd documents for one source kind.
pub trait Connector: Send + Sync {
    fn kind(&self) -> SourceKind;
    fn fetch(&self) -> Result<Corpus, CorpusError>;
}

/// Connector backed by a corpus file. Only records of the connector's own
/// kind are returned.
#[derive(Debug, Clone)]
pub struct FileConnector {
    kind: SourceKind,
    path: PathBuf,
}

impl FileConnector {
    pub fn new(kind: SourceKind, path: impl Into<PathBuf>) -> Self {
        FileConnector {
            kind,
            path: path.into(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Connector for FileConnector {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn fetch(&self) -> Result<Corpus, CorpusError> {
        let corpus = load_jsonl(&self.path)?;
        let docs = corpus
            .documents
            .into_iter()
            .filter(|d| d.source_kind == self.kind)
            .collect();
        Corpus::new(docs)
    }
}

/// Connector over an in-memory corpus.
#[derive(Debug, Clone)]
pub struct StaticConnector {
    kind: SourceKind,
    corpus: Corpus,
}

impl StaticConnector {
    pub fn new(kind: SourceKind, corpus: Corpus) -> Self {
        StaticConnector { kind, corpus }
    }
}

impl Connector for StaticConnector {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn fetch(&self) -> Result<Corpus, CorpusError> {
        let docs = self
            .corpus
            .documents()
            .iter()
            .filter(|d| d.source_kind == self.kind)
            .cloned()
            .collect();
        Corpus::new(docs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl DateRange {
    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        self.start <= *ts && *ts <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFilter {
    pub center: GeoPoint,
    pub radius_km: f64,
}

fn default_language() -> String {
    "en".to_string()
}

/// Constraints characterizing the context a source is collected for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub hashtags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_range: Option<DateRange>,
    #[serde(default = "default_language")]
    pub language: String,
    /// `None` means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_documents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_filter: Option<GeoFilter>,
}

impl Default for ContextSpec {
    fn default() -> Self {
        ContextSpec {
            keywords: Vec::new(),
            hashtags: Vec::new(),
            date_range: None,
            language: default_language(),
            max_documents: None,
            geo_filter: None,
        }
    }
}

impl ContextSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if let Some(range) = &self.date_range {
            if range.start > range.end {
                return Err(CorpusError::InvalidContext(
                    "date_range start is after end".into(),
                ));
            }
        }
        if self.max_documents == Some(0) {
            return Err(CorpusError::InvalidContext(
                "max_documents must be at least 1".into(),
            ));
        }
        if let Some(geo) = &self.geo_filter {
            geo.center.validate().map_err(CorpusError::InvalidContext)?;
            if geo.radius_km.is_nan() || geo.radius_km <= 0.0 {
                return Err(CorpusError::InvalidContext(
                    "geo_filter radius must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// The keyword, or `#hashtag`, that makes `doc` a textual match. `Some("")`
    /// is never returned; `None` means no textual constraint matched.
    fn textual_match(&self, doc: &RawDocument) -> Option<String> {
        let text = doc.text.to_lowercase();
        for keyword in &self.keywords {
            let needle = keyword.to_lowercase();
            if !needle.is_empty() && text.contains(&needle) {
                return Some(keyword.clone());
            }
        }
        let tags = doc.hashtags();
        for wanted in &self.hashtags {
            let wanted = normalize_tag(wanted);
            if tags.iter().any(|t| *t == wanted) {
                return Some(format!("#{wanted}"));
            }
        }
        None
    }

    fn admits(&self, doc: &RawDocument) -> bool {
        if let Some(range) = &self.date_range {
            if !range.contains(&doc.timestamp) {
                return false;
            }
        }
        if let Some(lang) = doc.meta.get(META_LANG) {
            if !lang.eq_ignore_ascii_case(&self.language) {
                return false;
            }
        }
        if let Some(filter) = &self.geo_filter {
            match &doc.geo {
                Some(point) if point.distance_km(&filter.center) <= filter.radius_km => {}
                _ => return false,
            }
        }
        true
    }
}

/// Keeps documents satisfying every constraint in `spec`, earliest first,
/// truncated to `spec.max_documents`.
///
/// Keywords are case-insensitive substrings of the raw text. Matched
/// documents record the keyword under [`META_QUERY_TERM`].
pub fn filter_by_context(corpus: &Corpus, spec: &ContextSpec) -> Corpus {
    let textual = !spec.keywords.is_empty() || !spec.hashtags.is_empty();
    let mut kept: Vec<RawDocument> = corpus
        .documents()
        .iter()
        .filter(|doc| spec.admits(doc))
        .filter_map(|doc| {
            if !textual {
                return Some(doc.clone());
            }
            spec.textual_match(doc).map(|term| {
                let mut doc = doc.clone();
                doc.meta.insert(META_QUERY_TERM.to_string(), term);
                doc
            })
        })
        .collect();
    kept.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    if let Some(max) = spec.max_documents {
        kept.truncate(max);
    }
    Corpus::new(kept).expect("subset of a valid corpus is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_source: BTreeMap<SourceKind, usize>,
    pub min_timestamp: Option<DateTime<Utc>>,
    pub max_timestamp: Option<DateTime<Utc>>,
    pub distinct_hashtags: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut per_source: BTreeMap<SourceKind, usize> =
        SourceKind::ALL.iter().map(|k| (*k, 0)).collect();
    for (kind, n) in corpus.source_counts() {
        per_source.insert(*kind, *n);
    }
    let hashtags: BTreeSet<&str> = corpus
        .documents()
        .iter()
        .flat_map(|d| d.hashtags())
        .collect();
    CorpusStats {
        per_source,
        min_timestamp: corpus.documents().iter().map(|d| d.timestamp).min(),
        max_timestamp: corpus.documents().iter().map(|d| d.timestamp).max(),
        distinct_hashtags: hashtags.len(),
    }
}
