//! Short-text pooling and LDA fitted by collapsed Gibbs sampling.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Initial topics are drawn with `gen_range(0..k)`
//! and each resampling step consumes one `gen::<f64>()` draw, scaled by the
//! unnormalized total and matched against the cumulative weights in topic
//! order.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::preprocess::{TokenizedDocument, Vocabulary};

/// Key of the pool holding documents without hashtags (or query terms).
pub const NO_KEY_POOL: &str = "_none";
/// Key of the single pool built by [`PoolingStrategy::SinglePool`].
pub const SINGLE_POOL: &str = "_all";

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("document `{0}` is not in the corpus")]
    UnknownDocument(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no tokens to model")]
    EmptyInput,
    #[error("model dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingStrategy {
    ByHashtag,
    ByTimeWindow {
        width_minutes: u32,
    },
    ByQueryTerm,
    SinglePool,
    /// Hashtag pooling, switching to hour-wide time windows when fewer than
    /// two hashtag pools come out.
    #[default]
    Auto,
}

/// Short texts aggregated into one pseudo-document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PooledDocument {
    pub pool_key: String,
    pub member_doc_ids: Vec<String>,
    /// In-vocabulary token count contributed by each member, parallel to
    /// `member_doc_ids`.
    pub member_token_counts: Vec<usize>,
    /// Members' in-vocabulary tokens concatenated in member order.
    pub tokens: Vec<usize>,
}

impl PooledDocument {
    /// `(doc_id, token range)` per member.
    pub fn member_spans(&self) -> impl Iterator<Item = (&str, std::ops::Range<usize>)> {
        let mut start = 0;
        self.member_doc_ids
            .iter()
            .zip(&self.member_token_counts)
            .map(move |(id, n)| {
                let span = start..start + n;
                start += n;
                (id.as_str(), span)
            })
    }
}

struct PoolBuilder<'a> {
    pools: BTreeMap<String, PooledDocument>,
    vocab: &'a Vocabulary,
}

impl PoolBuilder<'_> {
    fn add(&mut self, key: String, doc: &TokenizedDocument) {
        let encoded = self.vocab.encode(&doc.tokens);
        let pool = self
            .pools
            .entry(key.clone())
            .or_insert_with(|| PooledDocument {
                pool_key: key,
                member_doc_ids: Vec::new(),
                member_token_counts: Vec::new(),
                tokens: Vec::new(),
            });
        pool.member_doc_ids.push(doc.doc_id.clone());
        pool.member_token_counts.push(encoded.len());
        pool.tokens.extend(encoded);
    }

    fn finish(self) -> Vec<PooledDocument> {
        self.pools
            .into_values()
            .filter(|p| !p.tokens.is_empty())
            .collect()
    }
}

/// Groups tokenized documents into pooled pseudo-documents. Out-of-vocabulary
/// tokens are dropped and pools left without tokens are discarded. Pools are
/// returned in key order; members keep input order.
pub fn pool(
    docs: &[TokenizedDocument],
    raw: &Corpus,
    vocab: &Vocabulary,
    strategy: PoolingStrategy,
) -> Result<Vec<PooledDocument>, TopicError> {
    let index: HashMap<&str, &crate::corpus::RawDocument> =
        raw.documents().iter().map(|d| (d.id.as_str(), d)).collect();
    let resolve = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| TopicError::UnknownDocument(id.to_string()))
    };
    let mut builder = PoolBuilder {
        pools: BTreeMap::new(),
        vocab,
    };
    match strategy {
        PoolingStrategy::ByHashtag => {
            for doc in docs {
                let tags = resolve(&doc.doc_id)?.hashtags();
                if tags.is_empty() {
                    builder.add(NO_KEY_POOL.to_string(), doc);
                }
                for tag in tags {
                    builder.add(tag.to_string(), doc);
                }
            }
        }
        PoolingStrategy::ByTimeWindow { width_minutes } => {
            if width_minutes == 0 {
                return Err(TopicError::Parameter(
                    "time window width must be positive".into(),
                ));
            }
            let width = i64::from(width_minutes) * 60;
            // Keys sort chronologically only when zero-padded on the bucket
            // number, so pool by bucket first and label afterwards.
            let mut buckets: BTreeMap<i64, Vec<&TokenizedDocument>> = BTreeMap::new();
            for doc in docs {
                let ts = resolve(&doc.doc_id)?.timestamp.timestamp();
                buckets.entry(ts.div_euclid(width)).or_default().push(doc);
            }
            let mut out = Vec::new();
            for (bucket, members) in buckets {
                let label = DateTime::from_timestamp(bucket * width, 0)
                    .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
                    .unwrap_or_else(|| bucket.to_string());
                let mut single = PoolBuilder {
                    pools: BTreeMap::new(),
                    vocab,
                };
                for doc in members {
                    single.add(label.clone(), doc);
                }
                out.extend(single.finish());
            }
            return Ok(out);
        }
        PoolingStrategy::ByQueryTerm => {
            for doc in docs {
                let key = resolve(&doc.doc_id)?
                    .query_term()
                    .map(str::to_lowercase)
                    .unwrap_or_else(|| NO_KEY_POOL.to_string());
                builder.add(key, doc);
            }
        }
        PoolingStrategy::SinglePool => {
            for doc in docs {
                resolve(&doc.doc_id)?;
                builder.add(SINGLE_POOL.to_string(), doc);
            }
        }
        PoolingStrategy::Auto => {
            let by_tag = pool(docs, raw, vocab, PoolingStrategy::ByHashtag)?;
            if by_tag.len() >= 2 {
                return Ok(by_tag);
            }
            return pool(
                docs,
                raw,
                vocab,
                PoolingStrategy::ByTimeWindow { width_minutes: 60 },
            );
        }
    }
    Ok(builder.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaParams {
    /// K=5, alpha=50/K, beta=0.01, 1000 sweeps.
    pub fn with_seed(seed: u64) -> Self {
        LdaParams {
            topics: 5,
            alpha: 10.0,
            beta: 0.01,
            iterations: 1000,
            seed,
        }
    }

    fn validate(&self) -> Result<(), TopicError> {
        if self.topics < 1 {
            return Err(TopicError::Parameter(
                "topic count must be at least 1".into(),
            ));
        }
        if self.iterations < 1 {
            return Err(TopicError::Parameter(
                "iterations must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TopicError::Parameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TopicError::Parameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Fitted LDA state: assignments and the three count tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    params: LdaParams,
    vocabulary: Vocabulary,
    /// Token words per pooled document.
    words: Vec<Vec<usize>>,
    /// Topic of each token, parallel to `words`.
    assignments: Vec<Vec<usize>>,
    doc_topic: Vec<Vec<u32>>,
    topic_term: Vec<Vec<u32>>,
    topic_totals: Vec<u32>,
}

pub fn fit_lda(
    pools: &[PooledDocument],
    vocabulary: &Vocabulary,
    params: LdaParams,
) -> Result<TopicModel, TopicError> {
    params.validate()?;
    let v = vocabulary.len();
    if v == 0 {
        return Err(TopicError::EmptyInput);
    }
    let total: usize = pools.iter().map(|p| p.tokens.len()).sum();
    if total == 0 {
        return Err(TopicError::EmptyInput);
    }
    if let Some(bad) = pools.iter().flat_map(|p| &p.tokens).find(|w| **w >= v) {
        return Err(TopicError::Parameter(format!(
            "token index {bad} outside vocabulary of size {v}"
        )));
    }

    let k = params.topics;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let words: Vec<Vec<usize>> = pools.iter().map(|p| p.tokens.clone()).collect();
    let mut model = TopicModel {
        params,
        vocabulary: vocabulary.clone(),
        assignments: Vec::with_capacity(words.len()),
        doc_topic: vec![vec![0; k]; words.len()],
        topic_term: vec![vec![0; v]; k],
        topic_totals: vec![0; k],
        words,
    };

    for (d, doc) in model.words.iter().enumerate() {
        let mut z = Vec::with_capacity(doc.len());
        for &w in doc {
            let topic = rng.gen_range(0..k);
            model.doc_topic[d][topic] += 1;
            model.topic_term[topic][w] += 1;
            model.topic_totals[topic] += 1;
            z.push(topic);
        }
        model.assignments.push(z);
    }

    let (alpha, beta) = (params.alpha, params.beta);
    let v_beta = v as f64 * beta;
    let mut weights = vec![0.0f64; k];
    for _ in 0..params.iterations {
        for d in 0..model.words.len() {
            for i in 0..model.words[d].len() {
                let w = model.words[d][i];
                let old = model.assignments[d][i];
                model.doc_topic[d][old] -= 1;
                model.topic_term[old][w] -= 1;
                model.topic_totals[old] -= 1;

                let mut cumulative = 0.0;
                for (t, slot) in weights.iter_mut().enumerate() {
                    cumulative += (f64::from(model.doc_topic[d][t]) + alpha)
                        * (f64::from(model.topic_term[t][w]) + beta)
                        / (f64::from(model.topic_totals[t]) + v_beta);
                    *slot = cumulative;
                }
                let u = rng.gen::<f64>() * cumulative;
                let new = weights.iter().position(|c| u < *c).unwrap_or(k - 1);

                model.assignments[d][i] = new;
                model.doc_topic[d][new] += 1;
                model.topic_term[new][w] += 1;
                model.topic_totals[new] += 1;
            }
        }
        debug_assert!(model.check_counts().is_ok(), "{:?}", model.check_counts());
    }
    model.check_counts().map_err(TopicError::Parameter)?;
    Ok(model)
}

impl TopicModel {
    pub fn params(&self) -> &LdaParams {
        &self.params
    }

    pub fn topics(&self) -> usize {
        self.params.topics
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn doc_topic_counts(&self) -> &[Vec<u32>] {
        &self.doc_topic
    }

    pub fn topic_term_counts(&self) -> &[Vec<u32>] {
        &self.topic_term
    }

    pub fn topic_totals(&self) -> &[u32] {
        &self.topic_totals
    }

    pub fn total_tokens(&self) -> usize {
        self.words.iter().map(Vec::len).sum()
    }

    /// Recounts every table from the assignments and compares.
    pub fn check_counts(&self) -> Result<(), String> {
        let k = self.topics();
        let v = self.vocabulary.len();
        let mut doc_topic = vec![vec![0u32; k]; self.words.len()];
        let mut topic_term = vec![vec![0u32; v]; k];
        let mut totals = vec![0u32; k];
        for (d, (doc, z)) in self.words.iter().zip(&self.assignments).enumerate() {
            if doc.len() != z.len() {
                return Err(format!(
                    "document {d}: {} tokens but {} assignments",
                    doc.len(),
                    z.len()
                ));
            }
            for (&w, &t) in doc.iter().zip(z) {
                doc_topic[d][t] += 1;
                topic_term[t][w] += 1;
                totals[t] += 1;
            }
        }
        if doc_topic != self.doc_topic {
            return Err("document-topic counts disagree with assignments".into());
        }
        if topic_term != self.topic_term {
            return Err("topic-term counts disagree with assignments".into());
        }
        if totals != self.topic_totals {
            return Err("topic totals disagree with assignments".into());
        }
        for (d, row) in self.doc_topic.iter().enumerate() {
            let sum: u32 = row.iter().sum();
            if sum as usize != self.words[d].len() {
                return Err(format!("document {d} topic counts sum to {sum}"));
            }
        }
        for (t, row) in self.topic_term.iter().enumerate() {
            let sum: u32 = row.iter().sum();
            if sum != self.topic_totals[t] {
                return Err(format!("topic {t} term counts sum to {sum}"));
            }
        }
        let grand: u32 = self.topic_totals.iter().sum();
        if grand as usize != self.total_tokens() {
            return Err(format!("topic totals sum to {grand}"));
        }
        Ok(())
    }

    fn check_topic(&self, topic: usize) -> Result<(), TopicError> {
        if topic >= self.topics() {
            return Err(TopicError::Parameter(format!(
                "topic {topic} out of range 0..{}",
                self.topics()
            )));
        }
        Ok(())
    }

    /// Document-topic distribution of pooled document `doc`.
    pub fn theta(&self, doc: usize) -> Vec<f64> {
        let k = self.topics() as f64;
        let n = self.words[doc].len() as f64;
        let alpha = self.params.alpha;
        self.doc_topic[doc]
            .iter()
            .map(|c| (f64::from(*c) + alpha) / (n + k * alpha))
            .collect()
    }

    /// Topic-term distribution of `topic`.
    pub fn phi(&self, topic: usize) -> Result<Vec<f64>, TopicError> {
        self.check_topic(topic)?;
        let beta = self.params.beta;
        let denom = f64::from(self.topic_totals[topic]) + self.vocabulary.len() as f64 * beta;
        Ok(self.topic_term[topic]
            .iter()
            .map(|c| (f64::from(*c) + beta) / denom)
            .collect())
    }

    /// The `m` most probable terms of `topic`, ties broken lexicographically.
    pub fn top_terms(&self, topic: usize, m: usize) -> Result<Vec<(String, f64)>, TopicError> {
        if m == 0 {
            return Err(TopicError::Parameter(
                "term count must be at least 1".into(),
            ));
        }
        let phi = self.phi(topic)?;
        let mut ranked: Vec<(String, f64)> =
            self.vocabulary.terms().iter().cloned().zip(phi).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(m);
        Ok(ranked)
    }

    /// Member documents ranked by the share of their tokens assigned to
    /// `topic` (doc id ascending on ties). `pools` must be the pools the
    /// model was fitted on. Documents without in-vocabulary tokens are not
    /// ranked.
    pub fn representative_docs(
        &self,
        pools: &[PooledDocument],
        raw: &Corpus,
        topic: usize,
        n: usize,
    ) -> Result<Vec<String>, TopicError> {
        self.check_topic(topic)?;
        if pools.len() != self.words.len() {
            return Err(TopicError::Parameter(format!(
                "model has {} pooled documents, got {} pools",
                self.words.len(),
                pools.len()
            )));
        }
        Ok(self
            .topic_shares(pools, raw, topic)?
            .into_iter()
            .take(n)
            .map(|(id, _)| id)
            .collect())
    }

    /// `(doc_id, share of tokens on topic)`, best first.
    pub fn topic_shares(
        &self,
        pools: &[PooledDocument],
        raw: &Corpus,
        topic: usize,
    ) -> Result<Vec<(String, f64)>, TopicError> {
        self.check_topic(topic)?;
        let known: std::collections::HashSet<&str> = raw.ids().collect();
        let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for (pool, z) in pools.iter().zip(&self.assignments) {
            for (id, span) in pool.member_spans() {
                if !known.contains(id) {
                    return Err(TopicError::UnknownDocument(id.to_string()));
                }
                let entry = tally.entry(id).or_insert((0, 0));
                entry.0 += z[span.clone()].iter().filter(|t| **t == topic).count();
                entry.1 += span.len();
            }
        }
        let mut shares: Vec<(String, f64)> = tally
            .into_iter()
            .filter(|(_, (_, total))| *total > 0)
            .map(|(id, (on, total))| (id.to_string(), on as f64 / total as f64))
            .collect();
        shares.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(shares)
    }

    pub fn dump(&self) -> ModelDump {
        ModelDump {
            version: MODEL_DUMP_VERSION,
            topics: self.params.topics,
            alpha: self.params.alpha,
            beta: self.params.beta,
            seed: self.params.seed,
            iterations: self.params.iterations,
            vocabulary: self.vocabulary.clone(),
            topic_term: self.topic_term.clone(),
        }
    }
}

pub const MODEL_DUMP_VERSION: u32 = 1;

/// Serialized summary of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub version: u32,
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
    pub vocabulary: Vocabulary,
    pub topic_term: Vec<Vec<u32>>,
}

impl ModelDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TopicError> {
        let dump: ModelDump =
            serde_json::from_str(text).map_err(|e| TopicError::Dump(e.to_string()))?;
        if dump.version != MODEL_DUMP_VERSION {
            return Err(TopicError::Dump(format!(
                "unsupported version {}",
                dump.version
            )));
        }
        if dump.topic_term.len() != dump.topics
            || dump
                .topic_term
                .iter()
                .any(|r| r.len() != dump.vocabulary.len())
        {
            return Err(TopicError::Dump("count matrix shape mismatch".into()));
        }
        Ok(dump)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopicError> {
        let text = fs::read_to_string(path).map_err(|e| TopicError::Dump(e.to_string()))?;
        ModelDump::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeight {
    pub term: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_index: usize,
    pub top_terms: Vec<TermWeight>,
    pub representative_doc_ids: Vec<String>,
    /// UMass coherence of the top terms over the tokenized documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence: Option<f64>,
}

/// UMass coherence: sum over ordered pairs (i > j) of
/// `ln((D(w_i, w_j) + 1) / D(w_j))`, with D counting documents.
pub fn umass_coherence(terms: &[&str], docs: &[TokenizedDocument]) -> Option<f64> {
    if terms.len() < 2 {
        return None;
    }
    let sets: Vec<std::collections::HashSet<&str>> = docs
        .iter()
        .map(|d| d.tokens.iter().map(String::as_str).collect())
        .collect();
    let df = |t: &str| sets.iter().filter(|s| s.contains(t)).count();
    let co = |a: &str, b: &str| {
        sets.iter()
            .filter(|s| s.contains(a) && s.contains(b))
            .count()
    };
    let mut score = 0.0;
    for i in 1..terms.len() {
        for j in 0..i {
            let dj = df(terms[j]);
            if dj == 0 {
                return None;
            }
            score += ((co(terms[i], terms[j]) + 1) as f64 / dj as f64).ln();
        }
    }
    Some(score)
}
