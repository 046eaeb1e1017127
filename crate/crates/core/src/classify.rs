//! Multinomial naive Bayes with regex keyword boosting, and the two-stage
//! FR/NFR then NFR-category classification of requirement candidates.
//!
//! Boost rules are written against stemmed tokens and must match a whole
//! token (`malfunct|signal` matches `signal`, not `signals`). A rule whose
//! target class belongs to a model raises the weight of the terms it matches
//! in that model: each such term counts `gamma` times. The weight is applied
//! to every class score of that model, so a term whose likelihood is highest
//! under the target class pulls harder towards it as `gamma` grows.
//! Training always uses raw counts.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentRecord, RawDocument};
use crate::preprocess::{TokenizedDocument, Vocabulary};
use crate::registry::ServiceId;

pub const FR_LABEL: &str = "FR";
pub const NFR_LABEL: &str = "NFR";

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("class `{0}` has no training documents")]
    EmptyClass(String),
    #[error("label `{0}` is not a declared class")]
    UnknownLabel(String),
    #[error("no classes declared")]
    NoClasses,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("smoothing must be positive, got {0}")]
    Smoothing(f64),
    #[error("boost rule `{id}`: {message}")]
    InvalidRule { id: String, message: String },
    #[error("models were trained on different vocabularies")]
    VocabularyMismatch,
    #[error("model classes must be {expected}, got {actual:?}")]
    UnexpectedClasses {
        expected: String,
        actual: Vec<String>,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequirementKind {
    #[serde(rename = "FR")]
    Functional,
    #[serde(rename = "NFR")]
    NonFunctional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NfrCategory {
    Reliability,
    Performance,
    Security,
    Usability,
    Maintainability,
    Portability,
    Other,
}

impl NfrCategory {
    pub const ALL: [NfrCategory; 7] = [
        NfrCategory::Reliability,
        NfrCategory::Performance,
        NfrCategory::Security,
        NfrCategory::Usability,
        NfrCategory::Maintainability,
        NfrCategory::Portability,
        NfrCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NfrCategory::Reliability => "reliability",
            NfrCategory::Performance => "performance",
            NfrCategory::Security => "security",
            NfrCategory::Usability => "usability",
            NfrCategory::Maintainability => "maintainability",
            NfrCategory::Portability => "portability",
            NfrCategory::Other => "other",
        }
    }
}

impl fmt::Display for NfrCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NfrCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NfrCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown NFR category `{s}`"))
    }
}

pub const DEFAULT_GAMMA: f64 = 2.0;

/// Boost rule as written in a rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRule {
    pub id: String,
    pub pattern: String,
    pub target_class: String,
    /// Multiplier; rules without one take the default given at compile time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub service: ServiceId,
}

impl BoostRule {
    pub fn compile(self, default_gamma: f64) -> Result<CompiledRule, ClassifyError> {
        let gamma = self.gamma.unwrap_or(default_gamma);
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(ClassifyError::InvalidRule {
                id: self.id,
                message: format!("gamma must be a finite value >= 1, got {gamma}"),
            });
        }
        let regex = Regex::new(&format!("^(?:{})$", self.pattern)).map_err(|e| {
            ClassifyError::InvalidRule {
                id: self.id.clone(),
                message: e.to_string(),
            }
        })?;
        Ok(CompiledRule {
            rule: self,
            gamma,
            regex,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule: BoostRule,
    pub gamma: f64,
    regex: Regex,
}

impl CompiledRule {
    pub fn matches(&self, term: &str) -> bool {
        self.regex.is_match(term)
    }
}

/// Reads a rule file: one JSON record per line with `id`, `pattern`,
/// `target_class`, `gamma` and `service`.
pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<BoostRule>, ClassifyError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ClassifyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_rules(&text)
}

pub fn parse_rules(text: &str) -> Result<Vec<BoostRule>, ClassifyError> {
    let mut rules = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rule: BoostRule = serde_json::from_str(line).map_err(|e| ClassifyError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        rules.push(rule);
    }
    Ok(rules)
}

pub fn compile_rules(
    rules: &[BoostRule],
    default_gamma: f64,
) -> Result<Vec<CompiledRule>, ClassifyError> {
    rules
        .iter()
        .cloned()
        .map(|r| r.compile(default_gamma))
        .collect()
}

/// Per-term effective counts of `doc` when scoring `class`: a term matched
/// by at least one rule targeting `class` counts `gamma_max` times.
pub fn apply_boosts(
    doc: &TokenizedDocument,
    rules: &[CompiledRule],
    class: &str,
) -> BTreeMap<String, f64> {
    let targeting: Vec<&CompiledRule> = rules
        .iter()
        .filter(|r| r.rule.target_class == class)
        .collect();
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for token in &doc.tokens {
        *counts.entry(token.clone()).or_insert(0.0) += 1.0;
    }
    for (term, count) in counts.iter_mut() {
        let gamma = targeting
            .iter()
            .filter(|r| r.matches(term))
            .map(|r| r.gamma)
            .fold(None, |acc: Option<f64>, g| {
                Some(acc.map_or(g, |a| a.max(g)))
            });
        if let Some(gamma) = gamma {
            *count *= gamma;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub classes: Vec<String>,
    pub log_prior: Vec<f64>,
    /// `log_likelihood[c][w]`, class by vocabulary index.
    pub log_likelihood: Vec<Vec<f64>>,
    pub vocabulary: Vocabulary,
    pub smoothing: f64,
    pub trained_on: usize,
}

/// Trains a multinomial model with additive smoothing `smoothing`.
/// Out-of-vocabulary training tokens are ignored.
pub fn train_nb(
    labeled: &[(TokenizedDocument, String)],
    classes: &[String],
    vocabulary: &Vocabulary,
    smoothing: f64,
) -> Result<NbModel, ClassifyError> {
    if classes.is_empty() {
        return Err(ClassifyError::NoClasses);
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(ClassifyError::Smoothing(smoothing));
    }
    if vocabulary.is_empty() {
        return Err(ClassifyError::EmptyVocabulary);
    }
    let v = vocabulary.len();
    let mut doc_counts = vec![0usize; classes.len()];
    let mut term_counts = vec![vec![0usize; v]; classes.len()];
    for (doc, label) in labeled {
        let c = classes
            .iter()
            .position(|x| x == label)
            .ok_or_else(|| ClassifyError::UnknownLabel(label.clone()))?;
        doc_counts[c] += 1;
        for w in vocabulary.encode(&doc.tokens) {
            term_counts[c][w] += 1;
        }
    }
    if let Some(c) = doc_counts.iter().position(|n| *n == 0) {
        return Err(ClassifyError::EmptyClass(classes[c].clone()));
    }
    let total = labeled.len() as f64;
    let log_prior = doc_counts
        .iter()
        .map(|n| (*n as f64 / total).ln())
        .collect();
    let log_likelihood = term_counts
        .iter()
        .map(|row| {
            let class_total: usize = row.iter().sum();
            let denom = class_total as f64 + smoothing * v as f64;
            row.iter()
                .map(|n| ((*n as f64 + smoothing) / denom).ln())
                .collect()
        })
        .collect();
    Ok(NbModel {
        classes: classes.to_vec(),
        log_prior,
        log_likelihood,
        vocabulary: vocabulary.clone(),
        smoothing,
        trained_on: labeled.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    /// Log-score per class, in model class order.
    pub scores: Vec<f64>,
    /// Posterior per class, in model class order.
    pub posterior: Vec<f64>,
    /// Set when the document had no in-vocabulary tokens; the label is then
    /// the prior argmax.
    pub unclassifiable: bool,
}

impl Prediction {
    pub fn posterior_of(&self, model: &NbModel, class: &str) -> Option<f64> {
        model
            .classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.posterior[i])
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

impl NbModel {
    /// Effective count of each in-vocabulary term of `doc`: the largest
    /// boosted count over rules targeting any class of this model.
    pub fn term_weights(
        &self,
        doc: &TokenizedDocument,
        rules: &[CompiledRule],
    ) -> Vec<(usize, f64)> {
        let in_vocab = TokenizedDocument::new(
            doc.doc_id.clone(),
            doc.tokens
                .iter()
                .filter(|t| self.vocabulary.index_of(t).is_some())
                .cloned()
                .collect(),
        );
        let mut weights = apply_boosts(&in_vocab, &[], "");
        for class in &self.classes {
            for (term, count) in apply_boosts(&in_vocab, rules, class) {
                let slot = weights.get_mut(&term).expect("same terms");
                *slot = slot.max(count);
            }
        }
        weights
            .into_iter()
            .map(|(term, w)| (self.vocabulary.index_of(&term).expect("in vocabulary"), w))
            .collect()
    }

    pub fn predict(&self, doc: &TokenizedDocument, rules: &[CompiledRule]) -> Prediction {
        let weights = self.term_weights(doc, rules);
        let unclassifiable = weights.is_empty();
        let scores: Vec<f64> = (0..self.classes.len())
            .map(|c| {
                self.log_prior[c]
                    + weights
                        .iter()
                        .map(|(w, n)| n * self.log_likelihood[c][*w])
                        .sum::<f64>()
            })
            .collect();
        let best = argmax(&scores);
        Prediction {
            label: self.classes[best].clone(),
            posterior: softmax(&scores),
            scores,
            unclassifiable,
        }
    }
}

pub fn predict(model: &NbModel, doc: &TokenizedDocument, rules: &[CompiledRule]) -> Prediction {
    model.predict(doc, rules)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    pub text: String,
    pub kind: RequirementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfr_category: Option<NfrCategory>,
    pub confidence: f64,
    pub provenance: Provenance,
    pub service_id: ServiceId,
    /// Distinct stems of the text plus one step of rule expansion.
    #[serde(default)]
    pub expanded_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub requirements: Vec<Requirement>,
    pub rejected: Vec<Rejected>,
}

/// A candidate text with the topic it was drawn from.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub raw: &'a RawDocument,
    pub tokens: &'a TokenizedDocument,
    pub topic: Option<usize>,
}

fn expect_classes(model: &NbModel, allowed: &[&str], expected: &str) -> Result<(), ClassifyError> {
    if model.classes.is_empty() || !model.classes.iter().all(|c| allowed.contains(&c.as_str())) {
        return Err(ClassifyError::UnexpectedClasses {
            expected: expected.to_string(),
            actual: model.classes.clone(),
        });
    }
    Ok(())
}

/// Stage one labels FR vs NFR; stage two assigns a category to NFRs. The
/// confidence of an NFR is the product of both stage posteriors. Candidates
/// without in-vocabulary tokens are rejected.
pub fn classify_candidates(
    candidates: &[Candidate<'_>],
    fr_nfr: &NbModel,
    categories: &NbModel,
    rules: &[CompiledRule],
    service: ServiceId,
) -> Result<Classification, ClassifyError> {
    expect_classes(fr_nfr, &[FR_LABEL, NFR_LABEL], "FR and NFR")?;
    let names: Vec<&str> = NfrCategory::ALL.iter().map(|c| c.as_str()).collect();
    expect_classes(categories, &names, "NFR categories")?;
    if fr_nfr.vocabulary != categories.vocabulary {
        return Err(ClassifyError::VocabularyMismatch);
    }
    let rules: Vec<CompiledRule> = rules
        .iter()
        .filter(|r| r.rule.service == service)
        .cloned()
        .collect();

    let mut out = Classification::default();
    let mut seen = HashSet::new();
    for candidate in candidates {
        if !seen.insert(candidate.raw.id.as_str()) {
            continue;
        }
        let first = fr_nfr.predict(candidate.tokens, &rules);
        if first.unclassifiable {
            out.rejected.push(Rejected {
                doc_id: candidate.raw.id.clone(),
                reason: "no in-vocabulary tokens".into(),
            });
            continue;
        }
        let p_first = first.posterior_of(fr_nfr, &first.label).unwrap_or(0.0);
        let (kind, nfr_category, confidence) = if first.label == NFR_LABEL {
            let second = categories.predict(candidate.tokens, &rules);
            let category: NfrCategory = second.label.parse().expect("validated class names");
            let p_second = second
                .posterior_of(categories, &second.label)
                .unwrap_or(0.0);
            (
                RequirementKind::NonFunctional,
                Some(category),
                p_first * p_second,
            )
        } else {
            (RequirementKind::Functional, None, p_first)
        };
        out.requirements.push(Requirement {
            id: format!("req-{}", candidate.raw.id),
            text: candidate.raw.text.clone(),
            kind,
            nfr_category,
            confidence: confidence.clamp(0.0, 1.0),
            provenance: Provenance {
                doc_ids: vec![candidate.raw.id.clone()],
                topic: candidate.topic,
            },
            service_id: service,
            expanded_terms: Vec::new(),
        });
    }
    Ok(out)
}

/// A labeled training record: a corpus line plus `label`, which is `FR` or
/// an NFR category name.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDocument {
    pub document: RawDocument,
    pub label: TrainingLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingLabel {
    Functional,
    NonFunctional(NfrCategory),
}

impl FromStr for TrainingLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == FR_LABEL {
            return Ok(TrainingLabel::Functional);
        }
        let category = s.strip_prefix("NFR:").unwrap_or(s);
        category
            .parse()
            .map(TrainingLabel::NonFunctional)
            .map_err(|_| format!("label `{s}` is neither FR nor an NFR category"))
    }
}

pub fn parse_labeled(text: &str) -> Result<Vec<LabeledDocument>, ClassifyError> {
    #[derive(Deserialize)]
    struct Line {
        #[serde(flatten)]
        record: DocumentRecord,
        label: String,
    }
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ClassifyError::Parse {
            line: idx + 1,
            message,
        };
        let parsed: Line = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let label = parsed.label.parse().map_err(err)?;
        let document = parsed.record.into_document().map_err(err)?;
        out.push(LabeledDocument { document, label });
    }
    Ok(out)
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledDocument>, ClassifyError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ClassifyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_labeled(&text)
}

/// The FR/NFR and category models trained on one shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageModel {
    pub fr_nfr: NbModel,
    pub categories: NbModel,
}

impl TwoStageModel {
    /// `tokenized` must be parallel to `labeled`. The vocabulary is every
    /// training term; category classes are the categories present.
    pub fn train(
        labeled: &[LabeledDocument],
        tokenized: &[TokenizedDocument],
        smoothing: f64,
    ) -> Result<Self, ClassifyError> {
        let vocabulary = crate::preprocess::build_vocabulary(tokenized, 1);
        let stage_one: Vec<(TokenizedDocument, String)> = labeled
            .iter()
            .zip(tokenized)
            .map(|(l, t)| {
                let label = match l.label {
                    TrainingLabel::Functional => FR_LABEL,
                    TrainingLabel::NonFunctional(_) => NFR_LABEL,
                };
                (t.clone(), label.to_string())
            })
            .collect();
        let stage_two: Vec<(TokenizedDocument, String)> = labeled
            .iter()
            .zip(tokenized)
            .filter_map(|(l, t)| match l.label {
                TrainingLabel::NonFunctional(c) => Some((t.clone(), c.as_str().to_string())),
                TrainingLabel::Functional => None,
            })
            .collect();
        let present: HashSet<&str> = stage_two.iter().map(|(_, c)| c.as_str()).collect();
        let category_classes: Vec<String> = NfrCategory::ALL
            .iter()
            .map(|c| c.as_str())
            .filter(|c| present.contains(c))
            .map(String::from)
            .collect();
        let fr_nfr = train_nb(
            &stage_one,
            &[FR_LABEL.to_string(), NFR_LABEL.to_string()],
            &vocabulary,
            smoothing,
        )?;
        let categories = train_nb(&stage_two, &category_classes, &vocabulary, smoothing)?;
        Ok(TwoStageModel { fr_nfr, categories })
    }
}
