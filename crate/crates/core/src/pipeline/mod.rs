//! The elicitation workflow: a persisted project moving through region,
//! service, sources and context to a run that produces classified
//! requirements.
//!
//! ```text
//! Created -> ServiceSelected -> SourcesSelected -> ContextSet -> Running -> Complete
//!                                                      ^                 \-> Failed
//!                                                      '---- reset ---------'
//! ```
//!
//! `SourcesSelected` is passed through inside
//! [`Project::set_sources_and_context`] and never persisted. A reset moves
//! a finished (or abandoned running) project back to `ContextSet`.

mod config;
mod engine;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{
    classify_candidates, compile_rules, BoostRule, Candidate, LabeledDocument, Rejected,
    Requirement, RequirementKind, TwoStageModel, DEFAULT_GAMMA,
};
use crate::corpus::{filter_by_context, Connector, ContextSpec, Corpus, SourceKind};
use crate::preprocess::{build_vocabulary, Preprocessor, TokenizedDocument};
use crate::registry::{
    Catalog, FieldDescriptor, RegionSpec, RegistryError, ServiceId, SourceCounts,
};
use crate::rules::{expand_terms, mine_rules, AssociationRule, MiningParams, Transaction};
use crate::topics::{
    fit_lda, pool, umass_coherence, LdaParams, ModelDump, PoolingStrategy, TermWeight, TopicSummary,
};

pub use config::{ConfigError, DataConfig, ProjectConfig};
pub use engine::{Engine, TrainingArtifacts};
pub use store::{FileStore, MemoryStore, ProjectStore, StoreError, STORE_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectState {
    Created,
    ServiceSelected,
    SourcesSelected,
    ContextSet,
    Running,
    Complete,
    Failed,
}

impl ProjectState {
    pub const ALL: [ProjectState; 7] = [
        ProjectState::Created,
        ProjectState::ServiceSelected,
        ProjectState::SourcesSelected,
        ProjectState::ContextSet,
        ProjectState::Running,
        ProjectState::Complete,
        ProjectState::Failed,
    ];

    /// Edges of the transition graph, reset edges included.
    pub fn can_move_to(self, next: ProjectState) -> bool {
        use ProjectState::*;
        matches!(
            (self, next),
            (Created, ServiceSelected)
                | (ServiceSelected, SourcesSelected)
                | (SourcesSelected, ContextSet)
                | (ContextSet, Running)
                | (Running, Complete)
                | (Running, Failed)
                | (Complete, ContextSet)
                | (Failed, ContextSet)
                | (Running, ContextSet)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProjectState::Created => "created",
            ProjectState::ServiceSelected => "service_selected",
            ProjectState::SourcesSelected => "sources_selected",
            ProjectState::ContextSet => "context_set",
            ProjectState::Running => "running",
            ProjectState::Complete => "complete",
            ProjectState::Failed => "failed",
        }
    }
}

impl fmt::Display for ProjectState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse error classes, one per API error code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Validation,
    State,
    Eligibility,
    Schema,
    NotFound,
    Internal,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("cannot {operation} a project in state {state}")]
    State {
        operation: &'static str,
        state: ProjectState,
    },
    #[error("a run is already in progress for project `{0}`")]
    Busy(String),
    #[error("{0}")]
    Eligibility(String),
    #[error("{field} required for source {source_kind}")]
    Schema {
        source_kind: SourceKind,
        field: String,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

impl PipelineError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::Validation(_) => ErrorCategory::Validation,
            PipelineError::State { .. } | PipelineError::Busy(_) => ErrorCategory::State,
            PipelineError::Eligibility(_) => ErrorCategory::Eligibility,
            PipelineError::Schema { .. } => ErrorCategory::Schema,
            PipelineError::Registry(e) => match e {
                RegistryError::InvalidRegion(_)
                | RegistryError::UnknownService(_)
                | RegistryError::UnknownSource(_) => ErrorCategory::Validation,
                RegistryError::NotEligible(_) => ErrorCategory::Eligibility,
                RegistryError::Io { .. } | RegistryError::Malformed(_) => ErrorCategory::Internal,
            },
            PipelineError::Store(StoreError::NotFound(_)) => ErrorCategory::NotFound,
            PipelineError::Store(_) => ErrorCategory::Internal,
            PipelineError::EmptyCorpus | PipelineError::Stage { .. } => ErrorCategory::Internal,
        }
    }

    fn stage(stage: &'static str, error: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: error.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub region: RegionSpec,
    pub state: ProjectState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_id: Option<ServiceId>,
    #[serde(default)]
    pub selected_sources: Vec<SourceKind>,
    #[serde(default)]
    pub context: BTreeMap<SourceKind, ContextSpec>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    /// Stored separately from the project record.
    #[serde(skip)]
    pub result: Option<ElicitationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

/// Whether the context schema field `field` is filled in `spec`.
fn field_populated(spec: &ContextSpec, field: &str) -> bool {
    match field {
        "keywords" => !spec.keywords.is_empty(),
        "hashtags" => !spec.hashtags.is_empty(),
        "date_range" => spec.date_range.is_some(),
        "language" => !spec.language.is_empty(),
        "max_documents" => spec.max_documents.is_some(),
        "geo_area" => spec.geo_filter.is_some(),
        _ => false,
    }
}

pub fn check_context_schema(
    kind: SourceKind,
    schema: &[FieldDescriptor],
    spec: &ContextSpec,
) -> Result<(), PipelineError> {
    for field in schema.iter().filter(|f| f.required) {
        if !field_populated(spec, &field.name) {
            return Err(PipelineError::Schema {
                source_kind: kind,
                field: field.name.clone(),
            });
        }
    }
    spec.validate()
        .map_err(|e| PipelineError::Validation(format!("{kind}: {e}")))
}

impl Project {
    pub fn new(
        id: impl Into<String>,
        region: RegionSpec,
        now: DateTime<Utc>,
    ) -> Result<Self, PipelineError> {
        region.validate()?;
        Ok(Project {
            id: id.into(),
            region,
            state: ProjectState::Created,
            service_id: None,
            selected_sources: Vec::new(),
            context: BTreeMap::new(),
            created_at: now,
            updated_at: now,
            result: None,
            failure_reason: None,
        })
    }

    fn expect_state(
        &self,
        operation: &'static str,
        allowed: &[ProjectState],
    ) -> Result<(), PipelineError> {
        if allowed.contains(&self.state) {
            Ok(())
        } else {
            Err(PipelineError::State {
                operation,
                state: self.state,
            })
        }
    }

    fn move_to(&mut self, next: ProjectState, now: DateTime<Utc>) {
        debug_assert!(self.state.can_move_to(next), "{} -> {}", self.state, next);
        self.state = next;
        self.updated_at = now;
    }

    pub fn select_service(
        &mut self,
        catalog: &Catalog,
        counts: &SourceCounts,
        service: ServiceId,
        now: DateTime<Utc>,
    ) -> Result<(), PipelineError> {
        self.expect_state("select a service for", &[ProjectState::Created])?;
        catalog.service(service)?;
        if !catalog
            .eligible_services(&self.region, counts)
            .iter()
            .any(|s| s.id == service)
        {
            return Err(PipelineError::Eligibility(format!(
                "service {service} is not offered for region {}",
                self.region.name
            )));
        }
        self.service_id = Some(service);
        self.move_to(ProjectState::ServiceSelected, now);
        Ok(())
    }

    /// Selects sources and records their contexts in one step. Duplicate
    /// sources are collapsed; contexts for unselected sources are rejected.
    pub fn set_sources_and_context(
        &mut self,
        catalog: &Catalog,
        counts: &SourceCounts,
        sources: &[SourceKind],
        contexts: &BTreeMap<SourceKind, ContextSpec>,
        now: DateTime<Utc>,
    ) -> Result<(), PipelineError> {
        self.expect_state("set sources for", &[ProjectState::ServiceSelected])?;
        let service = self.service_id.expect("service set once selected");
        if sources.is_empty() {
            return Err(PipelineError::Eligibility("no data source selected".into()));
        }
        let available: BTreeSet<SourceKind> = catalog
            .available_sources(&self.region, service, counts)?
            .iter()
            .map(|s| s.kind)
            .collect();
        let mut selected = Vec::new();
        for kind in sources {
            if !available.contains(kind) {
                return Err(PipelineError::Eligibility(format!(
                    "source {kind} is not available for {service} in region {}",
                    self.region.name
                )));
            }
            if !selected.contains(kind) {
                selected.push(*kind);
            }
        }
        if let Some(extra) = contexts.keys().find(|k| !selected.contains(k)) {
            return Err(PipelineError::Validation(format!(
                "context given for unselected source {extra}"
            )));
        }
        let mut context = BTreeMap::new();
        for kind in &selected {
            let spec = contexts.get(kind).cloned().unwrap_or_default();
            check_context_schema(*kind, catalog.context_schema(*kind)?, &spec)?;
            context.insert(*kind, spec);
        }
        self.selected_sources = selected;
        self.context = context;
        self.move_to(ProjectState::SourcesSelected, now);
        self.move_to(ProjectState::ContextSet, now);
        Ok(())
    }

    /// Back to `ContextSet`, dropping any result or failure.
    pub fn reset(&mut self, now: DateTime<Utc>) -> Result<(), PipelineError> {
        self.expect_state(
            "reset",
            &[
                ProjectState::Complete,
                ProjectState::Failed,
                ProjectState::Running,
            ],
        )?;
        self.result = None;
        self.failure_reason = None;
        self.move_to(ProjectState::ContextSet, now);
        Ok(())
    }

    /// Enters `Running`. Finished projects need `reset`.
    pub fn begin_run(&mut self, reset: bool, now: DateTime<Utc>) -> Result<(), PipelineError> {
        if reset && matches!(self.state, ProjectState::Complete | ProjectState::Failed) {
            self.reset(now)?;
        }
        self.expect_state("run", &[ProjectState::ContextSet])?;
        self.move_to(ProjectState::Running, now);
        Ok(())
    }

    pub fn complete(
        &mut self,
        result: ElicitationResult,
        now: DateTime<Utc>,
    ) -> Result<(), PipelineError> {
        self.expect_state("complete", &[ProjectState::Running])?;
        self.result = Some(result);
        self.move_to(ProjectState::Complete, now);
        Ok(())
    }

    pub fn fail(
        &mut self,
        reason: impl Into<String>,
        now: DateTime<Utc>,
    ) -> Result<(), PipelineError> {
        self.expect_state("fail", &[ProjectState::Running])?;
        self.failure_reason = Some(reason.into());
        self.move_to(ProjectState::Failed, now);
        Ok(())
    }

    /// The structural invariants of a project record.
    pub fn check_invariants(&self) -> Result<(), String> {
        let selected = self.state >= ProjectState::ServiceSelected;
        if selected != self.service_id.is_some() {
            return Err(format!(
                "service_id presence does not match state {}",
                self.state
            ));
        }
        if (self.state == ProjectState::Complete) != self.result.is_some() {
            return Err(format!(
                "result presence does not match state {}",
                self.state
            ));
        }
        if (self.state == ProjectState::Failed) != self.failure_reason.is_some() {
            return Err(format!(
                "failure reason presence does not match state {}",
                self.state
            ));
        }
        if let Some(result) = &self.result {
            result.check_invariants()?;
        }
        Ok(())
    }
}

/// Run settings. Everything a run depends on besides its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub topics: usize,
    /// Defaults to 50 / topics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub smoothing: f64,
    /// Multiplier of boost rules that do not carry their own.
    pub default_gamma: f64,
    pub min_support: f64,
    pub min_confidence: f64,
    pub max_itemset_size: usize,
    pub pooling: PoolingStrategy,
    pub candidates_per_topic: usize,
    pub top_terms: usize,
    pub min_term_frequency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mining = MiningParams::default();
        RunConfig {
            seed: 42,
            topics: 5,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            smoothing: 1.0,
            default_gamma: DEFAULT_GAMMA,
            min_support: mining.min_support,
            min_confidence: mining.min_confidence,
            max_itemset_size: mining.max_itemset_size,
            pooling: PoolingStrategy::default(),
            candidates_per_topic: 10,
            top_terms: 10,
            min_term_frequency: 1,
        }
    }
}

impl RunConfig {
    pub fn lda(&self) -> LdaParams {
        LdaParams {
            topics: self.topics,
            alpha: self.alpha.unwrap_or(50.0 / self.topics.max(1) as f64),
            beta: self.beta,
            iterations: self.iterations,
            seed: self.seed,
        }
    }

    pub fn mining(&self) -> MiningParams {
        MiningParams {
            min_support: self.min_support,
            min_confidence: self.min_confidence,
            max_itemset_size: self.max_itemset_size,
        }
    }

    /// The same configuration with every default made explicit.
    pub fn resolved(&self) -> RunConfig {
        RunConfig {
            alpha: Some(self.lda().alpha),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationResult {
    pub requirements: Vec<Requirement>,
    pub topics: Vec<TopicSummary>,
    pub rules: Vec<AssociationRule>,
    pub rejected: Vec<Rejected>,
    pub run_config: RunConfig,
    /// Ids of the merged, filtered corpus the run worked on, sorted.
    pub corpus_doc_ids: Vec<String>,
    /// Wall-clock time per stage. Never persisted.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl ElicitationResult {
    pub fn functional(&self) -> impl Iterator<Item = &Requirement> {
        self.requirements
            .iter()
            .filter(|r| r.kind == RequirementKind::Functional)
    }

    pub fn non_functional(&self) -> impl Iterator<Item = &Requirement> {
        self.requirements
            .iter()
            .filter(|r| r.kind == RequirementKind::NonFunctional)
    }

    /// Every referenced doc id is in the corpus, requirement ids are
    /// unique, and categories appear exactly on NFRs.
    pub fn check_invariants(&self) -> Result<(), String> {
        let corpus: BTreeSet<&str> = self.corpus_doc_ids.iter().map(String::as_str).collect();
        let referenced = self
            .requirements
            .iter()
            .flat_map(|r| r.provenance.doc_ids.iter())
            .chain(
                self.topics
                    .iter()
                    .flat_map(|t| t.representative_doc_ids.iter()),
            )
            .chain(self.rejected.iter().map(|r| &r.doc_id));
        for id in referenced {
            if !corpus.contains(id.as_str()) {
                return Err(format!("document `{id}` is not in the run corpus"));
            }
        }
        let mut ids = BTreeSet::new();
        for r in &self.requirements {
            if !ids.insert(r.id.as_str()) {
                return Err(format!("requirement id `{}` repeats", r.id));
            }
            let is_nfr = r.kind == RequirementKind::NonFunctional;
            if is_nfr != r.nfr_category.is_some() {
                return Err(format!("requirement `{}` has a category mismatch", r.id));
            }
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(format!("requirement `{}` confidence out of range", r.id));
            }
        }
        Ok(())
    }
}

/// Everything a run reads besides the project.
pub struct RunInputs<'a> {
    pub connectors: &'a BTreeMap<SourceKind, std::sync::Arc<dyn Connector>>,
    pub preprocessor: &'a Preprocessor,
    pub labeled: &'a [LabeledDocument],
    /// Tokens of `labeled`, in the same order.
    pub labeled_tokens: &'a [TokenizedDocument],
    pub boost_rules: &'a [BoostRule],
}

pub struct RunOutput {
    pub result: ElicitationResult,
    pub model: ModelDump,
}

struct Clock {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Clock {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            millis: (now - self.last).as_secs_f64() * 1000.0,
        });
        self.last = now;
    }
}

/// Runs every stage for `project` and returns the result and the topic
/// model. Deterministic given the inputs and `config.seed`.
pub fn elicit(
    project: &Project,
    inputs: &RunInputs<'_>,
    config: &RunConfig,
) -> Result<RunOutput, PipelineError> {
    let service = project.service_id.ok_or(PipelineError::State {
        operation: "run",
        state: project.state,
    })?;
    let mut clock = Clock::new();

    let mut parts = Vec::new();
    for kind in &project.selected_sources {
        let connector = inputs.connectors.get(kind).ok_or_else(|| {
            PipelineError::stage("load", format!("no connector for source {kind}"))
        })?;
        let corpus = connector
            .fetch()
            .map_err(|e| PipelineError::stage("load", e))?;
        let spec = project.context.get(kind).cloned().unwrap_or_default();
        parts.push(filter_by_context(&corpus, &spec));
    }
    let corpus = Corpus::merge(parts).map_err(|e| PipelineError::stage("merge", e))?;
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    clock.lap("load");

    let tokenized = inputs.preprocessor.documents(corpus.documents());
    let vocabulary = build_vocabulary(&tokenized, config.min_term_frequency);
    clock.lap("preprocess");

    let pools = pool(&tokenized, &corpus, &vocabulary, config.pooling)
        .map_err(|e| PipelineError::stage("pool", e))?;
    let model = fit_lda(&pools, &vocabulary, config.lda())
        .map_err(|e| PipelineError::stage("topics", e))?;
    let mut topics = Vec::new();
    let mut candidate_topic: Vec<(String, usize)> = Vec::new();
    for k in 0..model.topics() {
        let top = model
            .top_terms(k, config.top_terms)
            .map_err(|e| PipelineError::stage("topics", e))?;
        let docs = model
            .representative_docs(&pools, &corpus, k, config.candidates_per_topic)
            .map_err(|e| PipelineError::stage("topics", e))?;
        let terms: Vec<&str> = top.iter().map(|(t, _)| t.as_str()).collect();
        topics.push(TopicSummary {
            topic_index: k,
            coherence: umass_coherence(&terms, &tokenized),
            top_terms: top
                .iter()
                .map(|(term, probability)| TermWeight {
                    term: term.clone(),
                    probability: *probability,
                })
                .collect(),
            representative_doc_ids: docs.clone(),
        });
        for id in docs {
            if !candidate_topic.iter().any(|(d, _)| *d == id) {
                candidate_topic.push((id, k));
            }
        }
    }
    clock.lap("topics");

    let index: BTreeMap<&str, usize> = corpus
        .documents()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    let candidates: Vec<Candidate<'_>> = candidate_topic
        .iter()
        .map(|(id, k)| {
            let i = index[id.as_str()];
            Candidate {
                raw: &corpus.documents()[i],
                tokens: &tokenized[i],
                topic: Some(*k),
            }
        })
        .collect();
    let classifier = TwoStageModel::train(inputs.labeled, inputs.labeled_tokens, config.smoothing)
        .map_err(|e| PipelineError::stage("train", e))?;
    let rules = compile_rules(inputs.boost_rules, config.default_gamma)
        .map_err(|e| PipelineError::stage("classify", e))?;
    let classification = classify_candidates(
        &candidates,
        &classifier.fr_nfr,
        &classifier.categories,
        &rules,
        service,
    )
    .map_err(|e| PipelineError::stage("classify", e))?;
    clock.lap("classify");

    let transactions: Vec<Transaction> = candidates
        .iter()
        .map(|c| Transaction::from_document(c.tokens))
        .collect();
    let association_rules = if transactions.is_empty() {
        Vec::new()
    } else {
        mine_rules(&transactions, &config.mining()).map_err(|e| PipelineError::stage("rules", e))?
    };
    let mut requirements = classification.requirements;
    for requirement in &mut requirements {
        let doc_id = &requirement.provenance.doc_ids[0];
        let seeds: BTreeSet<String> = tokenized[index[doc_id.as_str()]]
            .tokens
            .iter()
            .cloned()
            .collect();
        requirement.expanded_terms = expand_terms(&association_rules, &seeds)
            .into_iter()
            .collect();
    }
    clock.lap("rules");

    let mut corpus_doc_ids: Vec<String> = corpus.ids().map(String::from).collect();
    corpus_doc_ids.sort();
    Ok(RunOutput {
        result: ElicitationResult {
            requirements,
            topics,
            rules: association_rules,
            rejected: classification.rejected,
            run_config: config.resolved(),
            corpus_doc_ids,
            timings: clock.timings,
        },
        model: model.dump(),
    })
}
