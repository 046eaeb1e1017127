use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use chrono::{SubsecRound, Utc};
use parking_lot::Mutex;

use super::{
    elicit, ElicitationResult, PipelineError, Project, ProjectState, ProjectStore, RunConfig,
    RunInputs,
};
use crate::classify::{BoostRule, LabeledDocument};
use crate::corpus::{corpus_stats, Connector, ContextSpec, Corpus, SourceKind};
use crate::preprocess::{Preprocessor, TokenizedDocument};
use crate::registry::{
    Catalog, DataSourceDescriptor, RegionSpec, ServiceDescriptor, ServiceId, SourceCounts,
};

/// Labeled training documents and boost rules.
#[derive(Debug, Clone, Default)]
pub struct TrainingArtifacts {
    pub labeled: Vec<LabeledDocument>,
    pub boost_rules: Vec<BoostRule>,
}

/// Runs project operations against a store. Operations on one project are
/// serialized; different projects proceed independently.
pub struct Engine {
    catalog: Catalog,
    connectors: BTreeMap<SourceKind, Arc<dyn Connector>>,
    training: TrainingArtifacts,
    labeled_tokens: Vec<TokenizedDocument>,
    preprocessor: Preprocessor,
    store: Arc<dyn ProjectStore>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    active_runs: Mutex<HashSet<String>>,
}

fn now() -> chrono::DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

impl Engine {
    pub fn new(
        catalog: Catalog,
        connectors: Vec<Arc<dyn Connector>>,
        training: TrainingArtifacts,
        preprocessor: Preprocessor,
        store: Arc<dyn ProjectStore>,
    ) -> Self {
        let labeled_tokens = preprocessor.documents(training.labeled.iter().map(|l| &l.document));
        Engine {
            catalog,
            connectors: connectors.into_iter().map(|c| (c.kind(), c)).collect(),
            training,
            labeled_tokens,
            preprocessor,
            store,
            locks: Mutex::new(HashMap::new()),
            active_runs: Mutex::new(HashSet::new()),
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn store(&self) -> &Arc<dyn ProjectStore> {
        &self.store
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.to_string()).or_default().clone()
    }

    /// Loads, applies `f` and saves under the project's lock.
    fn update<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Project) -> Result<T, PipelineError>,
    ) -> Result<(Project, T), PipelineError> {
        let lock = self.lock(id);
        let _guard = lock.lock();
        let mut project = self.store.load(id)?;
        let out = f(&mut project)?;
        self.store.save(&project)?;
        Ok((project, out))
    }

    /// Documents per source kind across all connectors.
    pub fn source_counts(&self) -> Result<SourceCounts, PipelineError> {
        let mut parts = Vec::new();
        for connector in self.connectors.values() {
            parts.push(
                connector
                    .fetch()
                    .map_err(|e| PipelineError::stage("load", e))?,
            );
        }
        let merged = Corpus::merge(parts).map_err(|e| PipelineError::stage("merge", e))?;
        Ok(corpus_stats(&merged).per_source)
    }

    pub fn eligible_services(
        &self,
        region: &RegionSpec,
    ) -> Result<Vec<ServiceDescriptor>, PipelineError> {
        let counts = self.source_counts()?;
        Ok(self
            .catalog
            .eligible_services(region, &counts)
            .into_iter()
            .cloned()
            .collect())
    }

    pub fn create_project(&self, region: RegionSpec) -> Result<Project, PipelineError> {
        let project = Project::new(uuid::Uuid::new_v4().to_string(), region, now())?;
        self.store.save(&project)?;
        Ok(project)
    }

    pub fn project(&self, id: &str) -> Result<Project, PipelineError> {
        Ok(self.store.load(id)?)
    }

    pub fn select_service(&self, id: &str, service: ServiceId) -> Result<Project, PipelineError> {
        let counts = self.source_counts()?;
        self.update(id, |p| {
            p.select_service(&self.catalog, &counts, service, now())
        })
        .map(|(p, _)| p)
    }

    /// Sources offered to the project's service in its region.
    pub fn available_sources(&self, id: &str) -> Result<Vec<DataSourceDescriptor>, PipelineError> {
        let project = self.store.load(id)?;
        let service = project.service_id.ok_or(PipelineError::State {
            operation: "list sources for",
            state: project.state,
        })?;
        let counts = self.source_counts()?;
        Ok(self
            .catalog
            .available_sources(&project.region, service, &counts)?
            .into_iter()
            .cloned()
            .collect())
    }

    pub fn set_sources_and_context(
        &self,
        id: &str,
        sources: &[SourceKind],
        contexts: &BTreeMap<SourceKind, ContextSpec>,
    ) -> Result<Project, PipelineError> {
        let counts = self.source_counts()?;
        self.update(id, |p| {
            p.set_sources_and_context(&self.catalog, &counts, sources, contexts, now())
        })
        .map(|(p, _)| p)
    }

    /// Moves the project to `Running` and claims it. A reset also recovers a
    /// project left `Running` by a process that no longer runs it.
    pub fn begin_run(&self, id: &str, reset: bool) -> Result<Project, PipelineError> {
        let claimed = std::cell::Cell::new(false);
        let outcome = self.update(id, |p| {
            if self.active_runs.lock().contains(id) {
                return Err(PipelineError::Busy(id.to_string()));
            }
            if reset && p.state == ProjectState::Running {
                p.reset(now())?;
            }
            p.begin_run(reset, now())?;
            self.active_runs.lock().insert(id.to_string());
            claimed.set(true);
            Ok(())
        });
        if outcome.is_err() && claimed.get() {
            self.active_runs.lock().remove(id);
        }
        outcome.map(|(p, _)| p)
    }

    /// Runs a project claimed by [`Engine::begin_run`] and records the
    /// outcome. Stage failures end in `Failed` and are not errors here.
    pub fn execute_run(&self, id: &str, config: &RunConfig) -> Result<Project, PipelineError> {
        if !self.active_runs.lock().contains(id) {
            let state = self.store.load(id)?.state;
            return Err(PipelineError::State {
                operation: "execute an unclaimed run of",
                state,
            });
        }
        let outcome = self
            .store
            .load(id)
            .map_err(PipelineError::from)
            .and_then(|project| {
                if project.state != ProjectState::Running {
                    return Err(PipelineError::State {
                        operation: "execute",
                        state: project.state,
                    });
                }
                let inputs = RunInputs {
                    connectors: &self.connectors,
                    preprocessor: &self.preprocessor,
                    labeled: &self.training.labeled,
                    labeled_tokens: &self.labeled_tokens,
                    boost_rules: &self.training.boost_rules,
                };
                Ok(elicit(&project, &inputs, config))
            });
        let finished = outcome.and_then(|run| {
            self.update(id, |p| match run {
                Ok(output) => {
                    self.store.save_model(id, &output.model)?;
                    p.complete(output.result, now())
                }
                Err(e) => p.fail(e.to_string(), now()),
            })
        });
        self.active_runs.lock().remove(id);
        finished.map(|(p, _)| p)
    }

    pub fn run_elicitation(
        &self,
        id: &str,
        config: &RunConfig,
        reset: bool,
    ) -> Result<Project, PipelineError> {
        self.begin_run(id, reset)?;
        self.execute_run(id, config)
    }

    pub fn result(&self, id: &str) -> Result<ElicitationResult, PipelineError> {
        let project = self.store.load(id)?;
        project.result.ok_or(PipelineError::State {
            operation: "read the result of",
            state: project.state,
        })
    }
}
