use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Engine, PipelineError, Project, ProjectStore, RunConfig, TrainingArtifacts};
use crate::classify::{load_labeled, load_rules, ClassifyError};
use crate::corpus::{Connector, ContextSpec, FileConnector, SourceKind};
use crate::preprocess::{Preprocessor, StopWords};
use crate::registry::{Catalog, RegionSpec, RegistryError, ServiceId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Inputs and settings shared by every project an engine serves. Relative
/// paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub connectors: BTreeMap<SourceKind, PathBuf>,
    pub training: PathBuf,
    #[serde(default)]
    pub boost_rules: Option<PathBuf>,
    /// Stop-word file; the shipped list when absent.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    /// Catalog file; `$RETTA_CATALOG` or the shipped catalog when absent.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub run_config: RunConfig,
}

/// A complete headless project: region, choices, and the data section.
///
/// ```json
/// {
///   "region": {"name": "Calgary", "bounding_box": {...}, "declared_available_sources": ["twitter"]},
///   "service": "TST",
///   "sources": ["twitter"],
///   "context": {"twitter": {"keywords": ["signal"], "max_documents": 500}},
///   "connectors": {"twitter": "tweets.jsonl"},
///   "training": "training.jsonl",
///   "boost_rules": "boost_rules.jsonl",
///   "run_config": {"seed": 42}
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub region: RegionSpec,
    pub service: ServiceId,
    pub sources: Vec<SourceKind>,
    #[serde(default)]
    pub context: BTreeMap<SourceKind, ContextSpec>,
    #[serde(flatten)]
    pub data: DataConfig,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

impl DataConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: DataConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse {
                path: base.display().to_string(),
                message: e.to_string(),
            })?;
        config.resolve(base);
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        DataConfig::parse(&read(path)?, base_dir(path))
    }

    fn resolve(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.connectors.values_mut().for_each(resolve);
        resolve(&mut self.training);
        for p in [
            &mut self.boost_rules,
            &mut self.stopwords,
            &mut self.catalog,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
    }

    pub fn engine(&self, store: Arc<dyn ProjectStore>) -> Result<Engine, ConfigError> {
        let catalog = match &self.catalog {
            Some(path) => Catalog::load(path)?,
            None => Catalog::from_env()?,
        };
        let stopwords = match &self.stopwords {
            Some(path) => StopWords::load(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?,
            None => StopWords::default(),
        };
        let connectors: Vec<Arc<dyn Connector>> = self
            .connectors
            .iter()
            .map(|(kind, path)| Arc::new(FileConnector::new(*kind, path)) as Arc<dyn Connector>)
            .collect();
        let training = TrainingArtifacts {
            labeled: load_labeled(&self.training)?,
            boost_rules: match &self.boost_rules {
                Some(path) => load_rules(path)?,
                None => Vec::new(),
            },
        };
        Ok(Engine::new(
            catalog,
            connectors,
            training,
            Preprocessor::new(stopwords),
            store,
        ))
    }
}

impl ProjectConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: ProjectConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse {
                path: base.display().to_string(),
                message: e.to_string(),
            })?;
        config.data.resolve(base);
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        ProjectConfig::parse(&read(path)?, base_dir(path))
    }

    /// Creates a project in `store` and takes it through every step with
    /// `run_config`, the seed replaced by `seed` when given.
    pub fn run(
        &self,
        store: Arc<dyn ProjectStore>,
        seed: Option<u64>,
    ) -> Result<Project, ConfigError> {
        let engine = self.data.engine(store)?;
        let mut run_config = self.data.run_config.clone();
        if let Some(seed) = seed {
            run_config.seed = seed;
        }
        let project = engine.create_project(self.region.clone())?;
        engine.select_service(&project.id, self.service)?;
        engine.set_sources_and_context(&project.id, &self.sources, &self.context)?;
        Ok(engine.run_elicitation(&project.id, &run_config, false)?)
    }
}
