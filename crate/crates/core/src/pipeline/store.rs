//! Project persistence.
//!
//! A file store keeps one directory per project:
//!
//! ```text
//! <root>/<project id>/project.json   project record
//! <root>/<project id>/result.json    result of the last completed run
//! <root>/<project id>/model.json     topic model dump of the last run
//! ```
//!
//! Every file carries a `version` field; files with another version are
//! rejected.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use super::{ElicitationResult, Project, ProjectState};
use crate::topics::ModelDump;

pub const STORE_VERSION: u64 = 1;
/// Environment variable naming the file store root.
pub const STORE_ENV: &str = "RETTA_STORE";

const PROJECT_FILE: &str = "project.json";
const RESULT_FILE: &str = "result.json";
const MODEL_FILE: &str = "model.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("project `{0}` not found")]
    NotFound(String),
    #[error("corrupt record for project `{id}`: {message}")]
    Integrity { id: String, message: String },
    #[error("store i/o: {0}")]
    Io(String),
}

pub trait ProjectStore: Send + Sync {
    /// Persists the project record and, when present, its result.
    fn save(&self, project: &Project) -> Result<(), StoreError>;
    fn load(&self, id: &str) -> Result<Project, StoreError>;
    /// Project ids, sorted.
    fn list(&self) -> Result<Vec<String>, StoreError>;
    fn save_model(&self, id: &str, dump: &ModelDump) -> Result<(), StoreError>;
    fn load_model(&self, id: &str) -> Result<ModelDump, StoreError>;
}

fn versioned<T: Serialize>(value: &T) -> String {
    let mut json = serde_json::to_value(value).expect("records serialize");
    if let Value::Object(map) = &mut json {
        map.insert("version".into(), Value::from(STORE_VERSION));
    }
    let mut text = serde_json::to_string_pretty(&json).expect("records serialize");
    text.push('\n');
    text
}

fn unversioned<T: DeserializeOwned>(id: &str, text: &str) -> Result<T, StoreError> {
    let integrity = |message: String| StoreError::Integrity {
        id: id.to_string(),
        message,
    };
    let mut json: Value = serde_json::from_str(text).map_err(|e| integrity(e.to_string()))?;
    let map = json
        .as_object_mut()
        .ok_or_else(|| integrity("record is not an object".into()))?;
    match map.remove("version").and_then(|v| v.as_u64()) {
        Some(STORE_VERSION) => {}
        Some(other) => return Err(integrity(format!("unsupported version {other}"))),
        None => return Err(integrity("missing version".into())),
    }
    serde_json::from_value(json).map_err(|e| integrity(e.to_string()))
}

/// Serialized files of one project.
#[derive(Debug, Clone, Default)]
struct Files {
    project: Option<String>,
    result: Option<String>,
    model: Option<String>,
}

fn encode(project: &Project) -> Files {
    Files {
        project: Some(versioned(project)),
        result: project.result.as_ref().map(versioned),
        model: None,
    }
}

fn decode(id: &str, project: &str, result: Option<&str>) -> Result<Project, StoreError> {
    let mut project: Project = unversioned(id, project)?;
    if project.id != id {
        return Err(StoreError::Integrity {
            id: id.to_string(),
            message: format!("record holds project `{}`", project.id),
        });
    }
    if project.state == ProjectState::Complete {
        let text = result.ok_or_else(|| StoreError::Integrity {
            id: id.to_string(),
            message: "completed project has no result".into(),
        })?;
        project.result = Some(unversioned::<ElicitationResult>(id, text)?);
    }
    Ok(project)
}

fn decode_model(id: &str, text: &str) -> Result<ModelDump, StoreError> {
    ModelDump::from_json(text).map_err(|e| StoreError::Integrity {
        id: id.to_string(),
        message: e.to_string(),
    })
}

/// Ids become directory names, so only a conservative alphabet is accepted.
fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)
            .map_err(|e| StoreError::Io(format!("{}: {e}", root.display())))?;
        Ok(FileStore { root })
    }

    /// Opens the store named by `RETTA_STORE`, if set.
    pub fn from_env() -> Option<Result<Self, StoreError>> {
        std::env::var_os(STORE_ENV).map(FileStore::open)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    fn read(path: &Path) -> Result<Option<String>, StoreError> {
        match fs::read_to_string(path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError::Io(format!("{}: {e}", path.display()))),
        }
    }

    /// Writes through a temporary file and a rename so readers never see a
    /// partial record.
    fn write_atomic(path: &Path, contents: &str) -> Result<(), StoreError> {
        let io = |e: std::io::Error| StoreError::Io(format!("{}: {e}", path.display()));
        let tmp = path.with_extension("json.tmp");
        let mut file = fs::File::create(&tmp).map_err(io)?;
        file.write_all(contents.as_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }
}

impl ProjectStore for FileStore {
    fn save(&self, project: &Project) -> Result<(), StoreError> {
        let dir = self.dir(&project.id)?;
        fs::create_dir_all(&dir).map_err(|e| StoreError::Io(format!("{}: {e}", dir.display())))?;
        let files = encode(project);
        // The result goes first: a crash in between leaves an unreferenced
        // result, never a completed project without one.
        if let Some(result) = &files.result {
            Self::write_atomic(&dir.join(RESULT_FILE), result)?;
        }
        Self::write_atomic(
            &dir.join(PROJECT_FILE),
            files.project.as_deref().unwrap_or_default(),
        )
    }

    fn load(&self, id: &str) -> Result<Project, StoreError> {
        let dir = self.dir(id)?;
        let project = Self::read(&dir.join(PROJECT_FILE))?
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let result = Self::read(&dir.join(RESULT_FILE))?;
        decode(id, &project, result.as_deref())
    }

    fn list(&self) -> Result<Vec<String>, StoreError> {
        let entries = fs::read_dir(&self.root)
            .map_err(|e| StoreError::Io(format!("{}: {e}", self.root.display())))?;
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().join(PROJECT_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn save_model(&self, id: &str, dump: &ModelDump) -> Result<(), StoreError> {
        let dir = self.dir(id)?;
        fs::create_dir_all(&dir).map_err(|e| StoreError::Io(format!("{}: {e}", dir.display())))?;
        Self::write_atomic(&dir.join(MODEL_FILE), &dump.to_json())
    }

    fn load_model(&self, id: &str) -> Result<ModelDump, StoreError> {
        let text = Self::read(&self.dir(id)?.join(MODEL_FILE))?
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        decode_model(id, &text)
    }
}

/// In-memory store holding the same serialized records as [`FileStore`].
#[derive(Debug, Default)]
pub struct MemoryStore {
    projects: Mutex<HashMap<String, Files>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }
}

impl ProjectStore for MemoryStore {
    fn save(&self, project: &Project) -> Result<(), StoreError> {
        let mut files = encode(project);
        let mut map = self.projects.lock();
        let entry = map.entry(project.id.clone()).or_default();
        files.model = entry.model.take();
        if files.result.is_none() {
            files.result = entry.result.take();
        }
        *entry = files;
        Ok(())
    }

    fn load(&self, id: &str) -> Result<Project, StoreError> {
        let map = self.projects.lock();
        let files = map
            .get(id)
            .and_then(|f| f.project.as_ref().map(|p| (p, f.result.as_deref())))
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        decode(id, files.0, files.1)
    }

    fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = self
            .projects
            .lock()
            .iter()
            .filter(|(_, f)| f.project.is_some())
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn save_model(&self, id: &str, dump: &ModelDump) -> Result<(), StoreError> {
        self.projects
            .lock()
            .entry(id.to_string())
            .or_default()
            .model = Some(dump.to_json());
        Ok(())
    }

    fn load_model(&self, id: &str) -> Result<ModelDump, StoreError> {
        let map = self.projects.lock();
        let text = map
            .get(id)
            .and_then(|f| f.model.as_ref())
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        decode_model(id, text)
    }
}
