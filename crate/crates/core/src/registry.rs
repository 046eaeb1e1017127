//! Service catalog and the eligibility rules deciding which services and
//! data sources are offered for a region.
//!
//! The catalog is data. The shipped default lives in `data/catalog.json`
//! and can be replaced with [`Catalog::load`]. `min_documents` is a proxy
//! for "enough data to elicit requirements" and is meant to be tuned per
//! deployment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SourceKind;

/// Environment variable naming an alternative catalog file.
pub const CATALOG_ENV: &str = "RETTA_CATALOG";

const DEFAULT_CATALOG: &str = include_str!("../data/catalog.json");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read catalog {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed catalog: {0}")]
    Malformed(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("service {0} is not eligible in this region")]
    NotEligible(ServiceId),
    #[error("source kind `{0}` is not in the catalog")]
    UnknownSource(SourceKind),
    #[error("service {0} is not in the catalog")]
    UnknownService(ServiceId),
}

/// Traffic-management services, in catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceId {
    /// Emergency medical services.
    #[serde(rename = "EMS")]
    Ems,
    /// Traffic signal timing.
    #[serde(rename = "TST")]
    Tst,
    /// Urban transportation planning.
    #[serde(rename = "UTP")]
    Utp,
}

impl ServiceId {
    pub const ALL: [ServiceId; 3] = [ServiceId::Ems, ServiceId::Tst, ServiceId::Utp];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceId::Ems => "EMS",
            ServiceId::Tst => "TST",
            ServiceId::Utp => "UTP",
        }
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown service `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub id: ServiceId,
    pub display_name: String,
    pub required_source_kinds: BTreeSet<SourceKind>,
    #[serde(default)]
    pub optional_source_kinds: BTreeSet<SourceKind>,
    pub min_documents: usize,
    #[serde(default)]
    pub boost_rule_set: Vec<String>,
}

impl ServiceDescriptor {
    pub fn relevant_kinds(&self) -> BTreeSet<SourceKind> {
        self.required_source_kinds
            .union(&self.optional_source_kinds)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    TextList,
    DateRange,
    GeoArea,
    PositiveInt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub name: String,
    pub value_kind: ValueKind,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSourceDescriptor {
    pub kind: SourceKind,
    pub display_name: String,
    #[serde(default)]
    pub context_fields: Vec<FieldDescriptor>,
}

impl DataSourceDescriptor {
    pub fn available_in(&self, region: &RegionSpec) -> bool {
        region.declared_available_sources.contains(&self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub bounding_box: BoundingBox,
    #[serde(default)]
    pub declared_available_sources: BTreeSet<SourceKind>,
}

impl RegionSpec {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let b = &self.bounding_box;
        let finite = [b.min_lat, b.min_lon, b.max_lat, b.max_lon]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(RegistryError::InvalidRegion(
                "bounding box has non-finite coordinates".into(),
            ));
        }
        if b.min_lat > b.max_lat {
            return Err(RegistryError::InvalidRegion(format!(
                "min lat {} exceeds max lat {}",
                b.min_lat, b.max_lat
            )));
        }
        if b.min_lon > b.max_lon {
            return Err(RegistryError::InvalidRegion(format!(
                "min lon {} exceeds max lon {}",
                b.min_lon, b.max_lon
            )));
        }
        if !(-90.0..=90.0).contains(&b.min_lat) || !(-90.0..=90.0).contains(&b.max_lat) {
            return Err(RegistryError::InvalidRegion(
                "latitude outside [-90, 90]".into(),
            ));
        }
        if !(-180.0..=180.0).contains(&b.min_lon) || !(-180.0..=180.0).contains(&b.max_lon) {
            return Err(RegistryError::InvalidRegion(
                "longitude outside [-180, 180]".into(),
            ));
        }
        Ok(())
    }
}

/// Document counts per source kind, typically from
/// [`corpus_stats`](crate::corpus::corpus_stats).
pub type SourceCounts = BTreeMap<SourceKind, usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    services: Vec<ServiceDescriptor>,
    sources: Vec<DataSourceDescriptor>,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::from_json(DEFAULT_CATALOG).expect("shipped catalog is valid")
    }
}

impl Catalog {
    pub fn new(
        mut services: Vec<ServiceDescriptor>,
        sources: Vec<DataSourceDescriptor>,
    ) -> Result<Self, RegistryError> {
        let mut ids = HashSet::new();
        for service in &services {
            if !ids.insert(service.id) {
                return Err(RegistryError::Malformed(format!(
                    "service {} listed twice",
                    service.id
                )));
            }
            if service.required_source_kinds.is_empty() {
                return Err(RegistryError::Malformed(format!(
                    "service {} requires no source kinds",
                    service.id
                )));
            }
            if service.min_documents == 0 {
                return Err(RegistryError::Malformed(format!(
                    "service {} has min_documents 0",
                    service.id
                )));
            }
        }
        let mut kinds = HashSet::new();
        for source in &sources {
            if !kinds.insert(source.kind) {
                return Err(RegistryError::Malformed(format!(
                    "source {} listed twice",
                    source.kind
                )));
            }
            let mut names = HashSet::new();
            for field in &source.context_fields {
                if field.name.is_empty() {
                    return Err(RegistryError::Malformed(format!(
                        "source {} has an unnamed context field",
                        source.kind
                    )));
                }
                if !names.insert(field.name.as_str()) {
                    return Err(RegistryError::Malformed(format!(
                        "source {} repeats context field `{}`",
                        source.kind, field.name
                    )));
                }
            }
        }
        services.sort_by_key(|s| s.id);
        Ok(Catalog { services, sources })
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        #[derive(Deserialize)]
        struct Raw {
            services: Vec<ServiceDescriptor>,
            sources: Vec<DataSourceDescriptor>,
        }
        let raw: Raw =
            serde_json::from_str(text).map_err(|e| RegistryError::Malformed(e.to_string()))?;
        Catalog::new(raw.services, raw.sources)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RegistryError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Catalog::from_json(&text)
    }

    /// Loads the catalog named by `RETTA_CATALOG`, or the shipped default.
    pub fn from_env() -> Result<Self, RegistryError> {
        match std::env::var_os(CATALOG_ENV) {
            Some(path) => Catalog::load(path),
            None => Ok(Catalog::default()),
        }
    }

    pub fn services(&self) -> &[ServiceDescriptor] {
        &self.services
    }

    pub fn sources(&self) -> &[DataSourceDescriptor] {
        &self.sources
    }

    pub fn service(&self, id: ServiceId) -> Result<&ServiceDescriptor, RegistryError> {
        self.services
            .iter()
            .find(|s| s.id == id)
            .ok_or(RegistryError::UnknownService(id))
    }

    pub fn source(&self, kind: SourceKind) -> Result<&DataSourceDescriptor, RegistryError> {
        self.sources
            .iter()
            .find(|s| s.kind == kind)
            .ok_or(RegistryError::UnknownSource(kind))
    }

    fn is_eligible(
        &self,
        service: &ServiceDescriptor,
        region: &RegionSpec,
        counts: &SourceCounts,
    ) -> bool {
        let declared = service
            .required_source_kinds
            .iter()
            .all(|k| region.declared_available_sources.contains(k));
        let documents: usize = service
            .required_source_kinds
            .iter()
            .map(|k| counts.get(k).copied().unwrap_or(0))
            .sum();
        declared && documents >= service.min_documents
    }

    /// Services offered for `region`: every required source kind is declared
    /// available there and the required kinds together hold at least
    /// `min_documents` documents. Catalog order.
    pub fn eligible_services(
        &self,
        region: &RegionSpec,
        counts: &SourceCounts,
    ) -> Vec<&ServiceDescriptor> {
        self.services
            .iter()
            .filter(|s| self.is_eligible(s, region, counts))
            .collect()
    }

    /// Sources relevant to `service` (required or optional) that are declared
    /// available in `region`, in catalog order.
    pub fn available_sources(
        &self,
        region: &RegionSpec,
        service: ServiceId,
        counts: &SourceCounts,
    ) -> Result<Vec<&DataSourceDescriptor>, RegistryError> {
        let descriptor = self.service(service)?;
        if !self.is_eligible(descriptor, region, counts) {
            return Err(RegistryError::NotEligible(service));
        }
        let relevant = descriptor.relevant_kinds();
        Ok(self
            .sources
            .iter()
            .filter(|s| relevant.contains(&s.kind) && s.available_in(region))
            .collect())
    }

    pub fn context_schema(&self, kind: SourceKind) -> Result<&[FieldDescriptor], RegistryError> {
        Ok(&self.source(kind)?.context_fields)
    }
}
