//! Ordered entity-type catalogs and the option texts that describe them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the option descriptions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    AnnotationGuidelines,
    InternetDefinition,
    NameOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(rename = "text")]
    pub option_text: String,
}

/// On-disk catalog document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogConfig {
    pub dataset: String,
    pub source_kind: SourceKind,
    pub options: Vec<CatalogEntry>,
}

/// Entity types in a fixed order; position `i` is option `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCatalog {
    dataset: String,
    source_kind: SourceKind,
    entries: Vec<CatalogEntry>,
}

impl EntityCatalog {
    pub fn new(dataset: impl Into<String>, source_kind: SourceKind, entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Catalog("catalog has no options".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.type_name.trim().is_empty() {
                return Err(Error::Catalog(format!("option {i} has an empty type name")));
            }
            if e.option_text.trim().is_empty() {
                return Err(Error::Catalog(format!(
                    "type {:?} has an empty description",
                    e.type_name
                )));
            }
            if entries[..i].iter().any(|p| p.type_name == e.type_name) {
                return Err(Error::Catalog(format!("duplicate type {:?}", e.type_name)));
            }
        }
        Ok(Self {
            dataset: dataset.into(),
            source_kind,
            entries,
        })
    }

    pub fn from_config(config: CatalogConfig) -> Result<Self> {
        Self::new(config.dataset, config.source_kind, config.options)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_config(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Catalog(format!("{}: {e}", path.display())))
    }

    pub fn to_config(&self) -> CatalogConfig {
        CatalogConfig {
            dataset: self.dataset.clone(),
            source_kind: self.source_kind,
            options: self.entries.clone(),
        }
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn source_kind(&self) -> SourceKind {
        self.source_kind
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.type_name.as_str())
    }

    pub fn type_name(&self, index: usize) -> &str {
        &self.entries[index].type_name
    }

    pub fn index_of(&self, type_name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.type_name == type_name)
    }

    /// Same types in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Catalog("not a permutation of the catalog".into()));
        }
        Ok(Self {
            dataset: self.dataset.clone(),
            source_kind: self.source_kind,
            entries: order.iter().map(|&i| self.entries[i].clone()).collect(),
        })
    }
}
