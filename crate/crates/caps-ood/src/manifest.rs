//! JSON manifests describing ID/OOD splits.
//!
//! `{"entries":[{"name":str,"path":str,"role":"id_train"|"id_test"|"ood","notes":str?}]}`
//!
//! Relative paths are resolved against the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bytes::{read_file, write_file};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    IdTrain,
    IdTest,
    Ood,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::IdTrain => "id_train",
            Role::IdTest => "id_test",
            Role::Ood => "ood",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "id_train" => Ok(Role::IdTrain),
            "id_test" => Ok(Role::IdTest),
            "ood" => Ok(Role::Ood),
            other => Err(Error::UnknownRole(other.to_string())),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub role: Role,
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    name: String,
    path: String,
    role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawManifest {
    entries: Vec<RawEntry>,
}

impl DatasetManifest {
    pub fn parse(json: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let raw: RawManifest =
            serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
        let entries = raw
            .entries
            .into_iter()
            .map(|e| {
                Ok(ManifestEntry {
                    role: Role::parse(&e.role)?,
                    name: e.name,
                    path: PathBuf::from(e.path),
                    notes: e.notes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match entries.iter().filter(|e| e.role == Role::IdTrain).count() {
            0 => return Err(Error::MissingIdTrain),
            1 => {}
            n => return Err(Error::DuplicateIdTrain(n)),
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = RawManifest {
            entries: self
                .entries
                .iter()
                .map(|e| RawEntry {
                    name: e.name.clone(),
                    path: e.path.to_string_lossy().into_owned(),
                    role: e.role.as_str().to_string(),
                    notes: e.notes.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&raw)? + "\n")
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn id_train(&self) -> &ManifestEntry {
        self.entries
            .iter()
            .find(|e| e.role == Role::IdTrain)
            .expect("validated at parse time")
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|e| Error::Parse(e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, base)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), manifest.to_json()?.as_bytes())
}
