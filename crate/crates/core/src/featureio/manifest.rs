use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_container, read_labels, AnnotatedVideo, HistorySegment, UserRecord};
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_file};

/// JSON manifest for one split. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub d: usize,
    pub split: String,
    pub users: Vec<ManifestUser>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestUser {
    pub id: String,
    pub history: Vec<PathBuf>,
    pub videos: Vec<ManifestVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub features: PathBuf,
    pub labels: PathBuf,
}

impl CorpusManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }
}

/// Resolves `path` to a manifest file: either the file itself, `path/manifest.json`,
/// or `path/<split>/manifest.json`.
pub fn resolve_manifest(path: &Path, split: &str) -> PathBuf {
    if path.is_file() {
        return path.to_path_buf();
    }
    let direct = path.join("manifest.json");
    if direct.is_file() {
        return direct;
    }
    path.join(split).join("manifest.json")
}

/// Loads and validates every user of a split.
pub fn load_split(manifest_path: &Path) -> Result<(CorpusManifest, Vec<UserRecord>)> {
    let manifest = CorpusManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let bad = |reason: String| Error::Manifest {
        path: manifest_path.to_path_buf(),
        reason,
    };

    let mut seen = HashSet::new();
    let mut users = Vec::with_capacity(manifest.users.len());
    for entry in &manifest.users {
        if !seen.insert(entry.id.as_str()) {
            return Err(bad(format!("duplicate user id {:?}", entry.id)));
        }
        let check_d = |d: usize, what: &Path| -> Result<()> {
            if d != manifest.d {
                return Err(bad(format!(
                    "{} has d={d}, manifest declares d={}",
                    what.display(),
                    manifest.d
                )));
            }
            Ok(())
        };
        let mut history = Vec::with_capacity(entry.history.len());
        for rel in &entry.history {
            let m = read_container(&base.join(rel))?;
            check_d(m.d(), rel)?;
            history.push(HistorySegment(m));
        }
        let mut videos = Vec::with_capacity(entry.videos.len());
        for (vi, v) in entry.videos.iter().enumerate() {
            let features = read_container(&base.join(&v.features))?;
            check_d(features.d(), &v.features)?;
            let labels = read_labels(&base.join(&v.labels))?;
            if labels.len() != features.frames() {
                return Err(bad(format!(
                    "{}: {} labels for {} frames",
                    v.labels.display(),
                    labels.len(),
                    features.frames()
                )));
            }
            videos.push(AnnotatedVideo::new(format!("{}/{vi}", entry.id), features, labels)?);
        }
        users.push(UserRecord {
            user_id: entry.id.clone(),
            history,
            videos,
        });
    }
    Ok((manifest, users))
}
