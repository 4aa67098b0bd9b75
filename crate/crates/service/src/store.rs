//! Directory layout:
//!
//! ```text
//! <data_dir>/corpora/<corpus_id>/comments.jsonl
//! <data_dir>/sessions/<session_id>/events.jsonl
//! <data_dir>/sessions/<session_id>/snapshots.jsonl
//! ```

use crate::error::{ApiError, ApiResult};
use curate_core::corpus::{Corpus, COMMENTS_FILE};
use curate_core::evaluation::MetricsSnapshot;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";

/// Ids become directory names, so they are restricted to a safe alphabet.
pub fn validate_id(kind: &str, id: &str) -> ApiResult<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ApiError::invalid(format!(
            "{kind} id must be 1-64 characters of letters, digits, `-` or `_`"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("corpora"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(id)
    }

    pub fn events_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join(EVENTS_FILE)
    }

    pub fn snapshots_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join(SNAPSHOTS_FILE)
    }

    pub fn save_corpus(&self, id: &str, corpus: &Corpus) -> ApiResult<()> {
        let dir = self.root.join("corpora").join(id);
        fs::create_dir_all(&dir).map_err(|e| ApiError::internal(e.to_string()))?;
        corpus
            .write_jsonl(&dir.join(COMMENTS_FILE))
            .map_err(|e| ApiError::internal(e.to_string()))
    }

    /// Corpora saved in this store.
    pub fn load_corpora(&self) -> io::Result<Vec<(String, Corpus)>> {
        load_corpus_dir(&self.root.join("corpora"))
    }

    pub fn session_ids(&self) -> io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.sessions_dir())? {
            let entry = entry?;
            if entry.path().join(EVENTS_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn write_snapshots(&self, id: &str, snapshots: &[MetricsSnapshot]) -> io::Result<()> {
        let mut out = Vec::new();
        for s in snapshots {
            serde_json::to_writer(&mut out, s)?;
            out.push(b'\n');
        }
        fs::write(self.snapshots_path(id), out)
    }

    pub fn append_snapshots(&self, id: &str, snapshots: &[MetricsSnapshot]) -> io::Result<()> {
        if snapshots.is_empty() {
            return Ok(());
        }
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.snapshots_path(id))?;
        for s in snapshots {
            serde_json::to_writer(&mut f, s)?;
            f.write_all(b"\n")?;
        }
        f.sync_data()
    }
}

pub fn read_snapshots(path: &Path) -> io::Result<Vec<MetricsSnapshot>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

/// Every sub-directory of `dir` holding a `comments.jsonl` is a corpus
/// named after the directory.
pub fn load_corpus_dir(dir: &Path) -> io::Result<Vec<(String, Corpus)>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let file = path.join(COMMENTS_FILE);
        if !file.is_file() {
            continue;
        }
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let corpus = Corpus::read_jsonl(&file).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        out.push((id, corpus));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
