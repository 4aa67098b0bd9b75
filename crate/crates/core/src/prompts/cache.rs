use crate::types::Decision;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt_version: String,
    pub comment_id: String,
    pub verdict: Decision,
}

/// Per-(prompt version, comment) verdicts. Keys use the prompt's content
/// hash, so editing a prompt leaves every other prompt's entries valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerdictCache {
    entries: BTreeMap<(String, String), Decision>,
}

impl VerdictCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, prompt_version: &str, comment_id: &str) -> Option<Decision> {
        self.entries
            .get(&(prompt_version.to_owned(), comment_id.to_owned()))
            .copied()
    }

    pub fn insert(&mut self, prompt_version: &str, comment_id: &str, verdict: Decision) {
        self.entries
            .insert((prompt_version.to_owned(), comment_id.to_owned()), verdict);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = CacheEntry> + '_ {
        self.entries.iter().map(|((v, c), d)| CacheEntry {
            prompt_version: v.clone(),
            comment_id: c.clone(),
            verdict: *d,
        })
    }

    /// Loads a JSON-Lines cache file; a missing file is an empty cache.
    pub fn load(path: &Path) -> io::Result<Self> {
        let mut cache = VerdictCache::new();
        let file = match fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(e),
        };
        for line in io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: CacheEntry = serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            cache.insert(&e.prompt_version, &e.comment_id, e.verdict);
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for e in self.entries() {
            serde_json::to_writer(&mut out, &e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}
