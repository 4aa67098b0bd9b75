//! Comment corpus: ingestion, toxicity marking, class balancing and
//! per-session train/test splits.
//!
//! Every sampling step is a pure function of the configured seed, the
//! session id (for splits) and the lexicographically sorted input ids.

use crate::types::Decision;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const COMMENTS_FILE: &str = "comments.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("{} comment(s) have no toxicity score: {}", .0.len(), .0.join(", "))]
    MissingScores(Vec<String>),
    #[error("not enough {class} comments to balance: need {needed}, have {available}")]
    Shortfall {
        class: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("corpus of {size} comments is too small for a test split of {test_size}")]
    TooSmall { size: usize, test_size: usize },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub video_id: String,
    #[serde(default)]
    pub is_reply: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toxicity_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub min_chars: usize,
    pub max_chars: usize,
    pub toxic_threshold: f64,
    pub target_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            min_chars: 15,
            max_chars: 600,
            toxic_threshold: 0.7,
            target_size: 800,
            test_size: 100,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_chars == 0 || self.min_chars >= self.max_chars {
            return Err(CorpusError::InvalidConfig(format!(
                "need 0 < min_chars < max_chars, got {} and {}",
                self.min_chars, self.max_chars
            )));
        }
        if self.test_size == 0 || self.test_size >= self.target_size {
            return Err(CorpusError::InvalidConfig(format!(
                "need 0 < test_size < target_size, got {} and {}",
                self.test_size, self.target_size
            )));
        }
        if !(self.toxic_threshold > 0.0 && self.toxic_threshold < 1.0) {
            return Err(CorpusError::InvalidConfig(format!(
                "toxic_threshold must lie in (0, 1), got {}",
                self.toxic_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    Reply,
    TooShort,
    TooLong,
    DuplicateId,
    InvalidScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based position in the input stream.
    pub record: usize,
    pub id: Option<String>,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    pub rejections: Vec<Rejection>,
}

impl IngestReport {
    fn reject(&mut self, record: usize, id: Option<String>, reason: RejectReason, detail: String) {
        *self.rejected.entry(reason).or_default() += 1;
        self.rejections.push(Rejection {
            record,
            id,
            reason,
            detail,
        });
    }
}

/// An immutable, id-unique collection of comments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    comments: Vec<Comment>,
}

impl Corpus {
    /// Builds a corpus from already-vetted comments. Later duplicates of an id
    /// are dropped.
    pub fn from_comments(comments: impl IntoIterator<Item = Comment>) -> Self {
        let mut seen = HashSet::new();
        let comments = comments
            .into_iter()
            .filter(|c| seen.insert(c.id.clone()))
            .collect();
        Corpus { comments }
    }

    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Comment> {
        self.comments.iter().find(|c| c.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &Comment> {
        self.comments.iter().map(|c| (c.id.as_str(), c)).collect()
    }

    pub fn sorted_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.comments.iter().map(|c| c.id.clone()).collect();
        ids.sort();
        ids
    }

    fn subset(&self, keep: &BTreeSet<String>) -> Corpus {
        let mut comments: Vec<Comment> = self
            .comments
            .iter()
            .filter(|c| keep.contains(&c.id))
            .cloned()
            .collect();
        comments.sort_by(|a, b| a.id.cmp(&b.id));
        Corpus { comments }
    }

    pub fn read_jsonl(path: &Path) -> Result<Corpus> {
        let file = fs::File::open(path)?;
        let mut comments = Vec::new();
        for line in io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            comments.push(serde_json::from_str(&line)?);
        }
        Ok(Corpus::from_comments(comments))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for c in &self.comments {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `comments.jsonl` from a corpus directory, or the file itself.
    pub fn load(path: &Path) -> Result<Corpus> {
        if path.is_dir() {
            Corpus::read_jsonl(&path.join(COMMENTS_FILE))
        } else {
            Corpus::read_jsonl(path)
        }
    }
}

/// Accepts comment records one at a time. Each input line is either a JSON
/// object or a parse failure; neither ever aborts the stream.
pub fn ingest<I>(records: I, cfg: &CorpusConfig) -> (Corpus, IngestReport)
where
    I: IntoIterator<Item = std::result::Result<serde_json::Value, String>>,
{
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    let mut comments = Vec::new();

    for (i, record) in records.into_iter().enumerate() {
        let pos = i + 1;
        report.records += 1;
        let value = match record {
            Ok(v) => v,
            Err(e) => {
                report.reject(pos, None, RejectReason::Malformed, e);
                continue;
            }
        };
        let id_hint = value.get("id").and_then(|v| v.as_str()).map(str::to_owned);
        let comment: Comment = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(e) => {
                report.reject(pos, id_hint, RejectReason::Malformed, e.to_string());
                continue;
            }
        };
        if comment.id.is_empty() {
            report.reject(pos, None, RejectReason::Malformed, "empty id".into());
            continue;
        }
        if !seen.insert(comment.id.clone()) {
            report.reject(pos, Some(comment.id), RejectReason::DuplicateId, String::new());
            continue;
        }
        if let Some(score) = comment.toxicity_score {
            if !(0.0..=1.0).contains(&score) {
                report.reject(
                    pos,
                    Some(comment.id),
                    RejectReason::InvalidScore,
                    format!("{score} outside [0, 1]"),
                );
                continue;
            }
        }
        if comment.is_reply {
            report.reject(pos, Some(comment.id), RejectReason::Reply, String::new());
            continue;
        }
        let len = comment.text.chars().count();
        if len < cfg.min_chars {
            report.reject(pos, Some(comment.id), RejectReason::TooShort, format!("{len} chars"));
            continue;
        }
        if len > cfg.max_chars {
            report.reject(pos, Some(comment.id), RejectReason::TooLong, format!("{len} chars"));
            continue;
        }
        report.accepted += 1;
        comments.push(comment);
    }

    (Corpus { comments }, report)
}

/// Splits a JSON-Lines stream into per-line parse results for [`ingest`].
pub fn jsonl_records<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = std::result::Result<serde_json::Value, String>> {
    reader
        .lines()
        .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
        .map(|line| match line {
            Ok(l) => serde_json::from_str(&l).map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        })
}

/// `toxic(c)` iff its score strictly exceeds `threshold`.
pub fn mark_toxic(corpus: &Corpus, threshold: f64) -> Result<BTreeMap<String, bool>> {
    let missing: Vec<String> = corpus
        .comments
        .iter()
        .filter(|c| c.toxicity_score.is_none())
        .map(|c| c.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingScores(missing));
    }
    Ok(corpus
        .comments
        .iter()
        .map(|c| (c.id.clone(), c.toxicity_score.unwrap_or(0.0) > threshold))
        .collect())
}

fn seeded_sample(mut ids: Vec<String>, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    ids.sort();
    ids.shuffle(rng);
    ids.truncate(n);
    ids
}

/// Draws exactly `target_size` comments: `floor(target/2)` toxic and
/// `ceil(target/2)` non-toxic.
pub fn balance(corpus: &Corpus, cfg: &CorpusConfig) -> Result<Corpus> {
    let toxic = mark_toxic(corpus, cfg.toxic_threshold)?;
    let (pos, neg): (Vec<_>, Vec<_>) = toxic.into_iter().partition(|(_, t)| *t);
    let toxic_quota = cfg.target_size / 2;
    let clean_quota = cfg.target_size - toxic_quota;
    if pos.len() < toxic_quota {
        return Err(CorpusError::Shortfall {
            class: "toxic",
            needed: toxic_quota,
            available: pos.len(),
        });
    }
    if neg.len() < clean_quota {
        return Err(CorpusError::Shortfall {
            class: "non-toxic",
            needed: clean_quota,
            available: neg.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut keep: BTreeSet<String> = BTreeSet::new();
    keep.extend(seeded_sample(pos.into_iter().map(|(id, _)| id).collect(), toxic_quota, &mut rng));
    keep.extend(seeded_sample(neg.into_iter().map(|(id, _)| id).collect(), clean_quota, &mut rng));
    Ok(corpus.subset(&keep))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSplit {
    pub session_id: String,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Mixes the corpus seed with a session id into one RNG seed.
pub fn session_seed(seed: u64, session_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(session_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn make_split(corpus: &Corpus, cfg: &CorpusConfig, session_id: &str) -> Result<SessionSplit> {
    if corpus.len() < cfg.test_size + 1 {
        return Err(CorpusError::TooSmall {
            size: corpus.len(),
            test_size: cfg.test_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(cfg.seed, session_id));
    let mut ids = corpus.sorted_ids();
    ids.shuffle(&mut rng);
    let train_ids = ids.split_off(cfg.test_size);
    Ok(SessionSplit {
        session_id: session_id.to_owned(),
        train_ids,
        test_ids: ids,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: String,
    pub labels: BTreeMap<String, Decision>,
}

impl GroundTruth {
    pub fn validate(&self, split: &SessionSplit) -> std::result::Result<(), Vec<String>> {
        let test: HashSet<&str> = split.test_ids.iter().map(String::as_str).collect();
        let stray: Vec<String> = self
            .labels
            .keys()
            .filter(|k| !test.contains(k.as_str()))
            .cloned()
            .collect();
        if stray.is_empty() {
            Ok(())
        } else {
            Err(stray)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub records: usize,
    pub accepted: usize,
    pub toxic: usize,
    pub non_toxic: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub counts: ManifestCounts,
    pub seed: u64,
    pub config: CorpusConfig,
    pub rejected: BTreeMap<RejectReason, usize>,
}

/// Result of the full ingest → mark → balance pipeline.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub corpus: Corpus,
    pub report: IngestReport,
    pub manifest: Manifest,
}

pub fn run_pipeline<I>(records: I, cfg: &CorpusConfig) -> Result<PipelineOutput>
where
    I: IntoIterator<Item = std::result::Result<serde_json::Value, String>>,
{
    cfg.validate()?;
    let (ingested, report) = ingest(records, cfg);
    let balanced = balance(&ingested, cfg)?;
    let toxic = mark_toxic(&balanced, cfg.toxic_threshold)?;
    let n_toxic = toxic.values().filter(|t| **t).count();
    let manifest = Manifest {
        counts: ManifestCounts {
            records: report.records,
            accepted: report.accepted,
            toxic: n_toxic,
            non_toxic: balanced.len() - n_toxic,
            output: balanced.len(),
        },
        seed: cfg.seed,
        config: cfg.clone(),
        rejected: report.rejected.clone(),
    };
    Ok(PipelineOutput {
        corpus: balanced,
        report,
        manifest,
    })
}

pub fn write_corpus_dir(dir: &Path, out: &PipelineOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    out.corpus.write_jsonl(&dir.join(COMMENTS_FILE))?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&out.manifest)?,
    )?;
    fs::write(
        dir.join("ingest_report.json"),
        serde_json::to_string_pretty(&out.report)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(id: &str, text: &str, reply: bool, score: Option<f64>) -> std::result::Result<serde_json::Value, String> {
        let mut v = json!({"id": id, "text": text, "video_id": "v1", "is_reply": reply});
        if let Some(s) = score {
            v["toxicity_score"] = json!(s);
        }
        Ok(v)
    }

    fn scored(n_toxic: usize, n_clean: usize) -> Corpus {
        let mut comments = Vec::new();
        for i in 0..n_toxic {
            comments.push(Comment {
                id: format!("t{i:04}"),
                text: format!("toxic comment number {i}"),
                video_id: "v".into(),
                is_reply: false,
                toxicity_score: Some(0.9),
            });
        }
        for i in 0..n_clean {
            comments.push(Comment {
                id: format!("c{i:04}"),
                text: format!("clean comment number {i}"),
                video_id: "v".into(),
                is_reply: false,
                toxicity_score: Some(0.1),
            });
        }
        Corpus::from_comments(comments)
    }

    #[test]
    fn replies_are_excluded() {
        let cfg = CorpusConfig::default();
        let (corpus, report) = ingest(
            vec![
                rec("a", "a perfectly fine comment", false, None),
                rec("b", "another fine comment here", false, None),
                rec("c", "yet another fine comment", false, None),
                rec("d", "this one is a reply to someone", true, None),
            ],
            &cfg,
        );
        assert_eq!(corpus.len(), 3);
        assert_eq!(report.rejected, BTreeMap::from([(RejectReason::Reply, 1)]));
    }

    #[test]
    fn length_bounds() {
        let cfg = CorpusConfig {
            min_chars: 5,
            max_chars: 10,
            ..CorpusConfig::default()
        };
        let (corpus, report) = ingest(
            vec![
                rec("short", "abcd", false, None),
                rec("min", "abcde", false, None),
                rec("max", "abcdefghij", false, None),
                rec("long", "abcdefghijk", false, None),
            ],
            &cfg,
        );
        assert_eq!(corpus.sorted_ids(), vec!["max", "min"]);
        assert_eq!(report.rejected[&RejectReason::TooShort], 1);
        assert_eq!(report.rejected[&RejectReason::TooLong], 1);
    }

    #[test]
    fn malformed_and_duplicates_do_not_abort() {
        let cfg = CorpusConfig::default();
        let input = "{\"id\":\"a\",\"text\":\"a perfectly fine comment\",\"is_reply\":false}\n\
                     not json at all\n\
                     {\"id\":\"b\"}\n\
                     {\"id\":\"a\",\"text\":\"same id again, rejected\",\"is_reply\":false}\n\
                     {\"id\":\"c\",\"text\":\"the stream keeps going\",\"is_reply\":false}\n";
        let (corpus, report) = ingest(jsonl_records(input.as_bytes()), &cfg);
        assert_eq!(corpus.sorted_ids(), vec!["a", "c"]);
        assert_eq!(report.rejected[&RejectReason::Malformed], 2);
        assert_eq!(report.rejected[&RejectReason::DuplicateId], 1);
        assert_eq!(report.records, 5);
    }

    #[test]
    fn text_is_untouched() {
        let text = "  Ünïcödé <b>text</b>\twith   spacing  ";
        let (corpus, _) = ingest(vec![rec("x", text, false, None)], &CorpusConfig::default());
        assert_eq!(corpus.comments()[0].text, text);
    }

    #[test]
    fn toxicity_is_strict() {
        let corpus = Corpus::from_comments(vec![
            Comment { id: "hi".into(), text: "x".into(), video_id: String::new(), is_reply: false, toxicity_score: Some(0.71) },
            Comment { id: "eq".into(), text: "x".into(), video_id: String::new(), is_reply: false, toxicity_score: Some(0.70) },
            Comment { id: "zero".into(), text: "x".into(), video_id: String::new(), is_reply: false, toxicity_score: Some(0.0) },
        ]);
        let toxic = mark_toxic(&corpus, 0.7).unwrap();
        assert!(toxic["hi"]);
        assert!(!toxic["eq"]);
        assert!(!toxic["zero"]);
    }

    #[test]
    fn missing_scores_are_listed() {
        let corpus = Corpus::from_comments(vec![Comment {
            id: "nos".into(),
            text: "x".into(),
            video_id: String::new(),
            is_reply: false,
            toxicity_score: None,
        }]);
        match mark_toxic(&corpus, 0.7) {
            Err(CorpusError::MissingScores(ids)) => assert_eq!(ids, vec!["nos"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn balance_hits_quota() {
        let cfg = CorpusConfig::default();
        let out = balance(&scored(600, 600), &cfg).unwrap();
        let toxic = mark_toxic(&out, 0.7).unwrap();
        assert_eq!(out.len(), 800);
        assert_eq!(toxic.values().filter(|t| **t).count(), 400);
    }

    #[test]
    fn balance_small_and_odd() {
        let cfg = CorpusConfig { target_size: 4, test_size: 1, ..CorpusConfig::default() };
        assert_eq!(balance(&scored(2, 2), &cfg).unwrap().len(), 4);

        let cfg = CorpusConfig { target_size: 5, test_size: 1, ..CorpusConfig::default() };
        let out = balance(&scored(5, 5), &cfg).unwrap();
        let toxic = mark_toxic(&out, 0.7).unwrap();
        assert_eq!(toxic.values().filter(|t| **t).count(), 2);
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn balance_reports_shortfall() {
        let cfg = CorpusConfig { target_size: 10, test_size: 1, ..CorpusConfig::default() };
        match balance(&scored(3, 10), &cfg) {
            Err(CorpusError::Shortfall { class, needed, available }) => {
                assert_eq!((class, needed, available), ("toxic", 5, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn balance_is_deterministic() {
        let cfg = CorpusConfig { seed: 42, ..CorpusConfig::default() };
        let corpus = scored(700, 650);
        assert_eq!(
            balance(&corpus, &cfg).unwrap().sorted_ids(),
            balance(&corpus, &cfg).unwrap().sorted_ids()
        );
        let other = CorpusConfig { seed: 43, ..cfg };
        assert_ne!(
            balance(&corpus, &cfg).unwrap().sorted_ids(),
            balance(&corpus, &other).unwrap().sorted_ids()
        );
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let cfg = CorpusConfig::default();
        let corpus = balance(&scored(600, 600), &cfg).unwrap();
        let split = make_split(&corpus, &cfg, "p01").unwrap();
        assert_eq!(split.train_ids.len(), 700);
        assert_eq!(split.test_ids.len(), 100);
        let train: HashSet<_> = split.train_ids.iter().collect();
        assert!(split.test_ids.iter().all(|id| !train.contains(id)));
    }

    #[test]
    fn sessions_get_distinct_test_sets() {
        let cfg = CorpusConfig::default();
        let corpus = balance(&scored(600, 600), &cfg).unwrap();
        let sets: Vec<BTreeSet<String>> = (0..10)
            .map(|i| {
                make_split(&corpus, &cfg, &format!("session-{i}"))
                    .unwrap()
                    .test_ids
                    .into_iter()
                    .collect()
            })
            .collect();
        let distinct: BTreeSet<_> = sets.iter().collect();
        assert!(distinct.len() >= 9);
    }

    #[test]
    fn split_too_small() {
        let cfg = CorpusConfig { target_size: 800, test_size: 100, ..CorpusConfig::default() };
        assert!(matches!(
            make_split(&scored(50, 50), &cfg, "s"),
            Err(CorpusError::TooSmall { size: 100, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(CorpusConfig::default().validate().is_ok());
        assert!(CorpusConfig { min_chars: 0, ..CorpusConfig::default() }.validate().is_err());
        assert!(CorpusConfig { test_size: 800, ..CorpusConfig::default() }.validate().is_err());
        assert!(CorpusConfig { toxic_threshold: 1.0, ..CorpusConfig::default() }.validate().is_err());
    }
}
