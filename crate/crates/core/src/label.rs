//! Example labeling: sentence embeddings, Gaussian Naive Bayes and
//! uncertainty-sampling active learning.

use crate::types::{Decision, Explanation, Prediction};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;
use thiserror::Error;

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_BATCH_SIZE: usize = 10;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabelError {
    #[error("training needs at least one Keep and one Remove example")]
    InsufficientClasses,
    #[error("embedding has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch size must be positive")]
    InvalidBatchSize,
    #[error("unlabeled pool is empty")]
    EmptyPool,
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("no embedding for comment `{0}`")]
    MissingEmbedding(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    /// Set when the text had no tokens; the vector is all zeros.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, LabelError>;

    fn embed(&self, text: &str) -> Result<Embedding, LabelError> {
        self.embed_batch(&[text])?
            .pop()
            .ok_or_else(|| LabelError::Provider("empty response".into()))
    }
}

/// Hashed bag-of-words: lowercase alphanumeric tokens counted into `dim`
/// buckets by FNV-1a hash, then L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedBow {
    dim: usize,
}

impl HashedBow {
    pub fn new(dim: usize) -> Self {
        HashedBow { dim: dim.max(1) }
    }

    fn bucket(&self, token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.dim as u64) as usize
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let mut any = false;
        for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            v[self.bucket(tok)] += 1.0;
            any = true;
        }
        if !any {
            return Embedding { vector: v, empty: true };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Embedding { vector: v, empty: false }
    }
}

impl Default for HashedBow {
    fn default() -> Self {
        HashedBow::new(DEFAULT_DIM)
    }
}

impl Embedder for HashedBow {
    fn id(&self) -> &str {
        "hashed-bow"
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, LabelError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Remote sentence-embedding service: POST `{texts}` → `{vectors}`.
pub struct HttpEmbedder {
    url: String,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpEmbedder { url: url.into(), agent }
    }
}

#[derive(Deserialize)]
struct VectorsResponse {
    vectors: Vec<Vec<f64>>,
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.url
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, LabelError> {
        let resp: VectorsResponse = self
            .agent
            .post(&self.url)
            .send_json(json!({ "texts": texts }))
            .map_err(|e| LabelError::Provider(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| LabelError::Provider(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(LabelError::Provider(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.iter().all(|x| x.is_finite()) {
                    let empty = v.iter().all(|x| *x == 0.0);
                    Ok(Embedding { vector: v, empty })
                } else {
                    Err(LabelError::Provider("non-finite vector entry".into()))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "kebab-case")]
pub enum EmbedderConfig {
    HashedBow {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

fn default_timeout() -> u64 {
    30
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::HashedBow { dim: DEFAULT_DIM }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderConfig::HashedBow { dim } => Box::new(HashedBow::new(*dim)),
            EmbedderConfig::Http { url, timeout_secs } => {
                Box::new(HttpEmbedder::new(url.clone(), Duration::from_secs(*timeout_secs)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub comment_id: String,
    pub label: Decision,
}

/// Per-class Gaussian parameters. Index 0 is Keep, 1 is Remove.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub epsilon: f64,
    pub dim: usize,
    pub trained_on: usize,
    #[serde(default)]
    pub provider: String,
}

fn class_index(d: Decision) -> usize {
    match d {
        Decision::Keep => 0,
        Decision::Remove => 1,
    }
}

fn population_stats(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(mean.iter()) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Fits class priors and per-dimension means and population variances.
/// Rows are sorted before accumulation so the result does not depend on
/// input order.
pub fn train(examples: &[(&[f64], Decision)]) -> Result<NbModel, LabelError> {
    let dim = examples.first().map(|(v, _)| v.len()).unwrap_or(0);
    if let Some((v, _)) = examples.iter().find(|(v, _)| v.len() != dim) {
        return Err(LabelError::DimensionMismatch { expected: dim, got: v.len() });
    }
    let mut by_class: [Vec<&[f64]>; 2] = [Vec::new(), Vec::new()];
    for (v, d) in examples {
        by_class[class_index(*d)].push(v);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(LabelError::InsufficientClasses);
    }
    let cmp = |a: &&[f64], b: &&[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    by_class.iter_mut().for_each(|rows| rows.sort_by(cmp));

    let mut all: Vec<&[f64]> = by_class.iter().flatten().copied().collect();
    all.sort_by(cmp);
    let (_, overall_var) = population_stats(&all, dim);
    let max_var = overall_var.iter().copied().fold(0.0, f64::max);
    let epsilon = (1e-9 * max_var).max(1e-12);

    let n = examples.len() as f64;
    let (m0, mut v0) = population_stats(&by_class[0], dim);
    let (m1, mut v1) = population_stats(&by_class[1], dim);
    v0.iter_mut().chain(v1.iter_mut()).for_each(|v| *v += epsilon);
    Ok(NbModel {
        priors: [by_class[0].len() as f64 / n, by_class[1].len() as f64 / n],
        means: [m0, m1],
        variances: [v0, v1],
        epsilon,
        dim,
        trained_on: examples.len(),
        provider: String::new(),
    })
}

impl NbModel {
    fn joint_log_likelihood(&self, x: &[f64], class: usize) -> f64 {
        let mut ll = self.priors[class].ln();
        for ((xi, m), v) in x.iter().zip(&self.means[class]).zip(&self.variances[class]) {
            ll -= 0.5 * (LN_2PI + v.ln()) + (xi - m) * (xi - m) / (2.0 * v);
        }
        ll
    }

    /// Posterior probability of Remove, normalized in the log domain.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, LabelError> {
        if x.len() != self.dim {
            return Err(LabelError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let keep = self.joint_log_likelihood(x, 0);
        let remove = self.joint_log_likelihood(x, 1);
        let max = keep.max(remove);
        let log_norm = max + ((keep - max).exp() + (remove - max).exp()).ln();
        Ok((remove - log_norm).exp())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, LabelError> {
        let p = self.predict_proba(x)?;
        Ok(Prediction {
            decision: Decision::from_remove(p > 0.5),
            explanation: Explanation::Label { p_remove: p },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveBatch {
    pub comment_ids: Vec<String>,
    pub batch_size: usize,
}

/// Sort key for uncertainty: |p − 0.5| snapped to a 1e-12 grid so values
/// that differ only by rounding (0.4 vs 0.6) compare equal.
fn uncertainty_key(p: f64) -> i64 {
    ((p - 0.5).abs() * 1e12).round() as i64
}

/// The `k` pool items whose removal probability is closest to 0.5, ties
/// broken by ascending id.
pub fn uncertainty_sample(
    model: &NbModel,
    pool: &[(String, &[f64])],
    k: usize,
) -> Result<ActiveBatch, LabelError> {
    if k == 0 {
        return Err(LabelError::InvalidBatchSize);
    }
    if pool.is_empty() {
        return Err(LabelError::EmptyPool);
    }
    let mut scored = pool
        .iter()
        .map(|(id, x)| Ok((uncertainty_key(model.predict_proba(x)?), id.clone())))
        .collect::<Result<Vec<_>, LabelError>>()?;
    scored.sort();
    scored.truncate(k);
    Ok(ActiveBatch {
        comment_ids: scored.into_iter().map(|(_, id)| id).collect(),
        batch_size: k,
    })
}

/// Seeded uniform sample used before any model exists.
pub fn bootstrap_batch(pool: &[String], k: usize, seed: u64) -> Result<ActiveBatch, LabelError> {
    if k == 0 {
        return Err(LabelError::InvalidBatchSize);
    }
    let mut ids: Vec<String> = pool.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(k);
    Ok(ActiveBatch { comment_ids: ids, batch_size: k })
}

/// Label-strategy classifier state: the labels collected so far, the
/// embeddings of the training pool and the model trained on them.
#[derive(Debug, Clone)]
pub struct ActiveLearner {
    embeddings: BTreeMap<String, Embedding>,
    labels: BTreeMap<String, Decision>,
    model: Option<NbModel>,
    provider: String,
    pub batch_size: usize,
    pub seed: u64,
}

impl ActiveLearner {
    pub fn new(
        embedder: &dyn Embedder,
        pool: &[(String, String)],
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, LabelError> {
        let texts: Vec<&str> = pool.iter().map(|(_, t)| t.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        Ok(ActiveLearner {
            embeddings: pool.iter().map(|(id, _)| id.clone()).zip(vectors).collect(),
            labels: BTreeMap::new(),
            model: None,
            provider: embedder.id().to_owned(),
            batch_size: batch_size.max(1),
            seed,
        })
    }

    pub fn labels(&self) -> &BTreeMap<String, Decision> {
        &self.labels
    }

    pub fn model(&self) -> Option<&NbModel> {
        self.model.as_ref()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.embeddings.contains_key(id)
    }

    /// Records labels (latest wins) and retrains. A single-class label set
    /// leaves the learner without a model.
    pub fn submit(&mut self, labels: &[LabeledExample]) -> Result<(), LabelError> {
        for l in labels {
            if !self.embeddings.contains_key(&l.comment_id) {
                return Err(LabelError::MissingEmbedding(l.comment_id.clone()));
            }
        }
        for l in labels {
            self.labels.insert(l.comment_id.clone(), l.label);
        }
        self.retrain();
        Ok(())
    }

    fn retrain(&mut self) {
        let examples: Vec<(&[f64], Decision)> = self
            .labels
            .iter()
            .map(|(id, d)| (self.embeddings[id].vector.as_slice(), *d))
            .collect();
        self.model = match train(&examples) {
            Ok(mut m) => {
                m.provider = self.provider.clone();
                Some(m)
            }
            Err(_) => None,
        };
    }

    pub fn unlabeled(&self) -> Vec<String> {
        self.embeddings
            .keys()
            .filter(|id| !self.labels.contains_key(*id))
            .cloned()
            .collect()
    }

    /// Next batch to label: uncertainty-sampled once a model exists, a
    /// seeded random draw before that.
    pub fn next_batch(&self, k: Option<usize>) -> Result<ActiveBatch, LabelError> {
        let k = k.unwrap_or(self.batch_size);
        let pool = self.unlabeled();
        if pool.is_empty() {
            return Ok(ActiveBatch { comment_ids: Vec::new(), batch_size: k });
        }
        match &self.model {
            Some(model) => {
                let pool: Vec<(String, &[f64])> = pool
                    .into_iter()
                    .map(|id| {
                        let v = self.embeddings[&id].vector.as_slice();
                        (id, v)
                    })
                    .collect();
                uncertainty_sample(model, &pool, k)
            }
            None => bootstrap_batch(&pool, k, self.seed.wrapping_add(self.labels.len() as u64)),
        }
    }

    pub fn classify_embedding(&self, e: &Embedding) -> Result<Prediction, LabelError> {
        match &self.model {
            Some(m) => m.predict(&e.vector),
            None => Ok(Prediction::keep()),
        }
    }

    pub fn classify_id(&self, id: &str) -> Result<Prediction, LabelError> {
        let e = self
            .embeddings
            .get(id)
            .ok_or_else(|| LabelError::MissingEmbedding(id.to_owned()))?;
        self.classify_embedding(e)
    }

    pub fn labeled_ids(&self) -> BTreeSet<String> {
        self.labels.keys().cloned().collect()
    }
}
