//! Natural-language prompts classified in batches by a chat model, with a
//! content-addressed verdict cache and union aggregation across prompts.

mod batch;
mod cache;
pub mod mock;

pub use batch::*;
pub use cache::{CacheEntry, VerdictCache};
pub use mock::{mock_provider, MockMode, MockProvider, MockSpec};

use crate::llm::{strip_code_fence, ChatRequest, LlmProvider, LlmProviderConfig};
use crate::types::{Decision, Explanation, Prediction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PromptError {
    #[error("prompt description must not be empty")]
    EmptyDescription,
    #[error("invalid prompt file: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
struct PromptSpec {
    id: String,
    description: String,
    #[serde(default)]
    positive_examples: Vec<String>,
    #[serde(default)]
    negative_examples: Vec<String>,
}

/// A rubric plus optional few-shot examples. `version` is a hash of the
/// content and changes with every edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PromptSpec")]
pub struct Prompt {
    id: String,
    description: String,
    positive_examples: Vec<String>,
    negative_examples: Vec<String>,
    version: String,
}

impl TryFrom<PromptSpec> for Prompt {
    type Error = PromptError;

    fn try_from(s: PromptSpec) -> Result<Self, PromptError> {
        let mut p = Prompt::try_new(s.id, s.description)?;
        p.set_examples(s.positive_examples, s.negative_examples);
        Ok(p)
    }
}

fn content_version(description: &str, pos: &[String], neg: &[String]) -> String {
    let canonical = serde_json::to_string(&(description, pos, neg)).unwrap_or_default();
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

impl Prompt {
    /// # Panics
    /// If `description` is blank; use [`Prompt::try_new`] for user input.
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Self::try_new(id, description).expect("prompt description must not be empty")
    }

    pub fn try_new(id: impl Into<String>, description: impl Into<String>) -> Result<Self, PromptError> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(PromptError::EmptyDescription);
        }
        let mut p = Prompt {
            id: id.into(),
            description,
            positive_examples: Vec::new(),
            negative_examples: Vec::new(),
            version: String::new(),
        };
        p.rehash();
        Ok(p)
    }

    fn rehash(&mut self) {
        self.version = content_version(&self.description, &self.positive_examples, &self.negative_examples);
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn positive_examples(&self) -> &[String] {
        &self.positive_examples
    }

    pub fn negative_examples(&self) -> &[String] {
        &self.negative_examples
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn set_description(&mut self, description: impl Into<String>) -> Result<(), PromptError> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(PromptError::EmptyDescription);
        }
        self.description = description;
        self.rehash();
        Ok(())
    }

    pub fn set_examples(&mut self, positive: Vec<String>, negative: Vec<String>) {
        self.positive_examples = positive;
        self.negative_examples = negative;
        self.rehash();
    }

    pub fn add_example(&mut self, text: impl Into<String>, should_remove: bool) {
        if should_remove {
            self.positive_examples.push(text.into());
        } else {
            self.negative_examples.push(text.into());
        }
        self.rehash();
    }
}

/// Accepts either a bare array of prompts or `{"prompts": [...]}`.
pub fn parse_prompt_set(json: &str) -> Result<Vec<Prompt>, PromptError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum File {
        Bare(Vec<Prompt>),
        Wrapped { prompts: Vec<Prompt> },
    }
    match serde_json::from_str::<File>(json) {
        Ok(File::Bare(p)) | Ok(File::Wrapped { prompts: p }) => Ok(p),
        Err(e) => Err(PromptError::Invalid(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub max_parallel: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            batch_size: 10,
            max_parallel: 4,
        }
    }
}

impl From<&LlmProviderConfig> for BatchConfig {
    fn from(c: &LlmProviderConfig) -> Self {
        BatchConfig {
            batch_size: c.batch_size,
            max_parallel: c.max_parallel,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalOutcome {
    pub predictions: BTreeMap<String, Prediction>,
    /// Provider calls issued, retries included.
    pub requests: usize,
    /// Comments for which at least one prompt has no verdict.
    pub degraded: BTreeSet<String>,
    pub warnings: Vec<String>,
}

impl EvalOutcome {
    pub fn removed(&self) -> BTreeSet<&str> {
        self.predictions
            .iter()
            .filter(|(_, p)| p.decision.is_remove())
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

struct Job<'a> {
    prompt: &'a Prompt,
    items: Vec<(&'a str, &'a str)>,
}

struct JobResult {
    verdicts: BTreeMap<usize, Decision>,
    requests: usize,
    warnings: Vec<String>,
}

fn attempt(provider: &dyn LlmProvider, request: &ChatRequest, n: usize) -> Result<BatchVerdicts, String> {
    let raw = provider.complete(request).map_err(|e| e.to_string())?;
    parse_response(&raw, n).map_err(|e| e.to_string())
}

/// One batch with a single whole-batch retry when the reply is unusable or
/// skips indices. The more complete of the two attempts wins.
fn run_job(provider: &dyn LlmProvider, job: &Job) -> JobResult {
    let texts: Vec<&str> = job.items.iter().map(|(_, t)| *t).collect();
    let request = ChatRequest::new(render_system_prompt(), render_user_message(job.prompt, &texts))
        .tagged(job.prompt.id());
    let n = texts.len();
    let mut warnings = Vec::new();
    let first = attempt(provider, &request, n);
    let complete = matches!(&first, Ok(v) if v.missing.is_empty());
    let (best, requests) = if complete {
        (first, 1)
    } else {
        let second = attempt(provider, &request, n);
        let score = |r: &Result<BatchVerdicts, String>| r.as_ref().map_or(0, |v| v.verdicts.len() + 1);
        if score(&second) > score(&first) {
            (second, 2)
        } else {
            (first, 2)
        }
    };
    let verdicts = match best {
        Ok(v) => {
            warnings.extend(v.warnings);
            if !v.missing.is_empty() {
                warnings.push(format!(
                    "prompt {}: no verdict for {} comment(s) after retry",
                    job.prompt.id(),
                    v.missing.len()
                ));
            }
            v.verdicts
        }
        Err(e) => {
            warnings.push(format!("prompt {}: batch failed: {e}", job.prompt.id()));
            BTreeMap::new()
        }
    };
    JobResult {
        verdicts,
        requests,
        warnings,
    }
}

fn run_jobs(provider: &dyn LlmProvider, jobs: &[Job], max_parallel: usize) -> Vec<JobResult> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<JobResult>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let workers = max_parallel.max(1).min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let result = run_job(provider, job);
                *slots[i].lock().expect("job slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("job slot poisoned").expect("job not run"))
        .collect()
}

/// Classifies `comments` (id, text) under every prompt. Only pairs missing
/// from `cache` reach the provider. A comment is removed when any prompt
/// says so; failed batches leave their comments as Keep marked degraded.
pub fn evaluate(
    prompts: &[Prompt],
    comments: &[(&str, &str)],
    cache: &mut VerdictCache,
    provider: &dyn LlmProvider,
    config: BatchConfig,
) -> EvalOutcome {
    let batch_size = config.batch_size.max(1);
    let mut jobs = Vec::new();
    let mut scheduled = BTreeSet::new();
    for prompt in prompts {
        if !scheduled.insert(prompt.version()) {
            continue;
        }
        let mut seen = BTreeSet::new();
        let pending: Vec<(&str, &str)> = comments
            .iter()
            .filter(|(id, _)| seen.insert(*id) && cache.get(prompt.version(), id).is_none())
            .copied()
            .collect();
        for chunk in pending.chunks(batch_size) {
            jobs.push(Job {
                prompt,
                items: chunk.to_vec(),
            });
        }
    }

    let mut outcome = EvalOutcome::default();
    for (job, result) in jobs.iter().zip(run_jobs(provider, &jobs, config.max_parallel)) {
        outcome.requests += result.requests;
        outcome.warnings.extend(result.warnings);
        for (i, (id, _)) in job.items.iter().enumerate() {
            if let Some(d) = result.verdicts.get(&(i + 1)) {
                cache.insert(job.prompt.version(), id, *d);
            }
        }
    }

    for (id, _) in comments {
        let mut removing = Vec::new();
        let mut degraded = false;
        for prompt in prompts {
            match cache.get(prompt.version(), id) {
                Some(Decision::Remove) => removing.push(prompt.id().to_owned()),
                Some(Decision::Keep) => {}
                None => degraded = true,
            }
        }
        if degraded {
            outcome.degraded.insert((*id).to_owned());
        }
        let decision = Decision::from_remove(!removing.is_empty());
        let explanation = if prompts.is_empty() {
            Explanation::None
        } else {
            Explanation::Prompt {
                removing_prompts: removing,
                degraded,
            }
        };
        outcome
            .predictions
            .insert((*id).to_owned(), Prediction { decision, explanation });
    }
    outcome
}

pub const IMPROVE_SYSTEM_PROMPT: &str = "You help people write rubrics for content moderation. \
Rewrite the rubric given by the user so that a language model can apply it to social media \
comments consistently. Keep its intent and scope unchanged and be specific about what should \
be removed. Reply with the rewritten rubric only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Asks the provider to rephrase a rubric. Never fails: on any error the
/// original description comes back with a warning.
pub fn improve_description(description: &str, provider: &dyn LlmProvider) -> Improvement {
    let fallback = |warning: String| Improvement {
        text: description.to_owned(),
        warning: Some(warning),
    };
    match provider.complete(&ChatRequest::new(IMPROVE_SYSTEM_PROMPT, description)) {
        Ok(raw) => {
            let text = strip_code_fence(&raw).trim();
            if text.is_empty() {
                fallback("provider returned an empty rephrasing".into())
            } else {
                Improvement {
                    text: text.to_owned(),
                    warning: None,
                }
            }
        }
        Err(e) => fallback(format!("could not rephrase: {e}")),
    }
}
