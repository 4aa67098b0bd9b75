//! Operations behind the HTTP routes. Every mutating call validates its
//! event against a copy of the session, appends it to the log (synced to
//! disk) and only then installs the new state and answers.

use crate::clock::Clock;
use crate::config::ServiceConfig;
use crate::error::{ApiError, ApiResult};
use crate::session::{
    kinds, service_registry, ApplyPayload, ConditionStatus, CreateSession, GroundTruthLabels, LabelBatch,
    PredictionRow, PromptChange, PromptRef, RuleEntry, RuleRef, ServedBatch, SessionContext, SessionState, Target,
    ToggleVariants, ViewFilter,
};
use crate::store::{self, validate_id, Store};
use axum::http::StatusCode;
use curate_core::corpus::{make_split, session_seed, Comment, Corpus, CorpusConfig};
use curate_core::evaluation::{read_events, ActionEvent, ActionRegistry, EventLog, MetricsSnapshot, Score};
use curate_core::label::{Embedder, LabeledExample};
use curate_core::llm::LlmProvider;
use curate_core::prompts::{evaluate, improve_description, BatchConfig, CacheEntry, Improvement, Prompt};
use curate_core::rules::{suggest_similar_phrases, Rule, Suggestions};
use curate_core::{Decision, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

pub struct SessionHandle {
    pub state: SessionState,
    log: EventLog,
    ctx: Arc<SessionContext>,
}

impl SessionHandle {
    pub fn ctx(&self) -> &SessionContext {
        &self.ctx
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done { result: Value },
    Failed { error: ApiError },
}

pub struct App {
    config: ServiceConfig,
    store: Store,
    clock: Arc<dyn Clock>,
    provider: Arc<dyn LlmProvider>,
    embedder: Arc<dyn Embedder>,
    batch: BatchConfig,
    registry: ActionRegistry,
    corpora: RwLock<BTreeMap<String, Arc<Corpus>>>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionHandle>>>>,
    jobs: Mutex<BTreeMap<String, (String, JobStatus)>>,
    job_seq: AtomicU64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSessionRequest {
    pub session_id: String,
    pub corpus_id: String,
    #[serde(default)]
    pub order: Option<Vec<Strategy>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub id: String,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionView {
    pub strategy: Strategy,
    pub status: ConditionStatus,
    pub active_seconds: u64,
    pub over_time: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub corpus_id: String,
    pub order: Vec<Strategy>,
    pub seed: u64,
    pub events: usize,
    pub ground_truth: Value,
    pub active: Option<Strategy>,
    pub conditions: Vec<ConditionView>,
    pub label: Value,
    pub rules: Vec<RuleEntry>,
    pub prompts: Vec<Prompt>,
    pub snapshots: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PromptInput {
    pub description: String,
    #[serde(default)]
    pub positive_examples: Vec<String>,
    #[serde(default)]
    pub negative_examples: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ApplyRequest {
    pub strategy: Strategy,
    #[serde(default)]
    pub target: Target,
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub filter: ViewFilter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApplyResponse {
    pub strategy: Strategy,
    pub target: Target,
    pub total: usize,
    pub removed: usize,
    pub approved: usize,
    pub rows: Vec<PredictionRow>,
    pub degraded: usize,
    pub requests: usize,
    pub warnings: Vec<String>,
    /// Test-split score, present when the test split was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<Score>,
}

const PERMUTATIONS: [[Strategy; 3]; 6] = [
    [Strategy::Label, Strategy::Rule, Strategy::Prompt],
    [Strategy::Label, Strategy::Prompt, Strategy::Rule],
    [Strategy::Rule, Strategy::Label, Strategy::Prompt],
    [Strategy::Rule, Strategy::Prompt, Strategy::Label],
    [Strategy::Prompt, Strategy::Label, Strategy::Rule],
    [Strategy::Prompt, Strategy::Rule, Strategy::Label],
];

/// Counterbalanced order drawn uniformly from the six permutations.
pub fn draw_order(seed: u64, session_id: &str) -> Vec<Strategy> {
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(seed, session_id));
    PERMUTATIONS[rng.random_range(0..PERMUTATIONS.len())].to_vec()
}

fn io_err(e: impl std::fmt::Display) -> ApiError {
    ApiError::internal(e.to_string())
}

impl App {
    /// Builds the provider and embedder from `config`.
    pub fn open(config: ServiceConfig, clock: Arc<dyn Clock>) -> ApiResult<Self> {
        let provider = config.provider.build();
        let embedder: Arc<dyn Embedder> = Arc::from(config.embedder.build());
        Self::with_parts(config, clock, provider, embedder)
    }

    /// Loads corpora and replays every stored session.
    pub fn with_parts(
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
        provider: Arc<dyn LlmProvider>,
        embedder: Arc<dyn Embedder>,
    ) -> ApiResult<Self> {
        config.validate().map_err(ApiError::invalid)?;
        let store = Store::new(&config.data_dir).map_err(io_err)?;
        let mut corpora = BTreeMap::new();
        if let Some(dir) = &config.corpus_dir {
            for (id, c) in store::load_corpus_dir(dir).map_err(io_err)? {
                corpora.insert(id, Arc::new(c));
            }
        }
        for (id, c) in store.load_corpora().map_err(io_err)? {
            corpora.insert(id, Arc::new(c));
        }
        let app = App {
            batch: config.provider.batch_config(),
            config,
            store,
            clock,
            provider,
            embedder,
            registry: service_registry(),
            corpora: RwLock::new(corpora),
            sessions: RwLock::new(BTreeMap::new()),
            jobs: Mutex::new(BTreeMap::new()),
            job_seq: AtomicU64::new(0),
        };
        for id in app.store.session_ids().map_err(io_err)? {
            match app.load_session(&id) {
                Ok(handle) => {
                    app.sessions.write().expect("sessions lock").insert(id, Arc::new(Mutex::new(handle)));
                }
                Err(e) => log::warn!("skipping session {id}: {e}"),
            }
        }
        Ok(app)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn registry(&self) -> Vec<String> {
        self.registry.kinds().map(str::to_owned).collect()
    }

    fn context(&self, corpus_id: &str) -> ApiResult<Arc<SessionContext>> {
        let corpus = self
            .corpora
            .read()
            .expect("corpora lock")
            .get(corpus_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("corpus", corpus_id))?;
        Ok(Arc::new(SessionContext {
            corpus,
            embedder: self.embedder.clone(),
            label_batch_size: self.config.label_batch_size,
            time_limit_secs: self.config.time_limit_secs,
        }))
    }

    /// Rebuilds a session from the log on disk, independent of any live
    /// state.
    pub fn replay_session(&self, id: &str) -> ApiResult<SessionState> {
        let events = read_events(&self.store.events_path(id)).map_err(io_err)?;
        let first = events.first().ok_or_else(|| ApiError::not_found("session", id))?;
        let corpus_id = first.payload["corpus_id"].as_str().unwrap_or_default().to_owned();
        SessionState::replay(&events, &*self.context(&corpus_id)?)
    }

    fn load_session(&self, id: &str) -> ApiResult<SessionHandle> {
        let events = read_events(&self.store.events_path(id)).map_err(io_err)?;
        let first = events.first().ok_or_else(|| ApiError::not_found("session", id))?;
        let corpus_id = first.payload["corpus_id"].as_str().unwrap_or_default().to_owned();
        let ctx = self.context(&corpus_id)?;
        let state = SessionState::replay(&events, &ctx)?;
        self.store.write_snapshots(id, &state.snapshots).map_err(io_err)?;
        let log = EventLog::open(&self.store.events_path(id), self.registry.clone())?;
        Ok(SessionHandle { state, log, ctx })
    }

    fn handle(&self, id: &str) -> ApiResult<Arc<Mutex<SessionHandle>>> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    /// Runs `f` with the session locked.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut SessionHandle) -> ApiResult<T>) -> ApiResult<T> {
        let h = self.handle(id)?;
        let mut guard = h.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        f(&mut guard)
    }

    /// Validates, logs and installs one event. `started_ms` marks the start
    /// of backend work done before the call (model requests); the time up to
    /// the commit is recorded as wait and excluded from active time.
    fn commit(
        &self,
        h: &mut SessionHandle,
        kind: &str,
        strategy: Option<Strategy>,
        payload: Value,
        started_ms: Option<u64>,
    ) -> ApiResult<()> {
        let t0 = started_ms.unwrap_or_else(|| self.clock.now_ms()).max(h.state.last_ms);
        let mut event = ActionEvent {
            timestamp_ms: t0,
            session_id: h.state.session_id.clone(),
            strategy,
            kind: kind.to_owned(),
            payload,
            wait_ms: 0,
        };
        h.log.check(&event)?;
        let mut next = h.state.clone();
        next.apply(&event, &h.ctx)?;
        let t1 = self.clock.now_ms().max(t0);
        if t1 > t0 {
            event.timestamp_ms = t1;
            event.wait_ms = t1 - t0;
            next = h.state.clone();
            next.apply(&event, &h.ctx)?;
        }
        h.log.append(&event)?;
        let id = h.state.session_id.clone();
        let old = h.state.snapshots.len();
        if kind == kinds::END_CONDITION {
            self.store.write_snapshots(&id, &next.snapshots).map_err(io_err)?;
        } else {
            self.store.append_snapshots(&id, &next.snapshots[old..]).map_err(io_err)?;
        }
        h.state = next;
        Ok(())
    }

    pub fn put_corpus(&self, id: &str, comments: Vec<Comment>) -> ApiResult<CorpusInfo> {
        validate_id("corpus", id)?;
        if comments.is_empty() {
            return Err(ApiError::invalid("a corpus needs at least one comment"));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = comments.iter().find(|c| !seen.insert(c.id.as_str())) {
            return Err(ApiError::invalid(format!("duplicate comment id `{}`", dup.id)));
        }
        let corpus = Corpus::from_comments(comments);
        let in_use = self
            .sessions
            .read()
            .expect("sessions lock")
            .values()
            .any(|h| h.lock().map(|h| h.state.corpus_id == id).unwrap_or(false));
        if in_use {
            return Err(ApiError::conflict("corpus_in_use", "sessions already reference this corpus"));
        }
        self.store.save_corpus(id, &corpus)?;
        let size = corpus.len();
        self.corpora.write().expect("corpora lock").insert(id.to_owned(), Arc::new(corpus));
        Ok(CorpusInfo { id: id.to_owned(), size })
    }

    pub fn list_corpora(&self) -> Vec<CorpusInfo> {
        self.corpora
            .read()
            .expect("corpora lock")
            .iter()
            .map(|(id, c)| CorpusInfo { id: id.clone(), size: c.len() })
            .collect()
    }

    pub fn create_session(&self, req: CreateSessionRequest) -> ApiResult<SessionView> {
        validate_id("session", &req.session_id)?;
        let ctx = self.context(&req.corpus_id)?;
        let mut sessions = self.sessions.write().expect("sessions lock");
        if sessions.contains_key(&req.session_id) || self.store.events_path(&req.session_id).exists() {
            return Err(ApiError::conflict(
                "session_exists",
                format!("session `{}` already exists", req.session_id),
            ));
        }
        let seed = req.seed.unwrap_or(self.config.seed);
        let cfg = CorpusConfig {
            test_size: self.config.test_size,
            seed,
            ..CorpusConfig::default()
        };
        let split = make_split(&ctx.corpus, &cfg, &req.session_id).map_err(|e| ApiError::invalid(e.to_string()))?;
        let order = req.order.clone().unwrap_or_else(|| draw_order(seed, &req.session_id));
        let payload = CreateSession {
            corpus_id: req.corpus_id.clone(),
            split,
            order,
            seed,
        };
        let event = ActionEvent {
            timestamp_ms: self.clock.now_ms(),
            session_id: req.session_id.clone(),
            strategy: None,
            kind: kinds::CREATE_SESSION.to_owned(),
            payload: serde_json::to_value(&payload).map_err(io_err)?,
            wait_ms: 0,
        };
        let state = SessionState::create(&event, &ctx)?;
        std::fs::create_dir_all(self.store.session_dir(&req.session_id)).map_err(io_err)?;
        let mut log = EventLog::open(&self.store.events_path(&req.session_id), self.registry.clone())?;
        log.append(&event)?;
        self.store.write_snapshots(&req.session_id, &[]).map_err(io_err)?;
        let handle = SessionHandle { state, log, ctx };
        let view = self.view(&handle);
        sessions.insert(req.session_id, Arc::new(Mutex::new(handle)));
        Ok(view)
    }

    fn view(&self, h: &SessionHandle) -> SessionView {
        let s = &h.state;
        let now = self.clock.now_ms();
        SessionView {
            session_id: s.session_id.clone(),
            corpus_id: s.corpus_id.clone(),
            order: s.order.clone(),
            seed: s.seed,
            events: s.event_count,
            ground_truth: json!({
                "labeled": s.ground_truth.len(),
                "total": s.split.test_ids.len(),
                "frozen": s.ground_truth_frozen,
            }),
            active: s.active(),
            conditions: Strategy::ALL.iter().map(|st| self.condition_view(s, *st, now)).collect(),
            label: json!({
                "labeled": s.label.learner.labels().len(),
                "trained": s.label.learner.model().is_some(),
                "pool": s.split.train_ids.len(),
            }),
            rules: s.rules.rules.clone(),
            prompts: s.prompts.prompts.clone(),
            snapshots: s.snapshots.len(),
        }
    }

    fn condition_view(&self, s: &SessionState, strategy: Strategy, now: u64) -> ConditionView {
        let c = s.condition(strategy);
        ConditionView {
            strategy,
            status: c.status,
            active_seconds: c.active_ms_at(now) / 1000,
            over_time: s.over_time(strategy, now, self.config.time_limit_secs),
        }
    }

    pub fn session(&self, id: &str) -> ApiResult<SessionView> {
        self.with_session(id, |h| Ok(self.view(h)))
    }

    pub fn test_set(&self, id: &str) -> ApiResult<Value> {
        self.with_session(id, |h| {
            let s = &h.state;
            let comments: Vec<Value> = s
                .split
                .test_ids
                .iter()
                .map(|cid| {
                    json!({
                        "id": cid,
                        "text": h.ctx.corpus.get(cid).map(|c| c.text.as_str()).unwrap_or(""),
                        "label": s.ground_truth.get(cid),
                    })
                })
                .collect();
            Ok(json!({ "comments": comments, "frozen": s.ground_truth_frozen }))
        })
    }

    pub fn submit_ground_truth(&self, id: &str, labels: BTreeMap<String, Decision>) -> ApiResult<Value> {
        self.with_session(id, |h| {
            let payload = serde_json::to_value(GroundTruthLabels { labels }).map_err(io_err)?;
            self.commit(h, kinds::SUBMIT_GROUND_TRUTH, None, payload, None)?;
            Ok(json!({ "labeled": h.state.ground_truth.len(), "total": h.state.split.test_ids.len() }))
        })
    }

    pub fn finalize_ground_truth(&self, id: &str) -> ApiResult<Value> {
        self.with_session(id, |h| {
            self.commit(h, kinds::FINALIZE_GROUND_TRUTH, None, json!({}), None)?;
            Ok(json!({ "frozen": true, "labeled": h.state.ground_truth.len() }))
        })
    }

    pub fn start_condition(&self, id: &str, s: Strategy) -> ApiResult<ConditionView> {
        self.with_session(id, |h| {
            self.commit(h, kinds::START_CONDITION, Some(s), json!({}), None)?;
            Ok(self.condition_view(&h.state, s, self.clock.now_ms()))
        })
    }

    pub fn end_condition(&self, id: &str, s: Strategy) -> ApiResult<Value> {
        self.with_session(id, |h| {
            self.commit(h, kinds::END_CONDITION, Some(s), json!({}), None)?;
            let last = h.state.snapshots.last().cloned();
            Ok(json!({
                "condition": self.condition_view(&h.state, s, self.clock.now_ms()),
                "final_snapshot": last,
            }))
        })
    }

    fn items(h: &SessionHandle, ids: &[String]) -> Vec<TextItem> {
        ids.iter()
            .map(|id| TextItem {
                id: id.clone(),
                text: h.ctx.corpus.get(id).map(|c| c.text.clone()).unwrap_or_default(),
            })
            .collect()
    }

    pub fn load_more(&self, id: &str, k: Option<usize>) -> ApiResult<Vec<TextItem>> {
        self.with_session(id, |h| {
            let batch = h
                .state
                .label
                .learner
                .next_batch(k)
                .map_err(|e| ApiError::invalid(e.to_string()))?
                .comment_ids;
            let payload = serde_json::to_value(ServedBatch { batch: batch.clone() }).map_err(io_err)?;
            self.commit(h, kinds::LOAD_MORE, Some(Strategy::Label), payload, None)?;
            Ok(Self::items(h, &batch))
        })
    }

    pub fn submit_labels(&self, id: &str, labels: Vec<LabeledExample>) -> ApiResult<Value> {
        self.with_session(id, |h| {
            if labels.is_empty() {
                return Err(ApiError::invalid("no labels submitted"));
            }
            let payload = serde_json::to_value(LabelBatch { labels }).map_err(io_err)?;
            self.commit(h, kinds::LABEL_EXAMPLE, Some(Strategy::Label), payload, None)?;
            let learner = &h.state.label.learner;
            let next = learner.next_batch(None).map(|b| b.comment_ids).unwrap_or_default();
            Ok(json!({
                "labeled": learner.labels().len(),
                "trained": learner.model().is_some(),
                "next": Self::items(h, &next),
            }))
        })
    }

    pub fn labels(&self, id: &str) -> ApiResult<Value> {
        self.with_session(id, |h| {
            let learner = &h.state.label.learner;
            let rows: Vec<Value> = learner
                .labels()
                .iter()
                .map(|(cid, d)| {
                    json!({
                        "comment_id": cid,
                        "label": d,
                        "text": h.ctx.corpus.get(cid).map(|c| c.text.as_str()).unwrap_or(""),
                    })
                })
                .collect();
            Ok(json!({ "labels": rows, "served": Self::items(h, &h.state.label.served), "trained": learner.model().is_some() }))
        })
    }

    pub fn rules(&self, id: &str) -> ApiResult<Vec<RuleEntry>> {
        self.with_session(id, |h| Ok(h.state.rules.rules.clone()))
    }

    pub fn create_rule(&self, id: &str, rule: Rule) -> ApiResult<RuleEntry> {
        self.with_session(id, |h| {
            let entry = RuleEntry {
                id: h.state.next_rule_id(),
                rule,
            };
            self.commit(h, kinds::CREATE_RULE, Some(Strategy::Rule), serde_json::to_value(&entry).map_err(io_err)?, None)?;
            Ok(entry)
        })
    }

    pub fn update_rule(&self, id: &str, rule_id: &str, rule: Rule) -> ApiResult<RuleEntry> {
        self.with_session(id, |h| {
            let entry = RuleEntry {
                id: rule_id.to_owned(),
                rule,
            };
            self.commit(h, kinds::EDIT_RULE, Some(Strategy::Rule), serde_json::to_value(&entry).map_err(io_err)?, None)?;
            Ok(entry)
        })
    }

    pub fn delete_rule(&self, id: &str, rule_id: &str) -> ApiResult<Value> {
        self.with_session(id, |h| {
            let payload = serde_json::to_value(RuleRef { rule_id: rule_id.to_owned() }).map_err(io_err)?;
            self.commit(h, kinds::DELETE_RULE, Some(Strategy::Rule), payload, None)?;
            Ok(json!({ "deleted": rule_id }))
        })
    }

    pub fn set_variants(&self, id: &str, rule_id: &str, on: bool) -> ApiResult<RuleEntry> {
        self.with_session(id, |h| {
            let payload = serde_json::to_value(ToggleVariants { rule_id: rule_id.to_owned(), on }).map_err(io_err)?;
            self.commit(h, kinds::TOGGLE_VARIANTS, Some(Strategy::Rule), payload, None)?;
            Ok(h.state.rules.rules.iter().find(|r| r.id == rule_id).cloned().expect("rule exists after toggle"))
        })
    }

    fn ensure_active(h: &SessionHandle, s: Strategy) -> ApiResult<()> {
        match h.state.condition(s).status {
            ConditionStatus::Active => Ok(()),
            ConditionStatus::Pending => Err(ApiError::conflict(
                "condition_not_active",
                format!("the {s} condition has not started"),
            )),
            ConditionStatus::Closed => Err(ApiError::conflict(
                "condition_closed",
                format!("the {s} condition is closed and read-only"),
            )),
        }
    }

    pub fn suggest(&self, id: &str, phrases: Vec<String>, rule_id: Option<String>) -> ApiResult<Suggestions> {
        self.with_session(id, |h| {
            Self::ensure_active(h, Strategy::Rule)?;
            let t0 = self.clock.now_ms();
            let out = suggest_similar_phrases(&phrases, self.provider.as_ref());
            let payload = json!({
                "rule_id": rule_id,
                "phrases": phrases,
                "suggestions": out.phrases,
                "warning": out.warning,
            });
            self.commit(h, kinds::ASK_SYNONYMS, Some(Strategy::Rule), payload, Some(t0))?;
            Ok(out)
        })
    }

    pub fn prompts(&self, id: &str) -> ApiResult<Vec<Prompt>> {
        self.with_session(id, |h| Ok(h.state.prompts.prompts.clone()))
    }

    fn build_prompt(prompt_id: String, input: PromptInput) -> ApiResult<Prompt> {
        let mut p = Prompt::try_new(prompt_id, input.description).map_err(|e| ApiError::invalid(e.to_string()))?;
        p.set_examples(input.positive_examples, input.negative_examples);
        Ok(p)
    }

    fn prompt_change(&self, h: &mut SessionHandle, kind: &str, prompt: Prompt) -> ApiResult<Prompt> {
        let payload = serde_json::to_value(PromptChange { prompt: prompt.clone() }).map_err(io_err)?;
        self.commit(h, kind, Some(Strategy::Prompt), payload, None)?;
        Ok(prompt)
    }

    pub fn create_prompt(&self, id: &str, input: PromptInput) -> ApiResult<Prompt> {
        self.with_session(id, |h| {
            let p = Self::build_prompt(h.state.next_prompt_id(), input)?;
            self.prompt_change(h, kinds::CREATE_PROMPT, p)
        })
    }

    pub fn update_prompt(&self, id: &str, prompt_id: &str, input: PromptInput) -> ApiResult<Prompt> {
        self.with_session(id, |h| {
            let p = Self::build_prompt(prompt_id.to_owned(), input)?;
            self.prompt_change(h, kinds::EDIT_PROMPT, p)
        })
    }

    fn find_prompt(h: &SessionHandle, prompt_id: &str) -> ApiResult<Prompt> {
        h.state
            .prompts
            .prompts
            .iter()
            .find(|p| p.id() == prompt_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("prompt", prompt_id))
    }

    pub fn add_example(&self, id: &str, prompt_id: &str, text: String, should_remove: bool) -> ApiResult<Prompt> {
        self.with_session(id, |h| {
            let mut p = Self::find_prompt(h, prompt_id)?;
            if text.trim().is_empty() {
                return Err(ApiError::invalid("example text is empty"));
            }
            p.add_example(text, should_remove);
            self.prompt_change(h, kinds::ADD_FEWSHOT, p)
        })
    }

    pub fn delete_prompt(&self, id: &str, prompt_id: &str) -> ApiResult<Value> {
        self.with_session(id, |h| {
            let payload = serde_json::to_value(PromptRef { prompt_id: prompt_id.to_owned() }).map_err(io_err)?;
            self.commit(h, kinds::DELETE_PROMPT, Some(Strategy::Prompt), payload, None)?;
            Ok(json!({ "deleted": prompt_id }))
        })
    }

    /// Suggests a rephrased description. The prompt itself is unchanged.
    pub fn improve(&self, id: &str, prompt_id: &str, description: Option<String>) -> ApiResult<Improvement> {
        self.with_session(id, |h| {
            Self::ensure_active(h, Strategy::Prompt)?;
            let original = match description {
                Some(d) => d,
                None => Self::find_prompt(h, prompt_id)?.description().to_owned(),
            };
            if original.trim().is_empty() {
                return Err(ApiError::invalid("description is empty"));
            }
            let t0 = self.clock.now_ms();
            let out = improve_description(&original, self.provider.as_ref());
            let payload = json!({
                "prompt_id": prompt_id,
                "original": original,
                "suggestion": out.text,
                "warning": out.warning,
            });
            self.commit(h, kinds::IMPROVE_PROMPT, Some(Strategy::Prompt), payload, Some(t0))?;
            Ok(out)
        })
    }

    /// Runs the strategy's classifier over a page of comments. For prompts
    /// the model is queried without holding the session lock; new verdicts
    /// travel in the logged event so replay never calls the model.
    pub fn apply(&self, id: &str, req: ApplyRequest) -> ApiResult<ApplyResponse> {
        let mut payload = ApplyPayload {
            target: req.target,
            offset: req.offset,
            limit: req.limit,
            filter: req.filter,
            ..ApplyPayload::default()
        };
        let mut requests = 0;
        let mut warnings = Vec::new();
        let mut started = None;
        if req.strategy == Strategy::Prompt {
            let (prompts, items, mut cache) = self.with_session(id, |h| {
                let st = &h.state;
                let active = st.condition(Strategy::Prompt).status == ConditionStatus::Active;
                let prompts = if active { st.prompts.prompts.clone() } else { st.prompts.applied.clone() };
                let mut ids = st.target_ids(&payload);
                if active {
                    ids.extend(st.split.test_ids.iter().cloned());
                }
                Ok((prompts, Self::items(h, &ids), st.prompts.cache.clone()))
            })?;
            let before = cache.clone();
            started = Some(self.clock.now_ms());
            let pairs: Vec<(&str, &str)> = items.iter().map(|i| (i.id.as_str(), i.text.as_str())).collect();
            let outcome = evaluate(&prompts, &pairs, &mut cache, self.provider.as_ref(), self.batch);
            requests = outcome.requests;
            warnings = outcome.warnings;
            payload.verdicts = cache
                .entries()
                .filter(|e| before.get(&e.prompt_version, &e.comment_id).is_none())
                .collect::<Vec<CacheEntry>>();
            payload.prompts = Some(prompts);
        }
        self.with_session(id, |h| {
            let active = h.state.condition(req.strategy).status == ConditionStatus::Active;
            if req.strategy == Strategy::Rule && active {
                payload.rules = Some(h.state.rules.rules.clone());
            }
            if !active {
                payload.prompts = None;
            }
            self.commit(
                h,
                kinds::APPLY,
                Some(req.strategy),
                serde_json::to_value(&payload).map_err(io_err)?,
                started,
            )?;
            let ids = h.state.target_ids(&payload);
            let all = h.state.rows(
                req.strategy,
                &ApplyPayload {
                    filter: ViewFilter::All,
                    ..payload.clone()
                },
                &h.ctx,
            )?;
            let removed = all.iter().filter(|r| r.decision == Decision::Remove).count();
            let degraded = all
                .iter()
                .filter(|r| matches!(r.explanation, curate_core::Explanation::Prompt { degraded: true, .. }))
                .count();
            let score = if req.target == Target::Test {
                Some(h.state.score_applied(req.strategy, &h.ctx))
            } else {
                None
            };
            Ok(ApplyResponse {
                strategy: req.strategy,
                target: req.target,
                total: ids.len(),
                removed,
                approved: all.len() - removed,
                rows: all.into_iter().filter(|r| req.filter.admits(r.decision)).collect(),
                degraded,
                requests,
                warnings: std::mem::take(&mut warnings),
                score,
            })
        })
    }

    /// Starts [`App::apply`] in the background; poll with [`App::job`].
    pub fn start_apply_job(self: &Arc<Self>, id: &str, req: ApplyRequest) -> ApiResult<String> {
        self.handle(id)?;
        let job_id = format!("job{}", self.job_seq.fetch_add(1, Ordering::SeqCst) + 1);
        self.jobs
            .lock()
            .expect("jobs lock")
            .insert(job_id.clone(), (id.to_owned(), JobStatus::Running));
        let app = Arc::clone(self);
        let (sid, jid) = (id.to_owned(), job_id.clone());
        std::thread::spawn(move || {
            let status = match app.apply(&sid, req) {
                Ok(r) => JobStatus::Done {
                    result: serde_json::to_value(r).unwrap_or(Value::Null),
                },
                Err(error) => JobStatus::Failed { error },
            };
            app.jobs.lock().expect("jobs lock").insert(jid, (sid, status));
        });
        Ok(job_id)
    }

    pub fn job(&self, id: &str, job_id: &str) -> ApiResult<JobStatus> {
        match self.jobs.lock().expect("jobs lock").get(job_id) {
            Some((sid, status)) if sid == id => Ok(status.clone()),
            _ => Err(ApiError::not_found("job", job_id)),
        }
    }

    pub fn snapshots(&self, id: &str) -> ApiResult<Value> {
        self.with_session(id, |h| {
            let pending: Vec<MetricsSnapshot> = h.state.pending_snapshots(self.clock.now_ms(), &h.ctx);
            Ok(json!({ "snapshots": h.state.snapshots, "pending": pending }))
        })
    }

    pub fn events(&self, id: &str) -> ApiResult<Vec<ActionEvent>> {
        self.with_session(id, |h| read_events(h.log.path()).map_err(io_err))
    }

    /// Logs a UI interaction that carries no state change.
    pub fn post_event(&self, id: &str, kind: &str, strategy: Option<Strategy>, payload: Value) -> ApiResult<ActionEvent> {
        if kinds::STATEFUL.contains(&kind) {
            return Err(ApiError::invalid(format!("`{kind}` is recorded by its own endpoint")).with_code("reserved_kind"));
        }
        self.with_session(id, |h| {
            self.commit(h, kind, strategy, payload, None)?;
            read_events(h.log.path())
                .map_err(io_err)?
                .pop()
                .ok_or_else(|| ApiError::internal("event missing after append"))
        })
    }

    /// Test-split score of a closed condition's final classifier.
    pub fn score(&self, id: &str, s: Strategy) -> ApiResult<Value> {
        self.with_session(id, |h| {
            if h.state.condition(s).status != ConditionStatus::Closed {
                return Err(ApiError::conflict(
                    "review_only",
                    "scores are available once the condition has ended",
                ));
            }
            let score = h.state.score_applied(s, &h.ctx);
            Ok(json!({
                "strategy": s,
                "counts": score.counts,
                "metrics": score.metrics,
                "classifier": h.state.classifier_json(s),
            }))
        })
    }

    pub fn health(&self) -> Value {
        json!({
            "status": "ok",
            "sessions": self.sessions.read().map(|s| s.len()).unwrap_or(0),
            "corpora": self.corpora.read().map(|c| c.len()).unwrap_or(0),
            "provider": self.provider.id(),
            "embedder": self.embedder.id(),
        })
    }
}

pub fn status_of(e: &ApiError) -> StatusCode {
    e.status()
}
