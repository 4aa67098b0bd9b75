//! Session state as a fold over its action log. Live requests and replay
//! go through the same [`SessionState::apply`], so a log rebuilt from disk
//! yields the same classifiers and snapshots.

use crate::error::{ApiError, ApiResult};
use axum::http::StatusCode;
use curate_core::corpus::{Corpus, SessionSplit};
use curate_core::evaluation::{
    score, ActionEvent, ActionRegistry, ActiveClock, MetricsSnapshot, Score, SNAPSHOT_INTERVAL_SECS,
};
use curate_core::label::{ActiveLearner, Embedder, Embedding, LabeledExample};
use curate_core::prompts::{CacheEntry, Prompt, VerdictCache};
use curate_core::rules::{Rule, RuleSet};
use curate_core::{Decision, Explanation, Prediction, Strategy};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::sync::Arc;

pub mod kinds {
    pub const CREATE_SESSION: &str = "create_session";
    pub const SUBMIT_GROUND_TRUTH: &str = "submit_ground_truth";
    pub const FINALIZE_GROUND_TRUTH: &str = "finalize_ground_truth";
    pub const START_CONDITION: &str = "start_condition";
    pub const END_CONDITION: &str = "end_condition";
    pub const LABEL_EXAMPLE: &str = "label_example";
    pub const LOAD_MORE: &str = "load_more_examples";
    pub const CREATE_RULE: &str = "create_rule";
    pub const EDIT_RULE: &str = "edit_rule";
    pub const DELETE_RULE: &str = "delete_rule";
    pub const TOGGLE_VARIANTS: &str = "toggle_variants";
    pub const ASK_SYNONYMS: &str = "ask_synonyms";
    pub const CREATE_PROMPT: &str = "create_prompt";
    pub const EDIT_PROMPT: &str = "edit_prompt";
    pub const DELETE_PROMPT: &str = "delete_prompt";
    pub const ADD_FEWSHOT: &str = "add_fewshot_example";
    pub const IMPROVE_PROMPT: &str = "improve_prompt";
    pub const APPLY: &str = "apply_classifier";

    /// Kinds the service adds on top of the seeded registry.
    pub const SERVICE_KINDS: [&str; 8] = [
        CREATE_SESSION,
        SUBMIT_GROUND_TRUTH,
        FINALIZE_GROUND_TRUTH,
        START_CONDITION,
        END_CONDITION,
        DELETE_RULE,
        DELETE_PROMPT,
        "survey_response",
    ];

    /// Kinds that change state and so may only be produced by the service
    /// itself, never posted as raw events.
    pub const STATEFUL: [&str; 18] = [
        CREATE_SESSION,
        SUBMIT_GROUND_TRUTH,
        FINALIZE_GROUND_TRUTH,
        START_CONDITION,
        END_CONDITION,
        LABEL_EXAMPLE,
        LOAD_MORE,
        CREATE_RULE,
        EDIT_RULE,
        DELETE_RULE,
        TOGGLE_VARIANTS,
        ASK_SYNONYMS,
        CREATE_PROMPT,
        EDIT_PROMPT,
        DELETE_PROMPT,
        ADD_FEWSHOT,
        IMPROVE_PROMPT,
        APPLY,
    ];
}

pub fn service_registry() -> ActionRegistry {
    let mut r = ActionRegistry::seeded();
    for k in kinds::SERVICE_KINDS {
        r.register(k);
    }
    r
}

/// Read-only inputs a session fold needs besides its events.
pub struct SessionContext {
    pub corpus: Arc<Corpus>,
    pub embedder: Arc<dyn Embedder>,
    pub label_batch_size: usize,
    pub time_limit_secs: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub corpus_id: String,
    pub split: SessionSplit,
    pub order: Vec<Strategy>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub labels: BTreeMap<String, Decision>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelBatch {
    pub labels: Vec<LabeledExample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServedBatch {
    pub batch: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub id: String,
    pub rule: Rule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleRef {
    pub rule_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToggleVariants {
    pub rule_id: String,
    pub on: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptChange {
    pub prompt: Prompt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRef {
    pub prompt_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewFilter {
    #[default]
    All,
    Removed,
    Approved,
}

impl ViewFilter {
    pub fn admits(self, d: Decision) -> bool {
        match self {
            ViewFilter::All => true,
            ViewFilter::Removed => d == Decision::Remove,
            ViewFilter::Approved => d == Decision::Keep,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ApplyPayload {
    #[serde(default)]
    pub target: Target,
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub filter: ViewFilter,
    /// Rule set being applied (rule strategy, open condition only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<RuleEntry>>,
    /// Prompts being applied (prompt strategy, open condition only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<Vec<Prompt>>,
    /// Model verdicts obtained for this application.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<CacheEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionStatus {
    Pending,
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionState {
    pub status: ConditionStatus,
    pub started_ms: Option<u64>,
    pub ended_ms: Option<u64>,
    /// Active time already accounted for by snapshots.
    pub active_ms: u64,
    clock: Option<ActiveClock>,
}

impl ConditionState {
    fn pending() -> Self {
        ConditionState {
            status: ConditionStatus::Pending,
            started_ms: None,
            ended_ms: None,
            active_ms: 0,
            clock: None,
        }
    }

    /// Active milliseconds as of wall time `at_ms`.
    pub fn active_ms_at(&self, at_ms: u64) -> u64 {
        match (&self.status, &self.clock) {
            (ConditionStatus::Active, Some(c)) => c.active_ms(at_ms).max(self.active_ms),
            _ => self.active_ms,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleState {
    pub rules: Vec<RuleEntry>,
    pub applied: Vec<RuleEntry>,
    pub next_id: u64,
}

#[derive(Debug, Clone, Default)]
pub struct PromptState {
    pub prompts: Vec<Prompt>,
    pub applied: Vec<Prompt>,
    pub cache: VerdictCache,
    pub next_id: u64,
}

#[derive(Debug, Clone)]
pub struct LabelState {
    pub learner: ActiveLearner,
    pub served: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub text: String,
    pub decision: Decision,
    pub explanation: Explanation,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub corpus_id: String,
    pub split: SessionSplit,
    pub order: Vec<Strategy>,
    pub seed: u64,
    pub created_ms: u64,
    pub last_ms: u64,
    pub event_count: usize,
    pub ground_truth: BTreeMap<String, Decision>,
    pub ground_truth_frozen: bool,
    pub conditions: BTreeMap<Strategy, ConditionState>,
    pub label: LabelState,
    pub rules: RuleState,
    pub prompts: PromptState,
    pub snapshots: Vec<MetricsSnapshot>,
    embeddings: Arc<BTreeMap<String, Embedding>>,
}

fn decode<T: serde::de::DeserializeOwned>(e: &ActionEvent) -> ApiResult<T> {
    serde_json::from_value(e.payload.clone())
        .map_err(|err| ApiError::invalid(format!("bad `{}` payload: {err}", e.kind)))
}

fn no_classifier(message: &str) -> ApiError {
    ApiError::conflict("no_classifier", message)
}

impl SessionState {
    /// Builds the initial state from a `create_session` event.
    pub fn create(event: &ActionEvent, ctx: &SessionContext) -> ApiResult<Self> {
        if event.kind != kinds::CREATE_SESSION {
            return Err(ApiError::invalid("a session log must start with create_session"));
        }
        let p: CreateSession = decode(event)?;
        let mut order = p.order.clone();
        order.sort();
        order.dedup();
        if p.order.len() != 3 || order.len() != 3 {
            return Err(ApiError::invalid("order must list each strategy exactly once"));
        }
        let text = |id: &String| -> ApiResult<&str> {
            ctx.corpus
                .get(id)
                .map(|c| c.text.as_str())
                .ok_or_else(|| ApiError::invalid(format!("split id `{id}` not in corpus")))
        };
        let pool: Vec<(String, String)> = p
            .split
            .train_ids
            .iter()
            .map(|id| Ok((id.clone(), text(id)?.to_owned())))
            .collect::<ApiResult<_>>()?;
        let test_texts: Vec<&str> = p.split.test_ids.iter().map(text).collect::<ApiResult<_>>()?;
        let embed_err = |e: curate_core::label::LabelError| {
            ApiError::new(StatusCode::BAD_GATEWAY, "embedder_error", e.to_string())
        };
        let learner = ActiveLearner::new(ctx.embedder.as_ref(), &pool, ctx.label_batch_size, p.seed)
            .map_err(embed_err)?;
        let test_vectors = ctx.embedder.embed_batch(&test_texts).map_err(embed_err)?;
        let embeddings = p.split.test_ids.iter().cloned().zip(test_vectors).collect();
        Ok(SessionState {
            session_id: event.session_id.clone(),
            corpus_id: p.corpus_id,
            split: p.split,
            order: p.order,
            seed: p.seed,
            created_ms: event.timestamp_ms,
            last_ms: event.timestamp_ms,
            event_count: 1,
            ground_truth: BTreeMap::new(),
            ground_truth_frozen: false,
            conditions: Strategy::ALL.iter().map(|s| (*s, ConditionState::pending())).collect(),
            label: LabelState {
                learner,
                served: Vec::new(),
            },
            rules: RuleState::default(),
            prompts: PromptState::default(),
            snapshots: Vec::new(),
            embeddings: Arc::new(embeddings),
        })
    }

    /// Rebuilds a session from its complete log.
    pub fn replay(events: &[ActionEvent], ctx: &SessionContext) -> ApiResult<Self> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| ApiError::invalid("empty session log"))?;
        let mut state = SessionState::create(first, ctx)?;
        for e in rest {
            state.apply(e, ctx)?;
        }
        Ok(state)
    }

    pub fn active(&self) -> Option<Strategy> {
        self.conditions
            .iter()
            .find(|(_, c)| c.status == ConditionStatus::Active)
            .map(|(s, _)| *s)
    }

    pub fn condition(&self, s: Strategy) -> &ConditionState {
        &self.conditions[&s]
    }

    pub fn next_rule_id(&self) -> String {
        format!("r{}", self.rules.next_id + 1)
    }

    pub fn next_prompt_id(&self) -> String {
        format!("p{}", self.prompts.next_id + 1)
    }

    pub fn over_time(&self, s: Strategy, now_ms: u64, limit_secs: u64) -> bool {
        self.condition(s).active_ms_at(now_ms) > limit_secs * 1000
    }

    /// Applies one event: first snapshots every 30 s boundary of active
    /// time that elapsed before it, then the event's own effect.
    pub fn apply(&mut self, e: &ActionEvent, ctx: &SessionContext) -> ApiResult<()> {
        if e.session_id != self.session_id {
            return Err(ApiError::invalid("event belongs to another session"));
        }
        if e.timestamp_ms < self.last_ms {
            return Err(ApiError::conflict("out_of_order", "event predates the previous one"));
        }
        self.advance_clock(e.timestamp_ms, e.wait_ms, ctx);
        self.mutate(e, ctx)?;
        self.last_ms = e.timestamp_ms;
        self.event_count += 1;
        Ok(())
    }

    fn advance_clock(&mut self, ts: u64, wait_ms: u64, ctx: &SessionContext) {
        let Some(s) = self.active() else { return };
        let last_ms = self.last_ms;
        let cond = self.conditions.get_mut(&s).expect("every strategy has a condition");
        let clock = cond.clock.as_mut().expect("active condition has a clock");
        if wait_ms > 0 {
            let from = ts.saturating_sub(wait_ms).max(last_ms);
            clock.pause(from).expect("pause within monotone log");
            clock.resume(ts).expect("resume after pause");
        }
        let now = clock.active_ms(ts);
        let from = cond.active_ms;
        cond.active_ms = now;
        for t in ActiveClock::boundaries(from, now) {
            let snap = self.take_snapshot(s, t, false, ctx);
            self.snapshots.push(snap);
        }
    }

    fn take_snapshot(&self, s: Strategy, t: u64, is_final: bool, ctx: &SessionContext) -> MetricsSnapshot {
        let Score { counts, metrics } = self.score_applied(s, ctx);
        MetricsSnapshot {
            session_id: self.session_id.clone(),
            strategy: s,
            t_active_seconds: t,
            is_final,
            counts,
            metrics,
            classifier: self.classifier_json(s),
        }
    }

    /// Serialized classifier a strategy currently applies.
    pub fn classifier_json(&self, s: Strategy) -> Value {
        match s {
            Strategy::Label => json!({ "labels": self.label.learner.labels() }),
            Strategy::Rule => json!({ "rules": self.rules.applied }),
            Strategy::Prompt => json!({ "prompts": self.prompts.applied }),
        }
    }

    /// Scores the applied classifier on the frozen ground truth. Missing
    /// pieces (no model yet, no verdict) count as Keep.
    pub fn score_applied(&self, s: Strategy, ctx: &SessionContext) -> Score {
        let ids: Vec<String> = self.ground_truth.keys().cloned().collect();
        let preds: BTreeMap<String, Decision> = self
            .predict(s, &ids, ctx, false)
            .unwrap_or_else(|_| ids.iter().map(|id| (id.clone(), Prediction::keep())).collect())
            .into_iter()
            .map(|(id, p)| (id, p.decision))
            .collect();
        score(&preds, &self.ground_truth).expect("every ground-truth id predicted")
    }

    fn text<'a>(&self, ctx: &'a SessionContext, id: &str) -> &'a str {
        ctx.corpus.get(id).map(|c| c.text.as_str()).unwrap_or("")
    }

    /// Predictions of the applied classifier. With `strict`, a strategy
    /// that has nothing to apply is an error instead of all-Keep.
    pub fn predict(
        &self,
        s: Strategy,
        ids: &[String],
        ctx: &SessionContext,
        strict: bool,
    ) -> ApiResult<Vec<(String, Prediction)>> {
        match s {
            Strategy::Label => {
                let learner = &self.label.learner;
                if learner.model().is_none() && strict {
                    return Err(no_classifier(
                        "the label classifier is not trained yet; label more examples of both classes",
                    ));
                }
                ids.iter()
                    .map(|id| {
                        let p = match self.embeddings.get(id) {
                            Some(e) => learner.classify_embedding(e),
                            None => learner.classify_id(id),
                        };
                        p.map(|p| (id.clone(), p)).map_err(|e| ApiError::internal(e.to_string()))
                    })
                    .collect()
            }
            Strategy::Rule => {
                if self.rules.applied.is_empty() && strict {
                    return Err(no_classifier("no rules to apply"));
                }
                let rules: Vec<Rule> = self.rules.applied.iter().map(|r| r.rule.clone()).collect();
                let set = RuleSet::compile(&rules).map_err(|e| ApiError::internal(e.to_string()))?;
                Ok(ids.iter().map(|id| (id.clone(), set.classify(self.text(ctx, id)))).collect())
            }
            Strategy::Prompt => {
                if self.prompts.applied.is_empty() && strict {
                    return Err(no_classifier("no prompts to apply"));
                }
                Ok(ids
                    .iter()
                    .map(|id| {
                        let mut removing = Vec::new();
                        let mut degraded = false;
                        for p in &self.prompts.applied {
                            match self.prompts.cache.get(p.version(), id) {
                                Some(Decision::Remove) => removing.push(p.id().to_owned()),
                                Some(Decision::Keep) => {}
                                None => degraded = true,
                            }
                        }
                        let pred = Prediction {
                            decision: Decision::from_remove(!removing.is_empty()),
                            explanation: Explanation::Prompt {
                                removing_prompts: removing,
                                degraded,
                            },
                        };
                        (id.clone(), pred)
                    })
                    .collect())
            }
        }
    }

    /// Comment ids an apply request covers.
    pub fn target_ids(&self, p: &ApplyPayload) -> Vec<String> {
        let all = match p.target {
            Target::Train => &self.split.train_ids,
            Target::Test => &self.split.test_ids,
        };
        let end = p.limit.map_or(all.len(), |l| (p.offset + l).min(all.len()));
        all.get(p.offset.min(all.len())..end).unwrap_or(&[]).to_vec()
    }

    pub fn rows(&self, s: Strategy, p: &ApplyPayload, ctx: &SessionContext) -> ApiResult<Vec<PredictionRow>> {
        let ids = self.target_ids(p);
        Ok(self
            .predict(s, &ids, ctx, true)?
            .into_iter()
            .filter(|(_, pred)| p.filter.admits(pred.decision))
            .map(|(id, pred)| PredictionRow {
                text: self.text(ctx, &id).to_owned(),
                id,
                decision: pred.decision,
                explanation: pred.explanation,
            })
            .collect())
    }

    fn require_strategy(&self, e: &ActionEvent) -> ApiResult<Strategy> {
        e.strategy
            .ok_or_else(|| ApiError::invalid(format!("`{}` needs a strategy", e.kind)))
    }

    /// The event's strategy, which must be the open condition.
    fn require_active(&self, e: &ActionEvent) -> ApiResult<Strategy> {
        let s = self.require_strategy(e)?;
        match self.condition(s).status {
            ConditionStatus::Active => Ok(s),
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

    fn rule_index(&self, id: &str) -> ApiResult<usize> {
        self.rules
            .rules
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| ApiError::not_found("rule", id))
    }

    fn prompt_index(&self, id: &str) -> ApiResult<usize> {
        self.prompts
            .prompts
            .iter()
            .position(|p| p.id() == id)
            .ok_or_else(|| ApiError::not_found("prompt", id))
    }

    fn mutate(&mut self, e: &ActionEvent, ctx: &SessionContext) -> ApiResult<()> {
        match e.kind.as_str() {
            kinds::CREATE_SESSION => Err(ApiError::conflict("session_exists", "session already created")),
            kinds::SUBMIT_GROUND_TRUTH => {
                if self.ground_truth_frozen {
                    return Err(ApiError::conflict("ground_truth_frozen", "ground truth is already final"));
                }
                let p: GroundTruthLabels = decode(e)?;
                let stray: Vec<&String> = p.labels.keys().filter(|id| !self.split.test_ids.contains(id)).collect();
                if !stray.is_empty() {
                    return Err(ApiError::invalid("ids outside the test split")
                        .with_code("not_in_test_split")
                        .with_details(json!({ "ids": stray })));
                }
                self.ground_truth.extend(p.labels);
                Ok(())
            }
            kinds::FINALIZE_GROUND_TRUTH => {
                if self.ground_truth_frozen {
                    return Err(ApiError::conflict("ground_truth_frozen", "ground truth is already final"));
                }
                let missing: Vec<&String> = self
                    .split
                    .test_ids
                    .iter()
                    .filter(|id| !self.ground_truth.contains_key(*id))
                    .collect();
                if !missing.is_empty() {
                    return Err(ApiError::invalid(format!("{} test comment(s) unlabeled", missing.len()))
                        .with_code("ground_truth_incomplete")
                        .with_details(json!({ "missing": missing })));
                }
                self.ground_truth_frozen = true;
                Ok(())
            }
            kinds::START_CONDITION => {
                let s = self.require_strategy(e)?;
                if !self.ground_truth_frozen {
                    return Err(ApiError::conflict(
                        "ground_truth_not_final",
                        "finalize the ground truth before starting a condition",
                    ));
                }
                if let Some(open) = self.active() {
                    return Err(ApiError::conflict(
                        "condition_active",
                        format!("the {open} condition is still open"),
                    ));
                }
                let cond = self.conditions.get_mut(&s).expect("condition exists");
                if cond.status != ConditionStatus::Pending {
                    return Err(ApiError::conflict("condition_closed", format!("the {s} condition already ran")));
                }
                cond.status = ConditionStatus::Active;
                cond.started_ms = Some(e.timestamp_ms);
                cond.clock = Some(ActiveClock::new(e.timestamp_ms));
                Ok(())
            }
            kinds::END_CONDITION => {
                let s = self.require_active(e)?;
                let active_ms = self.condition(s).active_ms;
                let t = ActiveClock::final_seconds(active_ms);
                let on_boundary = active_ms > 0 && active_ms.is_multiple_of(SNAPSHOT_INTERVAL_SECS * 1000);
                match self.snapshots.last_mut() {
                    Some(last) if on_boundary && last.strategy == s && last.t_active_seconds == t => last.is_final = true,
                    _ => {
                        let snap = self.take_snapshot(s, t, true, ctx);
                        self.snapshots.push(snap);
                    }
                }
                let cond = self.conditions.get_mut(&s).expect("condition exists");
                cond.status = ConditionStatus::Closed;
                cond.ended_ms = Some(e.timestamp_ms);
                Ok(())
            }
            kinds::LABEL_EXAMPLE => {
                self.expect_strategy(e, Strategy::Label)?;
                let p: LabelBatch = decode(e)?;
                self.label
                    .learner
                    .submit(&p.labels)
                    .map_err(|err| ApiError::invalid(err.to_string()).with_code("not_in_training_pool"))
            }
            kinds::LOAD_MORE => {
                self.expect_strategy(e, Strategy::Label)?;
                let p: ServedBatch = decode(e)?;
                self.label.served = p.batch;
                Ok(())
            }
            kinds::CREATE_RULE | kinds::EDIT_RULE => {
                self.expect_strategy(e, Strategy::Rule)?;
                let entry: RuleEntry = decode(e)?;
                RuleSet::compile(std::slice::from_ref(&entry.rule))
                    .map_err(|err| ApiError::invalid(err.to_string()).with_code("invalid_rule"))?;
                if e.kind == kinds::CREATE_RULE {
                    if self.rules.rules.iter().any(|r| r.id == entry.id) {
                        return Err(ApiError::conflict("rule_exists", format!("rule `{}` exists", entry.id)));
                    }
                    self.rules.rules.push(entry);
                    self.rules.next_id += 1;
                } else {
                    let i = self.rule_index(&entry.id)?;
                    self.rules.rules[i] = entry;
                }
                Ok(())
            }
            kinds::DELETE_RULE => {
                self.expect_strategy(e, Strategy::Rule)?;
                let p: RuleRef = decode(e)?;
                let i = self.rule_index(&p.rule_id)?;
                self.rules.rules.remove(i);
                Ok(())
            }
            kinds::TOGGLE_VARIANTS => {
                self.expect_strategy(e, Strategy::Rule)?;
                let p: ToggleVariants = decode(e)?;
                let i = self.rule_index(&p.rule_id)?;
                self.rules.rules[i].rule.set_variants(p.on);
                Ok(())
            }
            kinds::CREATE_PROMPT | kinds::EDIT_PROMPT | kinds::ADD_FEWSHOT => {
                self.expect_strategy(e, Strategy::Prompt)?;
                let p: PromptChange = decode(e)?;
                if e.kind == kinds::CREATE_PROMPT {
                    if self.prompts.prompts.iter().any(|x| x.id() == p.prompt.id()) {
                        return Err(ApiError::conflict("prompt_exists", format!("prompt `{}` exists", p.prompt.id())));
                    }
                    self.prompts.prompts.push(p.prompt);
                    self.prompts.next_id += 1;
                } else {
                    let i = self.prompt_index(p.prompt.id())?;
                    self.prompts.prompts[i] = p.prompt;
                }
                Ok(())
            }
            kinds::DELETE_PROMPT => {
                self.expect_strategy(e, Strategy::Prompt)?;
                let p: PromptRef = decode(e)?;
                let i = self.prompt_index(&p.prompt_id)?;
                self.prompts.prompts.remove(i);
                Ok(())
            }
            kinds::ASK_SYNONYMS => self.expect_strategy(e, Strategy::Rule).map(|_| ()),
            kinds::IMPROVE_PROMPT => self.expect_strategy(e, Strategy::Prompt).map(|_| ()),
            kinds::APPLY => self.apply_classifier(e),
            _ => Ok(()),
        }
    }

    fn expect_strategy(&self, e: &ActionEvent, want: Strategy) -> ApiResult<Strategy> {
        if e.strategy != Some(want) {
            return Err(ApiError::invalid(format!("`{}` belongs to the {want} strategy", e.kind)));
        }
        self.require_active(e)
    }

    fn apply_classifier(&mut self, e: &ActionEvent) -> ApiResult<()> {
        let s = self.require_strategy(e)?;
        let p: ApplyPayload = decode(e)?;
        let status = self.condition(s).status;
        match status {
            ConditionStatus::Pending => {
                return Err(ApiError::conflict(
                    "condition_not_active",
                    format!("the {s} condition has not started"),
                ))
            }
            ConditionStatus::Active if p.target == Target::Test => {
                return Err(ApiError::conflict(
                    "review_only",
                    "the test split can only be viewed after the condition ends",
                ))
            }
            _ => {}
        }
        for v in &p.verdicts {
            self.prompts.cache.insert(&v.prompt_version, &v.comment_id, v.verdict);
        }
        if status == ConditionStatus::Active {
            match s {
                Strategy::Label => {
                    if self.label.learner.model().is_none() {
                        return Err(no_classifier(
                            "the label classifier is not trained yet; label more examples of both classes",
                        ));
                    }
                }
                Strategy::Rule => {
                    let rules = p.rules.ok_or_else(|| ApiError::invalid("apply needs the rule set"))?;
                    if rules.is_empty() {
                        return Err(no_classifier("no rules to apply"));
                    }
                    self.rules.applied = rules;
                }
                Strategy::Prompt => {
                    let prompts = p.prompts.ok_or_else(|| ApiError::invalid("apply needs the prompts"))?;
                    if prompts.is_empty() {
                        return Err(no_classifier("no prompts to apply"));
                    }
                    self.prompts.applied = prompts;
                }
            }
        }
        Ok(())
    }

    /// Snapshots that would be taken if an event arrived at `now_ms`.
    pub fn pending_snapshots(&self, now_ms: u64, ctx: &SessionContext) -> Vec<MetricsSnapshot> {
        let Some(s) = self.active() else { return Vec::new() };
        let cond = self.condition(s);
        ActiveClock::boundaries(cond.active_ms, cond.active_ms_at(now_ms))
            .into_iter()
            .map(|t| self.take_snapshot(s, t, false, ctx))
            .collect()
    }
}
