//! Phrase-condition rules.
//!
//! A rule removes a text when every include condition matches and its
//! exclude condition (the "exception") does not. A rule set removes a text
//! when any rule matches. Each phrase compiles to a regular expression that
//! also covers the spelling variants enabled by its [`VariantFlags`].

pub mod inflect;
pub mod pattern;

pub use pattern::{compile_phrase, lookalikes, CompiledPhrase};

use crate::llm::{embedded_json_values, strip_code_fence, ChatRequest, LlmProvider};
use crate::types::{Decision, Explanation, Prediction};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::HashSet;
use thiserror::Error;

pub const MAX_INCLUDES: usize = 2;
pub const MAX_SUGGESTIONS: usize = 10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RuleError {
    #[error("phrase is empty")]
    EmptyPhrase,
    #[error("phrase has {chars} characters, the limit is {max}")]
    PhraseTooLong { chars: usize, max: usize },
    #[error("pattern for `{phrase}` is {bytes} bytes, over the 64 KiB limit")]
    PatternTooLarge { phrase: String, bytes: usize },
    #[error("regex build failed: {0}")]
    Regex(String),
    #[error("invalid rule `{name}`: {reason}")]
    InvalidRule { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantFlags {
    pub repeated_letters: bool,
    pub case_insensitive: bool,
    pub char_substitution: bool,
    pub noun_forms: bool,
    pub verb_forms: bool,
}

impl VariantFlags {
    /// What the "detect spelling variants" toggle turns on.
    pub fn all() -> Self {
        VariantFlags {
            repeated_letters: true,
            case_insensitive: true,
            char_substitution: true,
            noun_forms: true,
            verb_forms: true,
        }
    }

    pub fn toggled(on: bool) -> Self {
        if on {
            Self::all()
        } else {
            Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Include,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub phrases: Vec<String>,
    #[serde(default)]
    pub flags: VariantFlags,
}

impl Condition {
    pub fn new<S: Into<String>>(phrases: impl IntoIterator<Item = S>, flags: VariantFlags) -> Self {
        Condition {
            phrases: phrases.into_iter().map(Into::into).collect(),
            flags,
        }
    }
}

/// On-the-wire rule. Conditions without their own `flags` inherit the
/// rule-level `flags`.
#[derive(Debug, Clone, Deserialize)]
struct RuleSpec {
    name: String,
    includes: Vec<ConditionSpec>,
    #[serde(default)]
    exclude: Option<ConditionSpec>,
    #[serde(default)]
    flags: Option<VariantFlags>,
}

#[derive(Debug, Clone, Deserialize)]
struct ConditionSpec {
    phrases: Vec<String>,
    #[serde(default)]
    flags: Option<VariantFlags>,
}

impl ConditionSpec {
    fn resolve(self, default: VariantFlags) -> Condition {
        Condition {
            phrases: self.phrases,
            flags: self.flags.unwrap_or(default),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleSpec")]
pub struct Rule {
    pub name: String,
    pub includes: Vec<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude: Option<Condition>,
}

impl TryFrom<RuleSpec> for Rule {
    type Error = RuleError;

    fn try_from(spec: RuleSpec) -> Result<Self, Self::Error> {
        let default = spec.flags.unwrap_or_default();
        Rule::new(
            spec.name,
            spec.includes.into_iter().map(|c| c.resolve(default)).collect(),
            spec.exclude.map(|c| c.resolve(default)),
        )
    }
}

impl Rule {
    /// Validates shape and normalizes phrases (trimmed, blank ones dropped).
    pub fn new(name: impl Into<String>, includes: Vec<Condition>, exclude: Option<Condition>) -> Result<Self, RuleError> {
        let name = name.into();
        let invalid = |reason: &str| RuleError::InvalidRule {
            name: name.clone(),
            reason: reason.to_owned(),
        };
        if name.trim().is_empty() {
            return Err(invalid("name is empty"));
        }
        if includes.is_empty() {
            return Err(invalid("at least one include condition is required"));
        }
        if includes.len() > MAX_INCLUDES {
            return Err(invalid("at most two include conditions are allowed"));
        }
        let clean = |mut c: Condition| -> Result<Condition, RuleError> {
            c.phrases = c
                .phrases
                .iter()
                .map(|p| p.trim().to_owned())
                .filter(|p| !p.is_empty())
                .collect();
            if c.phrases.is_empty() {
                return Err(invalid("every condition needs at least one phrase"));
            }
            Ok(c)
        };
        let includes = includes.into_iter().map(clean).collect::<Result<Vec<_>, _>>()?;
        let exclude = exclude.map(clean).transpose()?;
        Ok(Rule { name, includes, exclude })
    }

    /// Sets every variant flag on every condition.
    pub fn set_variants(&mut self, on: bool) {
        let flags = VariantFlags::toggled(on);
        for c in self.includes.iter_mut().chain(self.exclude.iter_mut()) {
            c.flags = flags;
        }
    }
}

/// Parses either a bare JSON array of rules or `{"rules": [...]}`.
pub fn parse_rule_set(json: &str) -> Result<Vec<Rule>, serde_json::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        Bare(Vec<Rule>),
        Wrapped { rules: Vec<Rule> },
    }
    Ok(match serde_json::from_str::<Doc>(json)? {
        Doc::Bare(r) | Doc::Wrapped { rules: r } => r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseHit {
    pub phrase: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggeredPhrase {
    pub condition_index: usize,
    pub phrase: String,
    pub start: usize,
    pub end: usize,
    pub matched: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub rule_name: String,
    pub triggered: Vec<TriggeredPhrase>,
}

#[derive(Debug, Clone)]
pub struct CompiledCondition {
    pub kind: ConditionKind,
    pub phrases: Vec<CompiledPhrase>,
}

impl CompiledCondition {
    pub fn compile(cond: &Condition, kind: ConditionKind) -> Result<Self, RuleError> {
        let phrases = cond
            .phrases
            .iter()
            .map(|p| compile_phrase(p, &cond.flags))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompiledCondition { kind, phrases })
    }

    /// Earliest hit in the text; ties go to the phrase listed first.
    pub fn find(&self, text: &str) -> Option<PhraseHit> {
        self.phrases
            .iter()
            .filter_map(|p| p.find(text).map(|(s, e)| (s, e, p)))
            .min_by_key(|(s, _, _)| *s)
            .map(|(start, end, p)| PhraseHit {
                phrase: p.original.clone(),
                start,
                end,
            })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule: Rule,
    pub includes: Vec<CompiledCondition>,
    pub exclude: Option<CompiledCondition>,
}

impl CompiledRule {
    pub fn compile(rule: &Rule) -> Result<Self, RuleError> {
        Ok(CompiledRule {
            rule: rule.clone(),
            includes: rule
                .includes
                .iter()
                .map(|c| CompiledCondition::compile(c, ConditionKind::Include))
                .collect::<Result<_, _>>()?,
            exclude: rule
                .exclude
                .as_ref()
                .map(|c| CompiledCondition::compile(c, ConditionKind::Exclude))
                .transpose()?,
        })
    }

    pub fn match_text(&self, text: &str) -> Option<RuleMatch> {
        if let Some(ex) = &self.exclude {
            if ex.find(text).is_some() {
                return None;
            }
        }
        let mut triggered = Vec::with_capacity(self.includes.len());
        for (i, cond) in self.includes.iter().enumerate() {
            let hit = cond.find(text)?;
            triggered.push(TriggeredPhrase {
                condition_index: i,
                matched: text[hit.start..hit.end].to_owned(),
                phrase: hit.phrase,
                start: hit.start,
                end: hit.end,
            });
        }
        Some(RuleMatch {
            rule_name: self.rule.name.clone(),
            triggered,
        })
    }
}

pub fn match_condition(cond: &Condition, text: &str) -> Result<Option<PhraseHit>, RuleError> {
    Ok(CompiledCondition::compile(cond, ConditionKind::Include)?.find(text))
}

pub fn match_rule(rule: &Rule, text: &str) -> Result<Option<RuleMatch>, RuleError> {
    Ok(CompiledRule::compile(rule)?.match_text(text))
}

/// Immutable compiled rules in creation order; shareable across threads.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    pub fn compile(rules: &[Rule]) -> Result<Self, RuleError> {
        Ok(RuleSet {
            rules: rules.iter().map(CompiledRule::compile).collect::<Result<_, _>>()?,
        })
    }

    pub fn rules(&self) -> &[CompiledRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn classify(&self, text: &str) -> Prediction {
        self.rules
            .iter()
            .find_map(|r| r.match_text(text))
            .map(|m| Prediction {
                decision: Decision::Remove,
                explanation: Explanation::Rule(m),
            })
            .unwrap_or_else(Prediction::keep)
    }
}

pub fn classify(rules: &RuleSet, text: &str) -> Prediction {
    rules.classify(text)
}

pub const SUGGEST_SYSTEM_PROMPT: &str = "You help a user build a word filter for online comments. \
Given the user's phrases, suggest up to 10 other phrases with a similar meaning or that people \
commonly use in their place, including slang and common misspellings. \
RETURN ONLY a JSON array of strings.";

pub fn render_suggest_message(existing: &[String]) -> String {
    let mut msg = String::from("Phrases:\n");
    for p in existing {
        msg.push_str("- ");
        msg.push_str(p);
        msg.push('\n');
    }
    msg
}

/// Inverse of [`render_suggest_message`].
pub fn parse_suggest_message(msg: &str) -> Vec<String> {
    msg.lines()
        .filter_map(|l| l.strip_prefix("- "))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Suggestions {
    pub phrases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn parse_phrase_list(raw: &str) -> Option<Vec<String>> {
    let body = strip_code_fence(raw);
    embedded_json_values(body).find_map(|v| {
        let arr = match v {
            Value::Array(a) => a,
            Value::Object(mut o) => match o.remove("phrases") {
                Some(Value::Array(a)) => a,
                _ => return None,
            },
            _ => return None,
        };
        Some(
            arr.into_iter()
                .filter_map(|x| x.as_str().map(str::to_owned))
                .collect(),
        )
    })
}

/// Asks the provider for phrases similar to `existing`. Never fails: any
/// provider or parse problem yields an empty list plus a warning.
pub fn suggest_similar_phrases(existing: &[String], provider: &dyn LlmProvider) -> Suggestions {
    let existing: Vec<String> = existing
        .iter()
        .map(|p| p.trim().to_owned())
        .filter(|p| !p.is_empty())
        .collect();
    if existing.is_empty() {
        return Suggestions {
            phrases: Vec::new(),
            warning: Some("no phrases to expand".into()),
        };
    }
    let request = ChatRequest::new(SUGGEST_SYSTEM_PROMPT, render_suggest_message(&existing));
    let raw = match provider.complete(&request) {
        Ok(raw) => raw,
        Err(e) => {
            log::warn!("similar-phrase suggestion failed: {e}");
            return Suggestions {
                phrases: Vec::new(),
                warning: Some(e.to_string()),
            };
        }
    };
    let Some(candidates) = parse_phrase_list(&raw) else {
        return Suggestions {
            phrases: Vec::new(),
            warning: Some("could not parse suggestion list".into()),
        };
    };
    let mut seen: HashSet<String> = existing.iter().map(|p| p.to_lowercase()).collect();
    let phrases = candidates
        .into_iter()
        .map(|p| p.trim().to_owned())
        .filter(|p| !p.is_empty() && seen.insert(p.to_lowercase()))
        .take(MAX_SUGGESTIONS)
        .collect();
    Suggestions { phrases, warning: None }
}
