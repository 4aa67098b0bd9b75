//! Deterministic keyword-table provider for tests and offline runs.

use super::batch::{parse_user_message, render_system_prompt};
use super::IMPROVE_SYSTEM_PROMPT;
use crate::llm::{ChatRequest, LlmProvider, ProviderError};
use crate::rules::{parse_suggest_message, SUGGEST_SYSTEM_PROMPT};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    #[default]
    Normal,
    /// Replies with text containing no JSON.
    Garbage,
    /// Omits the last index of every classification batch.
    DropLast,
    Unreachable,
    Timeout,
}

/// `rules` maps a prompt id, or a substring of a prompt description, to the
/// keywords that make a comment count as Remove. `synonyms` and `rephrase`
/// answer similar-phrase and improve requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    pub rules: BTreeMap<String, Vec<String>>,
    pub synonyms: BTreeMap<String, Vec<String>>,
    pub rephrase: BTreeMap<String, String>,
    pub mode: MockMode,
}

pub struct MockProvider {
    spec: MockSpec,
    calls: Mutex<Vec<ChatRequest>>,
}

pub fn mock_provider(spec: MockSpec) -> MockProvider {
    MockProvider::new(spec)
}

impl MockProvider {
    pub fn new(spec: MockSpec) -> Self {
        MockProvider {
            spec,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn spec(&self) -> &MockSpec {
        &self.spec
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().expect("call log poisoned").clear();
    }

    fn keywords_for(&self, tag: Option<&str>, description: &str) -> &[String] {
        let desc = description.to_lowercase();
        self.spec
            .rules
            .iter()
            .find(|(key, _)| tag == Some(key.as_str()) || desc.contains(&key.to_lowercase()))
            .map(|(_, kws)| kws.as_slice())
            .unwrap_or(&[])
    }

    fn classify(&self, request: &ChatRequest) -> String {
        let batch = parse_user_message(&request.user);
        let keywords = self.keywords_for(request.tag.as_deref(), &batch.description);
        let mut data = batch.data;
        if self.spec.mode == MockMode::DropLast {
            data.pop();
        }
        let results: Vec<[usize; 2]> = data
            .iter()
            .map(|(i, text)| {
                let lower = text.to_lowercase();
                let hit = keywords.iter().any(|k| lower.contains(&k.to_lowercase()));
                [*i, usize::from(hit)]
            })
            .collect();
        json!({ "results": results }).to_string()
    }

    fn suggest(&self, request: &ChatRequest) -> String {
        let mut out: Vec<&String> = Vec::new();
        for p in parse_suggest_message(&request.user) {
            if let Some(syns) = self.spec.synonyms.get(&p) {
                out.extend(syns);
            }
        }
        json!(out).to_string()
    }

    fn improve(&self, request: &ChatRequest) -> String {
        self.spec
            .rephrase
            .get(&request.user)
            .cloned()
            .unwrap_or_else(|| request.user.clone())
    }
}

impl LlmProvider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.lock().expect("call log poisoned").push(request.clone());
        match self.spec.mode {
            MockMode::Unreachable => return Err(ProviderError::Unreachable("mock offline".into())),
            MockMode::Timeout => return Err(ProviderError::Timeout),
            MockMode::Garbage => return Ok("lorem ipsum, no verdicts here".into()),
            MockMode::Normal | MockMode::DropLast => {}
        }
        Ok(if request.system == render_system_prompt() {
            self.classify(request)
        } else if request.system == SUGGEST_SYSTEM_PROMPT {
            self.suggest(request)
        } else if request.system == IMPROVE_SYSTEM_PROMPT {
            self.improve(request)
        } else {
            String::new()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{render_user_message, Prompt};

    #[test]
    fn flags_keywords() {
        let spec = MockSpec {
            rules: BTreeMap::from([("insults".to_owned(), vec!["idiot".to_owned()])]),
            ..MockSpec::default()
        };
        let mock = mock_provider(spec);
        let prompt = Prompt::new("insults", "anything");
        let req = ChatRequest::new(render_system_prompt(), render_user_message(&prompt, &["you idiot", "nice"]))
            .tagged("insults");
        assert_eq!(mock.complete(&req).unwrap(), r#"{"results":[[1,1],[2,0]]}"#);
        // description substring also selects the rule
        let prompt = Prompt::new("p9", "Remove insults please");
        let req = ChatRequest::new(render_system_prompt(), render_user_message(&prompt, &["IDIOT!"]));
        assert_eq!(mock.complete(&req).unwrap(), r#"{"results":[[1,1]]}"#);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn unmatched_prompt_keeps_everything() {
        let mock = mock_provider(MockSpec::default());
        let req = ChatRequest::new(render_system_prompt(), render_user_message(&Prompt::new("x", "y"), &["a", "b"]));
        assert_eq!(mock.complete(&req).unwrap(), r#"{"results":[[1,0],[2,0]]}"#);
    }

    #[test]
    fn fault_modes() {
        let req = ChatRequest::new(render_system_prompt(), "DATA <1> <a>\n");
        let garbage = mock_provider(MockSpec { mode: MockMode::Garbage, ..MockSpec::default() });
        assert!(!garbage.complete(&req).unwrap().contains('{'));
        let down = mock_provider(MockSpec { mode: MockMode::Unreachable, ..MockSpec::default() });
        assert!(matches!(down.complete(&req), Err(ProviderError::Unreachable(_))));
    }
}
