//! Types shared by every classification strategy.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Binary moderation decision. `Remove` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    Keep,
    Remove,
}

impl Decision {
    pub fn is_remove(self) -> bool {
        matches!(self, Decision::Remove)
    }

    pub fn from_remove(remove: bool) -> Self {
        if remove {
            Decision::Remove
        } else {
            Decision::Keep
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Keep => "Keep",
            Decision::Remove => "Remove",
        })
    }
}

/// The three authoring strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Label,
    Rule,
    Prompt,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Label, Strategy::Rule, Strategy::Prompt];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Label => "label",
            Strategy::Rule => "rule",
            Strategy::Prompt => "prompt",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "label" => Ok(Strategy::Label),
            "rule" | "rules" => Ok(Strategy::Rule),
            "prompt" | "prompts" => Ok(Strategy::Prompt),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Strategy-specific reason attached to a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Explanation {
    None,
    Rule(crate::rules::RuleMatch),
    Label { p_remove: f64 },
    Prompt {
        removing_prompts: Vec<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        degraded: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub decision: Decision,
    pub explanation: Explanation,
}

impl Prediction {
    pub fn keep() -> Self {
        Prediction {
            decision: Decision::Keep,
            explanation: Explanation::None,
        }
    }
}
