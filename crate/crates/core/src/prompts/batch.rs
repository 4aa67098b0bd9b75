//! Wire format of one classification request: the rubric, few-shot
//! examples and `DATA <i> <text>` lines, plus the JSON `results` reply.

use super::Prompt;
use crate::llm::{embedded_json_values, strip_code_fence};
use crate::types::Decision;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use thiserror::Error;

const SYSTEM_PROMPT: &str = include_str!("../../assets/system_prompt.txt");

/// SHA-256 of the bundled system prompt asset.
pub const SYSTEM_PROMPT_SHA256: &str =
    "f8a9ab4dec3cebc5121ebac96ea8cee24c3fa5ab4895636cd5046b947a605059";

pub const RUBRIC_PREFIX: &str = "Rubric: ";
pub const POSITIVE_HEADER: &str = "Examples that SHOULD be removed:";
pub const NEGATIVE_HEADER: &str = "Examples that should NOT be removed:";

/// Share of expected indices that may be missing from a reply before the
/// whole batch counts as unparseable.
pub const MAX_MISSING_FRACTION: f64 = 0.2;

pub fn render_system_prompt() -> &'static str {
    SYSTEM_PROMPT
}

/// Escapes `\`, `<`, `>` and line breaks so each comment stays on one line
/// and its closing `>` is unambiguous.
pub fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '<' => out.push_str("\\<"),
            '>' => out.push_str("\\>"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

pub fn unescape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn render_user_message<S: AsRef<str>>(prompt: &Prompt, comments: &[S]) -> String {
    let mut msg = format!("{RUBRIC_PREFIX}{}\n\n", prompt.description());
    for (header, examples) in [
        (POSITIVE_HEADER, prompt.positive_examples()),
        (NEGATIVE_HEADER, prompt.negative_examples()),
    ] {
        if examples.is_empty() {
            continue;
        }
        msg.push_str(header);
        msg.push('\n');
        for ex in examples {
            msg.push_str(&serde_json::to_string(ex).unwrap_or_default());
            msg.push('\n');
        }
        msg.push('\n');
    }
    for (i, c) in comments.iter().enumerate() {
        msg.push_str(&format!("DATA <{}> <{}>\n", i + 1, escape_text(c.as_ref())));
    }
    msg
}

/// A user message decoded back into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedBatch {
    pub description: String,
    pub data: Vec<(usize, String)>,
}

fn parse_data_line(line: &str) -> Option<(usize, String)> {
    let rest = line.strip_prefix("DATA <")?;
    let (idx, rest) = rest.split_once("> <")?;
    let idx = idx.parse().ok()?;
    let body = rest.strip_suffix('>')?;
    Some((idx, unescape_text(body)))
}

pub fn parse_user_message(msg: &str) -> RenderedBatch {
    let lines: Vec<&str> = msg.lines().collect();
    let mut data = Vec::new();
    let mut first_data = lines.len();
    for (i, line) in lines.iter().enumerate().rev() {
        match parse_data_line(line) {
            Some(d) => {
                data.push(d);
                first_data = i;
            }
            None => break,
        }
    }
    data.reverse();
    let head = lines[..first_data].join("\n");
    let head = head.strip_prefix(RUBRIC_PREFIX).unwrap_or(&head);
    let end = [
        format!("\n\n{POSITIVE_HEADER}\n"),
        format!("\n\n{NEGATIVE_HEADER}\n"),
    ]
    .iter()
    .filter_map(|marker| head.find(marker.as_str()))
    .min()
    .unwrap_or(head.len());
    RenderedBatch {
        description: head[..end].trim_end_matches('\n').to_owned(),
        data,
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("could not parse batch response: {reason}")]
pub struct BatchParseError {
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchVerdicts {
    pub verdicts: BTreeMap<usize, Decision>,
    pub missing: Vec<usize>,
    pub warnings: Vec<String>,
}

fn as_index(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_prediction(v: &Value) -> Option<Decision> {
    match v {
        Value::Bool(b) => Some(Decision::from_remove(*b)),
        Value::Number(n) => match n.as_f64()? {
            1.0 => Some(Decision::Remove),
            0.0 => Some(Decision::Keep),
            _ => None,
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "1" | "true" => Some(Decision::Remove),
            "0" | "false" => Some(Decision::Keep),
            _ => None,
        },
        _ => None,
    }
}

fn results_array(raw: &str) -> Option<Vec<Value>> {
    let find = |text: &str| {
        embedded_json_values(text).find_map(|v| match v {
            Value::Object(mut o) => match o.remove("results") {
                Some(Value::Array(a)) => Some(a),
                _ => None,
            },
            _ => None,
        })
    };
    let body = strip_code_fence(raw);
    // Models sometimes answer with the literal tuple syntax from the
    // instructions.
    find(body).or_else(|| find(&body.replace('(', "[").replace(')', "]")))
}

/// Extracts `index → decision` pairs for a batch of `expected_n` texts.
pub fn parse_response(raw: &str, expected_n: usize) -> Result<BatchVerdicts, BatchParseError> {
    let fail = |reason: String| BatchParseError { reason, raw: raw.to_owned() };
    let items = results_array(raw).ok_or_else(|| fail("no JSON object with a `results` array".into()))?;
    let mut out = BatchVerdicts::default();
    for item in &items {
        let pair = match item {
            Value::Array(a) if a.len() == 2 => as_index(&a[0]).zip(as_prediction(&a[1])),
            Value::Object(o) => o
                .get("index")
                .and_then(as_index)
                .zip(o.get("prediction").and_then(as_prediction)),
            _ => None,
        };
        match pair {
            Some((idx, d)) if idx >= 1 && (idx as usize) <= expected_n => {
                out.verdicts.insert(idx as usize, d);
            }
            Some((idx, _)) => out.warnings.push(format!("dropped out-of-range index {idx}")),
            None => out.warnings.push(format!("dropped malformed entry {item}")),
        }
    }
    out.missing = (1..=expected_n).filter(|i| !out.verdicts.contains_key(i)).collect();
    if out.missing.len() as f64 > MAX_MISSING_FRACTION * expected_n as f64 {
        return Err(fail(format!(
            "{} of {expected_n} indices missing",
            out.missing.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn prompt() -> Prompt {
        Prompt::new("p1", "Remove insults")
    }

    #[test]
    fn system_prompt_text() {
        let s = render_system_prompt();
        assert!(s.contains("give a 1 (True) or 0 (False) prediction"));
        assert!(s.contains(r#"{"results": [(index, prediction), ...]}"#));
        assert_eq!(hex::encode(Sha256::digest(s.as_bytes())), SYSTEM_PROMPT_SHA256);
    }

    #[test]
    fn data_lines() {
        let msg = render_user_message(&prompt(), &["hi"]);
        assert!(msg.lines().any(|l| l == "DATA <1> <hi>"));
        let msg = render_user_message(&prompt(), &["first", "second"]);
        let data: Vec<&str> = msg.lines().filter(|l| l.starts_with("DATA")).collect();
        assert_eq!(data, vec!["DATA <1> <first>", "DATA <2> <second>"]);
        let msg = render_user_message(&prompt(), &["a<b"]);
        assert!(msg.contains(r"DATA <1> <a\<b>"));
    }

    #[test]
    fn golden_message() {
        let mut p = Prompt::new("p", "Remove insults");
        p.set_examples(vec!["you idiot".into()], vec!["nice \"point\"".into()]);
        let msg = render_user_message(&p, &["x", "y>z"]);
        assert_eq!(
            msg,
            "Rubric: Remove insults\n\n\
             Examples that SHOULD be removed:\n\"you idiot\"\n\n\
             Examples that should NOT be removed:\n\"nice \\\"point\\\"\"\n\n\
             DATA <1> <x>\nDATA <2> <y\\>z>\n"
        );
    }

    #[test]
    fn message_round_trip() {
        let mut p = Prompt::new("p", "multi\nline description");
        p.set_examples(vec!["pos".into()], vec![]);
        let texts = ["plain", "<<>>", "back\\slash>", "new\nline", "DATA <9> <x>", ""];
        let parsed = parse_user_message(&render_user_message(&p, &texts));
        assert_eq!(parsed.description, "multi\nline description");
        let expected: Vec<(usize, String)> = texts.iter().enumerate().map(|(i, t)| (i + 1, t.to_string())).collect();
        assert_eq!(parsed.data, expected);
    }

    #[test]
    fn parse_plain_and_fenced() {
        let want = BTreeMap::from([(1, Decision::Remove), (2, Decision::Keep)]);
        assert_eq!(parse_response(r#"{"results": [[1,1],[2,0]]}"#, 2).unwrap().verdicts, want);
        let fenced = "```json\n{\"results\": [[1, 1], [2, 0]]}\n```";
        assert_eq!(parse_response(fenced, 2).unwrap().verdicts, want);
        let prose = "Here you go: {{\"results\": [(1, 1), (2, 0)]}} hope it helps";
        assert_eq!(parse_response(prose, 2).unwrap().verdicts, want);
        let objs = r#"{"results": [{"index": 1, "prediction": true}, {"index": "2", "prediction": "0"}]}"#;
        assert_eq!(parse_response(objs, 2).unwrap().verdicts, want);
    }

    #[test]
    fn out_of_range_dropped() {
        let v = parse_response(r#"{"results": [[1,1],[2,0],[7,1],[0,1]]}"#, 2).unwrap();
        assert_eq!(v.verdicts.len(), 2);
        assert_eq!(v.warnings.len(), 2);
    }

    #[test]
    fn too_many_missing() {
        let err = parse_response(r#"{"results": [[1,1]]}"#, 10).unwrap_err();
        assert!(err.reason.contains("9 of 10"));
        assert_eq!(err.raw, r#"{"results": [[1,1]]}"#);
        // two of ten missing is exactly the limit
        let ok = parse_response(r#"{"results": [[1,1],[2,1],[3,1],[4,1],[5,1],[6,1],[7,1],[8,1]]}"#, 10).unwrap();
        assert_eq!(ok.missing, vec![9, 10]);
        assert!(parse_response("I cannot help with that", 3).is_err());
    }
}
