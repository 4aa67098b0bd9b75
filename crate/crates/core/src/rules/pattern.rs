//! Phrase → generalized regular expression compilation.

use super::inflect;
use super::{RuleError, VariantFlags};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Mutex, OnceLock};

pub const MAX_PHRASE_CHARS: usize = 200;
pub const MAX_PATTERN_BYTES: usize = 64 * 1024;

const LOOKALIKES_JSON: &str = include_str!("../../data/lookalikes.json");

/// Characters that do not count as part of a word. Digits are word
/// characters, so "sk1ll" never yields a hit for "kill".
const BOUNDARY: &str = r"[^\p{L}\p{N}\p{M}]";

#[derive(Debug, Deserialize)]
pub struct LookalikeTable {
    pub version: u32,
    letters: BTreeMap<char, Vec<char>>,
}

impl LookalikeTable {
    /// Look-alikes for a letter (case-folded).
    pub fn for_letter(&self, c: char) -> &[char] {
        let lower = c.to_lowercase().next().unwrap_or(c);
        self.letters.get(&lower).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Letters a symbol can stand in for.
    pub fn letters_for_symbol(&self, s: char) -> impl Iterator<Item = char> + '_ {
        self.letters
            .iter()
            .filter(move |(_, subs)| subs.contains(&s))
            .map(|(l, _)| *l)
    }

    pub fn letters(&self) -> impl Iterator<Item = (char, &[char])> + '_ {
        self.letters.iter().map(|(l, s)| (*l, s.as_slice()))
    }
}

pub fn lookalikes() -> &'static LookalikeTable {
    static TABLE: OnceLock<LookalikeTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        serde_json::from_str(LOOKALIKES_JSON).expect("bundled look-alike table is valid JSON")
    })
}

/// The set of characters a single phrase character may match (before case
/// folding), and whether it may repeat.
pub fn char_alternatives(c: char, flags: &VariantFlags) -> (BTreeSet<char>, bool) {
    let table = lookalikes();
    let mut set = BTreeSet::from([c]);
    if flags.char_substitution {
        if c.is_alphabetic() {
            set.extend(table.for_letter(c).iter().copied());
        } else {
            set.extend(table.letters_for_symbol(c));
        }
    }
    let letterish = set.iter().any(|ch| ch.is_alphabetic());
    (set, flags.repeated_letters && letterish)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompiledPhrase {
    pub original: String,
    pub pattern: String,
    pub expansions: Vec<String>,
    #[serde(skip)]
    regex: Option<Regex>,
}

impl PartialEq for CompiledPhrase {
    fn eq(&self, other: &Self) -> bool {
        self.original == other.original && self.pattern == other.pattern && self.expansions == other.expansions
    }
}

impl CompiledPhrase {
    pub fn regex(&self) -> &Regex {
        self.regex.as_ref().expect("compiled phrase carries its regex")
    }

    /// First match as a byte span over `text`.
    pub fn find(&self, text: &str) -> Option<(usize, usize)> {
        self.regex()
            .captures(text)
            .and_then(|c| c.get(1))
            .map(|m| (m.start(), m.end()))
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex().is_match(text)
    }
}

fn apply_case_shape(template: &str, word: &str) -> String {
    let mut chars = template.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let letters: Vec<char> = template.chars().filter(|c| c.is_alphabetic()).collect();
    let all_upper = letters.len() > 1 && letters.iter().all(|c| c.is_uppercase());
    if all_upper {
        word.to_uppercase()
    } else if first_upper {
        let mut w = word.chars();
        match w.next() {
            Some(f) => f.to_uppercase().chain(w).collect(),
            None => String::new(),
        }
    } else {
        word.to_owned()
    }
}

/// All surface forms covered by the phrase: the phrase itself plus
/// inflections of its final word.
pub fn expansions(phrase: &str, flags: &VariantFlags) -> Vec<String> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    let normalized = words.join(" ");
    let mut forms = BTreeSet::new();
    if let Some((last, head)) = words.split_last() {
        if flags.noun_forms || flags.verb_forms {
            let lower = last.to_lowercase();
            let mut heads = BTreeSet::new();
            if flags.noun_forms {
                heads.extend(inflect::noun_forms(&lower));
            }
            if flags.verb_forms {
                heads.extend(inflect::verb_forms(&lower));
            }
            let prefix = head.join(" ");
            for h in heads {
                let shaped = apply_case_shape(last, &h);
                forms.insert(if prefix.is_empty() {
                    shaped
                } else {
                    format!("{prefix} {shaped}")
                });
            }
        }
    }
    forms.remove(&normalized);
    let mut out = vec![normalized];
    out.extend(forms);
    out
}

fn char_atom(c: char, flags: &VariantFlags) -> String {
    let (set, repeat) = char_alternatives(c, flags);
    let mut atom = if set.len() == 1 {
        regex::escape(&c.to_string())
    } else {
        let body: String = set.iter().map(|ch| regex::escape(&ch.to_string())).collect();
        format!("[{body}]")
    };
    if repeat {
        atom.push('+');
    }
    atom
}

fn surface_pattern(form: &str, flags: &VariantFlags) -> String {
    form.split(' ')
        .map(|word| word.chars().map(|c| char_atom(c, flags)).collect::<String>())
        .collect::<Vec<_>>()
        .join(r"\s+")
}

/// Compiled phrases are memoized; Unicode-class regexes cost about a
/// millisecond each to build and rule sets are recompiled on every apply.
const MEMO_CAPACITY: usize = 4096;

fn memo() -> &'static Mutex<HashMap<(String, VariantFlags), CompiledPhrase>> {
    static MEMO: OnceLock<Mutex<HashMap<(String, VariantFlags), CompiledPhrase>>> = OnceLock::new();
    MEMO.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn compile_phrase(phrase: &str, flags: &VariantFlags) -> Result<CompiledPhrase, RuleError> {
    let key = (phrase.to_owned(), *flags);
    if let Some(hit) = memo().lock().ok().and_then(|m| m.get(&key).cloned()) {
        return Ok(hit);
    }
    let compiled = build_phrase(phrase, flags)?;
    if let Ok(mut m) = memo().lock() {
        if m.len() >= MEMO_CAPACITY {
            m.clear();
        }
        m.insert(key, compiled.clone());
    }
    Ok(compiled)
}

fn build_phrase(phrase: &str, flags: &VariantFlags) -> Result<CompiledPhrase, RuleError> {
    let trimmed = phrase.trim();
    if trimmed.is_empty() {
        return Err(RuleError::EmptyPhrase);
    }
    let n = trimmed.chars().count();
    if n > MAX_PHRASE_CHARS {
        return Err(RuleError::PhraseTooLong { chars: n, max: MAX_PHRASE_CHARS });
    }
    let forms = expansions(trimmed, flags);
    let mut ordered = forms.clone();
    ordered.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
    let alternation = ordered
        .iter()
        .map(|f| surface_pattern(f, flags))
        .collect::<Vec<_>>()
        .join("|");
    let core = if flags.case_insensitive {
        format!("(?i:{alternation})")
    } else {
        format!("(?:{alternation})")
    };
    let pattern = format!("(?:^|{BOUNDARY})({core})(?:{BOUNDARY}|$)");
    if pattern.len() > MAX_PATTERN_BYTES {
        return Err(RuleError::PatternTooLarge {
            phrase: trimmed.to_owned(),
            bytes: pattern.len(),
        });
    }
    let regex = RegexBuilder::new(&pattern)
        .build()
        .map_err(|e| RuleError::Regex(e.to_string()))?;
    Ok(CompiledPhrase {
        original: forms[0].clone(),
        pattern,
        expansions: forms,
        regex: Some(regex),
    })
}
