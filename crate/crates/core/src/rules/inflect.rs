//! Noun and verb surface forms from a bundled lexicon plus regular
//! English suffix rules. No part-of-speech tagging is done: callers ask for
//! noun forms, verb forms, or both.

use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

const LEXICON_JSON: &str = include_str!("../../data/inflections.json");

#[derive(Debug, Deserialize)]
pub struct Lexicon {
    pub version: u32,
    nouns: BTreeMap<String, Vec<String>>,
    verbs: BTreeMap<String, Vec<String>>,
    #[serde(skip)]
    noun_lemmas: BTreeMap<String, String>,
    #[serde(skip)]
    verb_lemmas: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    fn build(mut self) -> Self {
        for (lemma, forms) in &self.nouns {
            for f in forms {
                self.noun_lemmas.insert(f.clone(), lemma.clone());
            }
        }
        for (lemma, forms) in &self.verbs {
            for f in forms {
                // "leaves" and "lay" belong to more than one lemma.
                self.verb_lemmas.entry(f.clone()).or_default().push(lemma.clone());
            }
        }
        self
    }

    pub fn entries(&self) -> usize {
        self.nouns.len() + self.verbs.len()
    }
}

pub fn lexicon() -> &'static Lexicon {
    static LEXICON: OnceLock<Lexicon> = OnceLock::new();
    LEXICON.get_or_init(|| {
        serde_json::from_str::<Lexicon>(LEXICON_JSON)
            .expect("bundled inflection lexicon is valid JSON")
            .build()
    })
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn ends_with_sibilant(w: &str) -> bool {
    ["s", "x", "z", "ch", "sh"].iter().any(|s| w.ends_with(s))
}

fn consonant_y(w: &str) -> bool {
    let chars: Vec<char> = w.chars().collect();
    chars.len() >= 2 && chars[chars.len() - 1] == 'y' && !is_vowel(chars[chars.len() - 2])
}

/// "stop" → "stopp": a single-vowel word ending consonant-vowel-consonant.
fn doubles_final_consonant(w: &str) -> bool {
    let chars: Vec<char> = w.chars().collect();
    let n = chars.len();
    if n < 3 || !chars.iter().all(|c| c.is_ascii_lowercase()) {
        return false;
    }
    let (a, b, c) = (chars[n - 3], chars[n - 2], chars[n - 1]);
    let vowel_groups = chars
        .iter()
        .enumerate()
        .filter(|(i, c)| is_vowel(**c) && (*i == 0 || !is_vowel(chars[i - 1])))
        .count();
    !is_vowel(a) && is_vowel(b) && !is_vowel(c) && !matches!(c, 'w' | 'x' | 'y') && vowel_groups == 1
}

fn add_s(w: &str) -> String {
    if ends_with_sibilant(w) {
        format!("{w}es")
    } else if consonant_y(w) {
        format!("{}ies", &w[..w.len() - 1])
    } else {
        format!("{w}s")
    }
}

fn singular(w: &str) -> Option<String> {
    if w.len() > 4 && w.ends_with("ies") {
        return Some(format!("{}y", &w[..w.len() - 3]));
    }
    for suffix in ["ses", "xes", "zes", "ches", "shes"] {
        if w.len() > suffix.len() + 1 && w.ends_with(suffix) {
            return Some(w[..w.len() - 2].to_owned());
        }
    }
    if w.len() > 3 && w.ends_with('s') && !["ss", "us", "is"].iter().any(|s| w.ends_with(s)) {
        return Some(w[..w.len() - 1].to_owned());
    }
    None
}

fn past(w: &str) -> String {
    if w.ends_with('e') {
        format!("{w}d")
    } else if consonant_y(w) {
        format!("{}ied", &w[..w.len() - 1])
    } else if doubles_final_consonant(w) {
        format!("{w}{}ed", w.chars().last().unwrap_or_default())
    } else {
        format!("{w}ed")
    }
}

fn progressive(w: &str) -> String {
    if let Some(stem) = w.strip_suffix("ie") {
        format!("{stem}ying")
    } else if w.len() > 2 && w.ends_with('e') && !["ee", "ye", "oe"].iter().any(|s| w.ends_with(s)) {
        format!("{}ing", &w[..w.len() - 1])
    } else if doubles_final_consonant(w) {
        format!("{w}{}ing", w.chars().last().unwrap_or_default())
    } else {
        format!("{w}ing")
    }
}

/// Singular and plural forms of a lowercase noun, including the word itself.
pub fn noun_forms(word: &str) -> BTreeSet<String> {
    let lex = lexicon();
    let mut out = BTreeSet::from([word.to_owned()]);
    if let Some(forms) = lex.nouns.get(word) {
        out.extend(forms.iter().cloned());
        return out;
    }
    if let Some(lemma) = lex.noun_lemmas.get(word) {
        out.insert(lemma.clone());
        out.extend(lex.nouns[lemma].iter().cloned());
        return out;
    }
    match singular(word) {
        Some(s) => {
            out.insert(s);
        }
        None => {
            out.insert(add_s(word));
        }
    }
    out
}

/// Present, third-person, progressive and past forms of a lowercase verb.
pub fn verb_forms(word: &str) -> BTreeSet<String> {
    let lex = lexicon();
    let mut out = BTreeSet::from([word.to_owned()]);
    let mut lemmas: Vec<&str> = Vec::new();
    if lex.verbs.contains_key(word) {
        lemmas.push(word);
    }
    if let Some(ls) = lex.verb_lemmas.get(word) {
        lemmas.extend(ls.iter().map(String::as_str));
    }
    if lemmas.is_empty() {
        out.insert(add_s(word));
        out.insert(past(word));
        out.insert(progressive(word));
        return out;
    }
    for lemma in lemmas {
        out.insert(lemma.to_owned());
        out.extend(lex.verbs[lemma].iter().cloned());
    }
    out
}
