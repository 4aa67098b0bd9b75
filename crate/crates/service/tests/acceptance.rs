//! Acceptance suite. Each criterion runs under a time budget and reports one
//! PASS/FAIL line; the test fails if any criterion does.

mod common;

use common::*;
use curate_core::corpus::{make_split, run_pipeline, CorpusConfig};
use curate_core::evaluation::{paired_compare, report, score, write_report, ConfusionCounts, METRICS};
use curate_core::label::{train, uncertainty_sample};
use curate_core::prompts::{
    evaluate, mock_provider, parse_user_message, render_system_prompt, render_user_message, BatchConfig, MockSpec,
    Prompt, VerdictCache,
};
use curate_core::rules::{lookalikes, match_rule, Condition, Rule, RuleSet, VariantFlags};
use curate_core::{Decision, Explanation, Strategy};
use curate_service::store::read_snapshots;
use curate_service::ManualClock;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

const ALPHABET: [&str; 6] = ["cool", "apple", "find", "run", "dog", "nice"];

// ---------------------------------------------------------------- variants

fn collapse_runs(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if !out.ends_with(c) {
            out.push(c);
        }
    }
    out
}

fn in_context(rng: &mut ChaCha8Rng, word: &str) -> String {
    let pre = ["well", "so", "that", "a"].choose(rng).unwrap();
    let post = ["here", "there", "!", "today"].choose(rng).unwrap();
    format!("{pre} {word} {post}")
}

/// A random word that is not a surface form of `seed` under any class.
fn non_matching(rng: &mut ChaCha8Rng, seed: &str, forms: &BTreeSet<String>) -> String {
    let table = lookalikes();
    loop {
        let len = rng.random_range(3..9);
        let w: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        let same_shape = w.chars().count() == seed.chars().count()
            && w.chars().zip(seed.chars()).all(|(a, b)| a == b || table.for_letter(b).contains(&a));
        if collapse_runs(&w) != collapse_runs(seed) && !forms.contains(&w) && !same_shape {
            return w;
        }
    }
}

fn only(class: &str) -> VariantFlags {
    let mut f = VariantFlags::default();
    match class {
        "repeated_letters" => f.repeated_letters = true,
        "case_insensitive" => f.case_insensitive = true,
        "char_substitution" => f.char_substitution = true,
        "noun_forms" => f.noun_forms = true,
        "verb_forms" => f.verb_forms = true,
        _ => unreachable!(),
    }
    f
}

fn phrase_matches(phrase: &str, flags: VariantFlags, text: &str) -> bool {
    let rule = Rule::new("r", vec![Condition::new([phrase], flags)], None).unwrap();
    match_rule(&rule, text).unwrap().is_some()
}

fn rule_variant_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let table = lookalikes();
    let spelling_seeds = ["cool", "idiot", "loser", "stupid"];
    // forms written out by hand, independent of the inflection tables
    let nouns: [(&str, &[&str]); 5] = [
        ("apple", &["apple", "apples"]),
        ("dog", &["dog", "dogs"]),
        ("box", &["box", "boxes"]),
        ("city", &["city", "cities"]),
        ("child", &["child", "children"]),
    ];
    let verbs: [(&str, &[&str]); 5] = [
        ("find", &["find", "finds", "finding", "found"]),
        ("run", &["run", "runs", "running", "ran"]),
        ("walk", &["walk", "walks", "walking", "walked"]),
        ("eat", &["eat", "eats", "eating", "ate", "eaten"]),
        ("go", &["go", "goes", "going", "went", "gone"]),
    ];
    let mut checked = 0;
    for class in ["repeated_letters", "case_insensitive", "char_substitution", "noun_forms", "verb_forms"] {
        let flags = only(class);
        let seeds: Vec<(&str, Vec<String>)> = match class {
            "noun_forms" => nouns.iter().map(|(s, f)| (*s, f.iter().map(|x| x.to_string()).collect())).collect(),
            "verb_forms" => verbs.iter().map(|(s, f)| (*s, f.iter().map(|x| x.to_string()).collect())).collect(),
            _ => spelling_seeds.iter().map(|s| (*s, vec![s.to_string()])).collect(),
        };
        for (seed, forms) in &seeds {
            let form_set: BTreeSet<String> = forms.iter().cloned().collect();
            for _ in 0..100 {
                let variant: String = match class {
                    "repeated_letters" => seed
                        .chars()
                        .map(|c| c.to_string().repeat(rng.random_range(1..5)))
                        .collect(),
                    "case_insensitive" => seed
                        .chars()
                        .map(|c| if rng.random_bool(0.5) { c.to_ascii_uppercase() } else { c })
                        .collect(),
                    "char_substitution" => seed
                        .chars()
                        .map(|c| {
                            let alts = table.for_letter(c);
                            if alts.is_empty() || rng.random_bool(0.3) {
                                c
                            } else {
                                *alts.choose(&mut rng).unwrap()
                            }
                        })
                        .collect(),
                    _ => forms.choose(&mut rng).unwrap().clone(),
                };
                let text = in_context(&mut rng, &variant);
                ensure!(phrase_matches(seed, flags, &text), "{class}: `{seed}` missed `{text}`");
                let other = non_matching(&mut rng, seed, &form_set);
                let text = in_context(&mut rng, &other);
                ensure!(!phrase_matches(seed, flags, &text), "{class}: `{seed}` wrongly matched `{text}`");
                checked += 2;
            }
        }
    }
    let literal = [
        ("repeated_letters", "cool", "coooool"),
        ("char_substitution", "cool", "co0l"),
        ("case_insensitive", "cool", "Cool"),
        ("noun_forms", "apple", "apples"),
        ("verb_forms", "find", "found"),
    ];
    for (class, phrase, text) in literal {
        ensure!(phrase_matches(phrase, only(class), text), "{class}: `{phrase}` missed `{text}`");
        ensure!(
            !phrase_matches(phrase, VariantFlags::default(), text),
            "`{phrase}` matched `{text}` with variants off"
        );
    }
    Ok(format!("{checked} generated cases, 5 literal examples"))
}

// ---------------------------------------------------------- rule semantics

fn random_phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..3);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_condition(rng: &mut ChaCha8Rng, flags: VariantFlags) -> Condition {
    let n = rng.random_range(1..3);
    Condition::new((0..n).map(|_| random_phrase(rng)), flags)
}

fn random_rules(rng: &mut ChaCha8Rng) -> Vec<Rule> {
    (0..rng.random_range(1..4))
        .map(|i| {
            let flags = VariantFlags {
                case_insensitive: rng.random_bool(0.5),
                ..VariantFlags::default()
            };
            let includes = (0..rng.random_range(1..3)).map(|_| random_condition(rng, flags)).collect();
            let exclude = rng.random_bool(0.4).then(|| random_condition(rng, flags));
            Rule::new(format!("r{i}"), includes, exclude).unwrap()
        })
        .collect()
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(0..10);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                return ["!", ",", "?"].choose(rng).unwrap().to_string();
            }
            let w = *ALPHABET.choose(rng).unwrap();
            match rng.random_range(0..4) {
                0 => w.to_uppercase(),
                1 => format!("{}{}", w[..1].to_uppercase(), &w[1..]),
                _ => w.to_owned(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Brute force: a phrase matches when its words occur as consecutive tokens.
fn naive_condition(c: &Condition, text: &str) -> bool {
    let norm = |s: &str| if c.flags.case_insensitive { s.to_lowercase() } else { s.to_owned() };
    let tokens: Vec<String> = text.split(' ').filter(|t| !t.is_empty()).map(norm).collect();
    c.phrases.iter().any(|p| {
        let words: Vec<String> = p.split(' ').map(norm).collect();
        tokens.windows(words.len()).any(|w| w == words.as_slice())
    })
}

fn naive_rule(r: &Rule, text: &str) -> bool {
    r.includes.iter().all(|c| naive_condition(c, text)) && !r.exclude.as_ref().is_some_and(|c| naive_condition(c, text))
}

fn naive_classify(rules: &[Rule], text: &str) -> Option<String> {
    rules.iter().find(|r| naive_rule(r, text)).map(|r| r.name.clone())
}

fn engine_classify(rules: &[Rule], text: &str) -> Option<String> {
    let p = RuleSet::compile(rules).unwrap().classify(text);
    match (p.decision, p.explanation) {
        (Decision::Remove, Explanation::Rule(m)) => Some(m.rule_name),
        _ => None,
    }
}

fn rule_semantics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut removed = 0;
    for case in 0..500 {
        let rules = random_rules(&mut rng);
        let text = random_text(&mut rng);
        let want = naive_classify(&rules, &text);
        let got = engine_classify(&rules, &text);
        ensure!(got == want, "case {case}: `{text}` engine {got:?} oracle {want:?} rules {rules:?}");
        removed += usize::from(got.is_some());
    }
    for case in 0..200 {
        let mut rules = random_rules(&mut rng);
        let text = random_text(&mut rng);
        let i = rng.random_range(0..rules.len());
        let before_set = engine_classify(&rules, &text).is_some();
        let before_rule = match_rule(&rules[i], &text).unwrap().is_some();
        let phrase = random_phrase(&mut rng);
        if case % 2 == 0 {
            let j = rng.random_range(0..rules[i].includes.len());
            rules[i].includes[j].phrases.push(phrase);
            ensure!(!before_set || engine_classify(&rules, &text).is_some(), "include mutation {case} lost a match");
        } else {
            let flags = rules[i].includes[0].flags;
            rules[i].exclude.get_or_insert_with(|| Condition::new(Vec::<String>::new(), flags)).phrases.push(phrase);
            let after_rule = match_rule(&rules[i], &text).unwrap().is_some();
            ensure!(before_rule || !after_rule, "exclude mutation {case} created a match");
        }
    }
    Ok(format!("500 oracle cases ({removed} removals), 200 mutations"))
}

// ------------------------------------------------------------- naive bayes

/// Closed-form Gaussian NB posterior written as a log-odds.
fn oracle_proba(rows: &[(Vec<f64>, bool)], x: &[f64]) -> f64 {
    let dim = x.len();
    let n = rows.len() as f64;
    let stats = |sel: &dyn Fn(bool) -> bool| {
        let members: Vec<&Vec<f64>> = rows.iter().filter(|(_, y)| sel(*y)).map(|(v, _)| v).collect();
        let k = members.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|v| v[d]).sum::<f64>() / k).collect();
        let var: Vec<f64> = (0..dim)
            .map(|d| members.iter().map(|v| (v[d] - mean[d]).powi(2)).sum::<f64>() / k)
            .collect();
        (k, mean, var)
    };
    let (_, _, all_var) = stats(&|_| true);
    let eps = (1e-9 * all_var.iter().cloned().fold(0.0, f64::max)).max(1e-12);
    let (k1, m1, v1) = stats(&|y| y);
    let (k0, m0, v0) = stats(&|y| !y);
    let mut logit = (k1 / n).ln() - (k0 / n).ln();
    for d in 0..dim {
        let (a, b) = (v1[d] + eps, v0[d] + eps);
        logit += -0.5 * a.ln() - (x[d] - m1[d]).powi(2) / (2.0 * a) + 0.5 * b.ln() + (x[d] - m0[d]).powi(2) / (2.0 * b);
    }
    1.0 / (1.0 + (-logit).exp())
}

fn naive_bayes_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let mut datasets = 0;
    while datasets < 100 {
        let n = rng.random_range(2..=20);
        let rows: Vec<(Vec<f64>, bool)> = (0..n)
            .map(|_| (vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], rng.random_bool(0.5)))
            .collect();
        if rows.iter().all(|r| r.1) || rows.iter().all(|r| !r.1) {
            continue;
        }
        datasets += 1;
        let ex: Vec<(&[f64], Decision)> = rows.iter().map(|(v, y)| (v.as_slice(), Decision::from_remove(*y))).collect();
        let model = train(&ex).map_err(|e| e.to_string())?;
        let doubled: Vec<(&[f64], Decision)> = ex.iter().chain(ex.iter()).copied().collect();
        let model2 = train(&doubled).map_err(|e| e.to_string())?;
        let queries: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
            .collect();
        for q in &queries {
            let p = model.predict_proba(q).unwrap();
            let diff = (p - oracle_proba(&rows, q)).abs();
            worst = worst.max(diff);
            ensure!(diff <= 1e-6, "dataset {datasets}: {p} vs oracle, diff {diff}");
            let d2 = (model2.predict_proba(q).unwrap() - p).abs();
            ensure!(d2 <= 1e-9, "dataset {datasets}: duplication moved p by {d2}");
        }
        let pool: Vec<(String, &[f64])> = queries.iter().enumerate().map(|(i, q)| (format!("q{i}"), q.as_slice())).collect();
        let k = rng.random_range(1..=pool.len());
        let chosen: BTreeSet<String> = uncertainty_sample(&model, &pool, k).unwrap().comment_ids.into_iter().collect();
        ensure!(chosen.len() == k, "sampled {} of {k}", chosen.len());
        let dist = |q: &[f64]| (oracle_proba(&rows, q) - 0.5).abs();
        let worst_in = pool.iter().filter(|(id, _)| chosen.contains(id)).map(|(_, q)| dist(q)).fold(0.0, f64::max);
        let best_out = pool
            .iter()
            .filter(|(id, _)| !chosen.contains(id))
            .map(|(_, q)| dist(q))
            .fold(f64::INFINITY, f64::min);
        ensure!(worst_in <= best_out + 1e-9, "uncertainty sample is not the argmin set");
    }
    Ok(format!("100 datasets, max |p - oracle| = {worst:.2e}"))
}

// ---------------------------------------------------------- prompt protocol

fn random_comment(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 12] = ["<b>", "</data>", "<data>", "a < b", "x > y", "&amp;", "\"q\"", "\\n", "\n", "ok", " ", "日本"];
    let n = rng.random_range(1..6);
    (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn prompt_protocol() -> Outcome {
    let asset = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/assets/system_prompt.txt"))
        .map_err(|e| e.to_string())?;
    ensure!(render_system_prompt() == asset, "system prompt differs from the template asset");

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for i in 0..50 {
        let mut prompt = Prompt::new("p", format!("Remove <rude> comments #{i}"));
        prompt.set_examples(vec![random_comment(&mut rng)], vec![random_comment(&mut rng)]);
        let texts: Vec<String> = (0..rng.random_range(1..12)).map(|_| random_comment(&mut rng)).collect();
        let parsed = parse_user_message(&render_user_message(&prompt, &texts));
        ensure!(parsed.description == prompt.description(), "batch {i}: description changed");
        let want: Vec<(usize, String)> = texts.iter().cloned().enumerate().map(|(i, t)| (i + 1, t)).collect();
        ensure!(parsed.data == want, "batch {i}: data did not round-trip");
    }

    let spec = MockSpec {
        rules: BTreeMap::from([
            ("a".to_owned(), vec!["grobnak".to_owned()]),
            ("b".to_owned(), vec!["vorpally".to_owned()]),
        ]),
        ..MockSpec::default()
    };
    let corpus = planted_corpus(40, 9);
    let items: Vec<(&str, &str)> = corpus.iter().map(|c| (c.id.as_str(), c.text.as_str())).collect();
    let cfg = BatchConfig { batch_size: 10, max_parallel: 2 };
    let mock = mock_provider(spec.clone());
    let mut cache = VerdictCache::new();
    let a = Prompt::new("a", "first");
    let mut b = Prompt::new("b", "second");
    let first = evaluate(&[a.clone(), b.clone()], &items, &mut cache, &mock, cfg);
    ensure!(mock.call_count() == 8, "first pass made {} calls, expected 8", mock.call_count());
    mock.clear_calls();
    let again = evaluate(&[a.clone(), b.clone()], &items, &mut cache, &mock, cfg);
    ensure!(mock.call_count() == 0, "cached re-evaluation made {} calls", mock.call_count());
    ensure!(again.predictions == first.predictions, "cached predictions differ");
    b.set_description("second, edited").map_err(|e| e.to_string())?;
    evaluate(&[a.clone(), b.clone()], &items, &mut cache, &mock, cfg);
    let tags: BTreeSet<Option<String>> = mock.calls().into_iter().map(|c| c.tag).collect();
    ensure!(mock.call_count() == 4, "edit re-issued {} calls, expected 4", mock.call_count());
    ensure!(tags == BTreeSet::from([Some("b".to_owned())]), "edit re-issued batches for {tags:?}");

    for pair in 0..50 {
        let kw = |rng: &mut ChaCha8Rng| -> Vec<String> {
            KEYWORDS.iter().filter(|_| rng.random_bool(0.5)).map(|s| s.to_string()).collect()
        };
        let spec = MockSpec {
            rules: BTreeMap::from([("x".to_owned(), kw(&mut rng)), ("y".to_owned(), kw(&mut rng))]),
            ..MockSpec::default()
        };
        let run = |ps: &[Prompt]| {
            let out = evaluate(ps, &items, &mut VerdictCache::new(), &mock_provider(spec.clone()), cfg);
            out.removed().into_iter().map(str::to_owned).collect::<BTreeSet<String>>()
        };
        let x = Prompt::new("x", "one");
        let y = Prompt::new("y", "two");
        let both = run(&[x.clone(), y.clone()]);
        let union: BTreeSet<String> = run(&[x]).union(&run(&[y])).cloned().collect();
        ensure!(both == union, "pair {pair}: union decomposition failed");
    }
    Ok("asset match, 50 round-trips, 0 cached calls, 4 edit calls, 50 unions".into())
}

// ------------------------------------------------------------------ metrics

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for case in 0..1000 {
        let n = rng.random_range(1..60);
        let mut preds = BTreeMap::new();
        let mut gt = BTreeMap::new();
        let (mut tp, mut fp, mut fn_, mut tn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            let (p, g) = (rng.random_bool(0.5), rng.random_bool(0.5));
            match (p, g) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
            preds.insert(format!("c{i}"), Decision::from_remove(p));
            gt.insert(format!("c{i}"), Decision::from_remove(g));
        }
        let s = score(&preds, &gt).map_err(|e| e.to_string())?;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let accuracy = (tp + tn) / n as f64;
        let m = s.metrics;
        for (name, got, want) in [
            ("accuracy", m.accuracy, accuracy),
            ("precision", m.precision, precision),
            ("recall", m.recall, recall),
            ("f1", m.f1, f1),
        ] {
            ensure!((got - want).abs() < 1e-12, "case {case}: {name} {got} vs {want}");
        }
    }
    let m = ConfusionCounts { tp: 3, fp: 1, fn_: 2, tn: 4 }.metrics();
    ensure!((m.precision - 0.75).abs() < 1e-12, "precision {}", m.precision);
    ensure!((m.recall - 0.60).abs() < 1e-12, "recall {}", m.recall);
    ensure!((m.f1 - 0.6667).abs() < 1e-4, "f1 {}", m.f1);
    ensure!((m.accuracy - 0.70).abs() < 1e-12, "accuracy {}", m.accuracy);
    Ok("1000 random configurations, fixed case P=0.75 R=0.60 F1=0.6667 A=0.70".into())
}

// ------------------------------------------------------------------ dataset

fn synthetic_dump(n: usize, seed: u64) -> Vec<Result<serde_json::Value, String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            Ok(json!({
                "id": format!("y{i:05}"),
                "text": format!("comment number {i} about this video"),
                "video_id": format!("v{}", i % 13),
                "is_reply": false,
                "toxicity_score": rng.random_range(0.4..1.0),
            }))
        })
        .collect()
}

fn dataset_pipeline() -> Outcome {
    let cfg = CorpusConfig { seed: 5, ..CorpusConfig::default() };
    let run = |cfg: &CorpusConfig| run_pipeline(synthetic_dump(1200, 99), cfg).map_err(|e| e.to_string());
    let out = run(&cfg)?;
    ensure!(out.corpus.len() == 800, "emitted {} comments", out.corpus.len());
    let toxic = out.corpus.comments().iter().filter(|c| c.toxicity_score.unwrap() > 0.7).count();
    ensure!(toxic == 400, "{toxic} toxic of 800");
    ensure!(out.manifest.counts.toxic == 400 && out.manifest.counts.non_toxic == 400, "manifest counts off");
    let split = make_split(&out.corpus, &cfg, "session-a").map_err(|e| e.to_string())?;
    ensure!(split.train_ids.len() == 700 && split.test_ids.len() == 100, "split {}/{}", split.train_ids.len(), split.test_ids.len());
    let all: BTreeSet<&String> = split.train_ids.iter().chain(&split.test_ids).collect();
    ensure!(all.len() == 800, "split overlaps or drops comments");
    let again = run(&cfg)?;
    ensure!(again.corpus == out.corpus, "pipeline not deterministic");
    ensure!(make_split(&again.corpus, &cfg, "session-a").unwrap() == split, "split not deterministic");
    let other = run(&CorpusConfig { seed: 6, ..cfg.clone() })?;
    ensure!(other.corpus != out.corpus, "seed has no effect");
    Ok("800 comments, 400/400, 700/100, reproducible".into())
}

// --------------------------------------------------------------- end to end

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let h = Harness::open(config(dir.path(), 50), ManualClock::new(START_MS));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    let corpus = planted_corpus(200, 2024);
    let f1 = rt.block_on(async {
        h.setup_session("e2e", &corpus, &["label", "rule", "prompt"]).await;
        h.play_label("e2e", 6).await;
        h.play_rule("e2e").await;
        h.play_prompt("e2e").await;
        let mut f1 = BTreeMap::new();
        for s in Strategy::ALL {
            f1.insert(s, h.final_f1("e2e", s.as_str()).await);
        }
        f1
    });
    for (s, v) in &f1 {
        ensure!(*v >= 0.9, "{s} F1 {v:.3} below 0.9");
    }

    let stored = read_snapshots(&h.app.store().snapshots_path("e2e")).map_err(|e| e.to_string())?;
    let replayed = h.app.replay_session("e2e").map_err(|e| e.to_string())?;
    let bytes = |s: &[curate_core::evaluation::MetricsSnapshot]| {
        s.iter().map(|x| serde_json::to_string(x).unwrap() + "\n").collect::<String>()
    };
    let on_disk = std::fs::read_to_string(h.app.store().snapshots_path("e2e")).map_err(|e| e.to_string())?;
    ensure!(bytes(&replayed.snapshots) == on_disk, "replayed snapshots differ from the stored file");
    ensure!(stored == replayed.snapshots, "snapshot values differ after replay");

    let record = curate_core::evaluation::SessionRecord { session_id: "e2e".into(), snapshots: stored.clone() };
    let rep = report(&[record]);
    let out = dir.path().join("report");
    write_report(&out, &rep).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(out.join("series.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    ensure!(lines.next() == Some("strategy,t_seconds,metric,mean,n"), "bad csv header");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        ensure!(cols.len() == 5, "bad csv row `{line}`");
        ensure!(cols[1].parse::<u64>().is_ok() && cols[3].parse::<f64>().is_ok(), "bad csv row `{line}`");
    }
    for s in Strategy::ALL {
        let mine: Vec<&curate_core::evaluation::MetricsSnapshot> = stored.iter().filter(|x| x.strategy == s).collect();
        let last = mine.iter().find(|x| x.is_final).ok_or(format!("{s} has no final snapshot"))?;
        let ticks: Vec<u64> = mine.iter().filter(|x| !x.is_final).map(|x| x.t_active_seconds).collect();
        let want: Vec<u64> = (1..).map(|k| k * 30).take_while(|t| *t <= last.t_active_seconds).collect();
        let boundary_final = want.last() == Some(&last.t_active_seconds);
        let want_open: Vec<u64> = if boundary_final { want[..want.len() - 1].to_vec() } else { want.clone() };
        ensure!(ticks == want_open, "{s} snapshots at {ticks:?}, expected {want_open:?}");
        for m in METRICS {
            ensure!(
                rep.series.iter().any(|p| p.strategy == s && p.metric == m),
                "report has no {m} series for {s}"
            );
        }
    }
    Ok(format!(
        "F1 label {:.3} rule {:.3} prompt {:.3}; {} snapshots replayed byte-identically",
        f1[&Strategy::Label],
        f1[&Strategy::Rule],
        f1[&Strategy::Prompt],
        stored.len()
    ))
}

// ----------------------------------------------------------------- paired

fn paired_arithmetic() -> Outcome {
    let fixture: BTreeMap<String, (Option<f64>, Option<f64>)> = BTreeMap::from([
        ("s1".to_owned(), (Some(1.0), Some(0.5))),
        ("s2".to_owned(), (Some(0.5), Some(0.5))),
        ("s3".to_owned(), (Some(0.75), Some(0.25))),
        ("s4".to_owned(), (Some(0.25), Some(0.25))),
        ("s5".to_owned(), (Some(0.9), None)),
    ]);
    // diffs 0.5, 0, 0.5, 0: mean 1/4, sample variance 1/12, se sqrt(1/48)
    let c = paired_compare("f1", Strategy::Rule, Strategy::Prompt, &fixture).map_err(|e| e.to_string())?;
    ensure!(c.estimate == 0.25, "estimate {}", c.estimate);
    ensure!((c.std_err - (1.0f64 / 48.0).sqrt()).abs() < 1e-15, "std_err {}", c.std_err);
    ensure!((c.t.unwrap() - 3f64.sqrt()).abs() < 1e-12, "t {:?}", c.t);
    ensure!(c.n == 4 && c.dropped == vec!["s5".to_owned()], "n {} dropped {:?}", c.n, c.dropped);
    let flipped: BTreeMap<String, (Option<f64>, Option<f64>)> = fixture.iter().map(|(k, (a, b))| (k.clone(), (*b, *a))).collect();
    let r = paired_compare("f1", Strategy::Prompt, Strategy::Rule, &flipped).map_err(|e| e.to_string())?;
    ensure!(r.estimate == -c.estimate && r.std_err == c.std_err, "not antisymmetric");
    Ok("estimate 0.25, std_err sqrt(1/48), t sqrt(3); antisymmetric".into())
}

// ------------------------------------------------------------------ harness

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("rule variant suite", Duration::from_secs(5), rule_variant_suite),
        ("rule semantics oracle", Duration::from_secs(10), rule_semantics_oracle),
        ("naive bayes oracle", Duration::from_secs(10), naive_bayes_oracle),
        ("prompt protocol", Duration::from_secs(10), prompt_protocol),
        ("metrics oracle", Duration::from_secs(10), metrics_oracle),
        ("dataset pipeline", Duration::from_secs(10), dataset_pipeline),
        ("end-to-end session", Duration::from_secs(60), end_to_end),
        ("paired comparison", Duration::from_secs(5), paired_arithmetic),
    ];
    let mut failed = Vec::new();
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(_) if took > budget => Err(format!("took {took:.2?}, budget {budget:?}")),
            r => r,
        };
        // written straight to stdout so the lines survive libtest's capture
        let line = match result {
            Ok(detail) => format!("PASS {name}: {detail} [{took:.2?}]\n"),
            Err(why) => {
                failed.push(name);
                format!("FAIL {name}: {why} [{took:.2?}]\n")
            }
        };
        let _ = std::io::stdout().write_all(line.as_bytes());
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
