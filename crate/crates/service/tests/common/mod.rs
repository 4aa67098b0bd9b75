#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use curate_core::corpus::Comment;
use curate_core::prompts::MockSpec;
use curate_service::config::ProviderSetting;
use curate_service::{App, ManualClock, ServiceConfig};
use http_body_util::BodyExt;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use tower::ServiceExt;

pub const KEYWORDS: [&str; 3] = ["grobnak", "vorpally", "skunkface"];

const FILLER: [&str; 40] = [
    "video", "great", "music", "really", "song", "watch", "today", "channel", "love", "part", "thanks", "best",
    "time", "people", "first", "world", "good", "nice", "funny", "again", "week", "still", "clip", "editing",
    "camera", "sound", "game", "team", "story", "idea", "friend", "voice", "movie", "night", "cover", "live",
    "episode", "lesson", "guitar", "drums",
];

/// Comments made of filler words. Every other one also carries one of the
/// planted keywords, which is the ground truth for removal.
pub fn planted_corpus(n: usize, seed: u64) -> Vec<Comment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(4..10);
            let mut words: Vec<String> = (0..len).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
            if i % 2 == 0 {
                let kw = KEYWORDS[rng.random_range(0..KEYWORDS.len())];
                let at = rng.random_range(0..=words.len());
                words.insert(at, kw.to_owned());
            }
            Comment {
                id: format!("c{i:04}"),
                text: words.join(" "),
                video_id: format!("v{}", i % 7),
                is_reply: i % 5 == 0,
                toxicity_score: None,
            }
        })
        .collect()
}

pub fn truth(text: &str) -> bool {
    let lower = text.to_lowercase();
    KEYWORDS.iter().any(|k| lower.contains(k))
}

pub fn mock_spec() -> MockSpec {
    MockSpec {
        rules: BTreeMap::from([("insult".to_owned(), KEYWORDS.iter().map(|s| s.to_string()).collect())]),
        synonyms: BTreeMap::from([("grobnak".to_owned(), vec!["vorpally".to_owned(), "skunkface".to_owned()])]),
        rephrase: BTreeMap::from([(
            "Remove insults".to_owned(),
            "Remove comments that insult another person.".to_owned(),
        )]),
        ..MockSpec::default()
    }
}

pub fn config(dir: &Path, test_size: usize) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        provider: ProviderSetting::Mock { spec: mock_spec() },
        test_size,
        ..ServiceConfig::default()
    }
}

pub const START_MS: u64 = 1_700_000_000_000;

pub struct Harness {
    pub app: Arc<App>,
    pub router: Router,
    pub clock: ManualClock,
}

impl Harness {
    pub fn open(cfg: ServiceConfig, clock: ManualClock) -> Self {
        let app = Arc::new(App::open(cfg, Arc::new(clock.clone())).expect("app opens"));
        let router = curate_service::api::router(app.clone());
        Harness { app, router, clock }
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(path);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let resp = self.router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    pub async fn ok(&self, method: Method, path: &str, body: Option<Value>) -> Value {
        let (status, v) = self.call(method.clone(), path, body).await;
        assert!(status.is_success(), "{method} {path} -> {status}: {v}");
        v
    }

    pub async fn get(&self, path: &str) -> Value {
        self.ok(Method::GET, path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> Value {
        self.ok(Method::POST, path, Some(body)).await
    }

    pub async fn put(&self, path: &str, body: Value) -> Value {
        self.ok(Method::PUT, path, Some(body)).await
    }

    pub fn tick(&self, secs: u64) {
        self.clock.advance_secs(secs);
    }

    /// Uploads the corpus, creates the session and labels the test split
    /// from the planted keywords.
    pub async fn setup_session(&self, sid: &str, corpus: &[Comment], order: &[&str]) {
        self.put("/corpora/planted", json!({ "comments": corpus })).await;
        self.ok(
            Method::POST,
            "/sessions",
            Some(json!({ "session_id": sid, "corpus_id": "planted", "order": order })),
        )
        .await;
        let test = self.get(&format!("/sessions/{sid}/test")).await;
        let labels: BTreeMap<String, &str> = test["comments"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| {
                let d = if truth(c["text"].as_str().unwrap()) { "Remove" } else { "Keep" };
                (c["id"].as_str().unwrap().to_owned(), d)
            })
            .collect();
        self.tick(20);
        self.put(&format!("/sessions/{sid}/ground_truth"), json!({ "labels": labels })).await;
        self.post(&format!("/sessions/{sid}/ground_truth/finalize"), json!({})).await;
    }

    /// Label condition: a few rounds of uncertainty-sampled batches labelled
    /// from the planted keywords.
    pub async fn play_label(&self, sid: &str, rounds: usize) {
        self.post(&format!("/sessions/{sid}/conditions/label/start"), json!({})).await;
        let mut batch = self.post(&format!("/sessions/{sid}/label/load_more"), json!({})).await["batch"].clone();
        for _ in 0..rounds {
            self.tick(25);
            let labels: Vec<Value> = batch
                .as_array()
                .unwrap()
                .iter()
                .map(|c| {
                    let d = if truth(c["text"].as_str().unwrap()) { "Remove" } else { "Keep" };
                    json!({ "comment_id": c["id"], "label": d })
                })
                .collect();
            let out = self.post(&format!("/sessions/{sid}/label/labels"), json!({ "labels": labels })).await;
            batch = out["next"].clone();
            if out["trained"] == true {
                self.apply(sid, "label", "train").await;
            }
        }
        self.tick(10);
        self.post(&format!("/sessions/{sid}/conditions/label/end"), json!({})).await;
    }

    /// Rule condition: one rule per keyword, variants on for the last.
    pub async fn play_rule(&self, sid: &str) {
        self.post(&format!("/sessions/{sid}/conditions/rule/start"), json!({})).await;
        self.tick(15);
        let s = self.post(&format!("/sessions/{sid}/rules/suggest"), json!({ "phrases": ["grobnak"] })).await;
        assert_eq!(s["phrases"], json!(["vorpally", "skunkface"]));
        for (i, kw) in KEYWORDS.iter().enumerate() {
            self.tick(20);
            let rule = json!({
                "name": format!("kw{i}"),
                "includes": [{ "phrases": [kw] }],
            });
            let created = self.post(&format!("/sessions/{sid}/rules"), json!({ "rule": rule })).await;
            self.tick(5);
            self.apply(sid, "rule", "train").await;
            if i == KEYWORDS.len() - 1 {
                let rid = created["id"].as_str().unwrap();
                self.put(&format!("/sessions/{sid}/rules/{rid}/variants"), json!({ "on": true })).await;
            }
        }
        self.tick(12);
        self.apply(sid, "rule", "train").await;
        self.post(&format!("/sessions/{sid}/conditions/rule/end"), json!({})).await;
    }

    /// Prompt condition: one description, improved, then applied.
    pub async fn play_prompt(&self, sid: &str) {
        self.post(&format!("/sessions/{sid}/conditions/prompt/start"), json!({})).await;
        self.tick(30);
        let p = self.post(&format!("/sessions/{sid}/prompts"), json!({ "description": "Remove insults" })).await;
        let pid = p["id"].as_str().unwrap().to_owned();
        self.tick(10);
        let better = self.post(&format!("/sessions/{sid}/prompts/{pid}/improve"), json!({})).await;
        assert_eq!(better["text"], "Remove comments that insult another person.");
        self.put(
            &format!("/sessions/{sid}/prompts/{pid}"),
            json!({ "description": better["text"] }),
        )
        .await;
        self.tick(20);
        self.post(
            &format!("/sessions/{sid}/prompts/{pid}/examples"),
            json!({ "text": "you grobnak", "should_remove": true }),
        )
        .await;
        self.tick(15);
        self.apply(sid, "prompt", "train").await;
        self.tick(40);
        self.apply(sid, "prompt", "train").await;
        self.post(&format!("/sessions/{sid}/conditions/prompt/end"), json!({})).await;
    }

    pub async fn apply(&self, sid: &str, strategy: &str, target: &str) -> Value {
        self.post(
            &format!("/sessions/{sid}/apply"),
            json!({ "strategy": strategy, "target": target, "limit": 20 }),
        )
        .await
    }

    pub async fn final_f1(&self, sid: &str, strategy: &str) -> f64 {
        let v = self.get(&format!("/sessions/{sid}/score/{strategy}")).await;
        v["metrics"]["f1"].as_f64().unwrap()
    }
}
