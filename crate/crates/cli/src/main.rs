use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use curate_core::corpus::{jsonl_records, make_split, run_pipeline, write_corpus_dir, Corpus, CorpusConfig};
use curate_core::evaluation::{report, score, write_report, SessionRecord};
use curate_core::llm::{HttpChatProvider, LlmProvider, LlmProviderConfig};
use curate_core::prompts::{evaluate, parse_prompt_set, BatchConfig, MockProvider, MockSpec, VerdictCache};
use curate_core::rules::{parse_rule_set, RuleSet};
use curate_core::{Decision, Prediction};
use curate_service::store::{read_snapshots, SNAPSHOTS_FILE};
use curate_service::{App, ServiceConfig, SystemClock};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "curate", version, about = "Build and compare comment-removal classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Corpus(CorpusCmd),
    #[command(subcommand)]
    Rules(RulesCmd),
    #[command(subcommand)]
    Prompts(PromptsCmd),
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run the HTTP session service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Filter, balance and write a corpus from a JSON-Lines dump.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the train/test split a session would get.
    Split {
        #[arg(long)]
        session: String,
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RulesCmd {
    /// Validate a rule set and print the generated patterns.
    Compile {
        #[arg(long)]
        rules: PathBuf,
    },
    /// Classify a corpus with a rule set.
    Apply {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Include which phrases fired.
        #[arg(long)]
        explain: bool,
    },
}

#[derive(Args)]
struct ProviderArgs {
    /// Mock provider spec (JSON). Takes precedence over --provider-config.
    #[arg(long)]
    mock: Option<PathBuf>,
    #[arg(long)]
    provider_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PromptsCmd {
    /// Classify a corpus with a prompt set.
    Eval {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Verdict cache (JSON-Lines), read before and written after.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Score predictions against ground truth.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// Aggregate session snapshots into report.json and series.csv.
    Report {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn corpus_config(path: Option<&Path>) -> Result<CorpusConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(CorpusConfig::default()),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn write_predictions(rows: impl Iterator<Item = (String, Prediction)>, explain: bool) -> Result<()> {
    let mut out = BufWriter::new(io::stdout().lock());
    for (id, p) in rows {
        let mut line = json!({ "comment_id": id, "decision": p.decision });
        if explain {
            line["explanation"] = serde_json::to_value(&p.explanation)?;
        }
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn provider(args: &ProviderArgs) -> Result<(Arc<dyn LlmProvider>, BatchConfig)> {
    if let Some(p) = &args.mock {
        let spec: MockSpec = read_json(p)?;
        return Ok((Arc::new(MockProvider::new(spec)), BatchConfig::default()));
    }
    let Some(p) = &args.provider_config else {
        bail!("pass --mock <spec> or --provider-config <path>");
    };
    let cfg: LlmProviderConfig = read_json(p)?;
    cfg.validate().map_err(anyhow::Error::msg)?;
    let batch = BatchConfig::from(&cfg);
    Ok((Arc::new(HttpChatProvider::new(cfg)), batch))
}

/// Predictions are JSON-Lines with `comment_id` and `decision`.
fn read_predictions(path: &Path) -> Result<BTreeMap<String, Decision>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).with_context(|| format!("line {}", n + 1))?;
        let id = v["comment_id"].as_str().with_context(|| format!("line {}: no comment_id", n + 1))?;
        let d: Decision = serde_json::from_value(v["decision"].clone()).with_context(|| format!("line {}", n + 1))?;
        out.insert(id.to_owned(), d);
    }
    Ok(out)
}

/// Ground truth is a JSON object of id to decision, either bare or under
/// `labels`.
fn read_ground_truth(path: &Path) -> Result<BTreeMap<String, Decision>> {
    let mut v: Value = read_json(path)?;
    if let Some(labels) = v.get_mut("labels") {
        v = labels.take();
    }
    Ok(serde_json::from_value(v)?)
}

fn session_records(dir: &Path) -> Result<Vec<SessionRecord>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let file = path.join(SNAPSHOTS_FILE);
        if !file.is_file() {
            continue;
        }
        let session_id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let snapshots = read_snapshots(&file).with_context(|| format!("reading {}", file.display()))?;
        out.push(SessionRecord { session_id, snapshots });
    }
    out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(CorpusCmd::Ingest { input, config, out }) => {
            let cfg = corpus_config(config.as_deref())?;
            let file = fs::File::open(&input).with_context(|| format!("reading {}", input.display()))?;
            let result = run_pipeline(jsonl_records(BufReader::new(file)), &cfg)?;
            write_corpus_dir(&out, &result)?;
            println!("{}", serde_json::to_string_pretty(&result.manifest.counts)?);
        }
        Command::Corpus(CorpusCmd::Split { session, corpus, config }) => {
            let cfg = corpus_config(config.as_deref())?;
            let split = make_split(&load_corpus(&corpus)?, &cfg, &session)?;
            println!("{}", serde_json::to_string_pretty(&split)?);
        }
        Command::Rules(RulesCmd::Compile { rules }) => {
            let text = fs::read_to_string(&rules).with_context(|| format!("reading {}", rules.display()))?;
            let set = RuleSet::compile(&parse_rule_set(&text)?)?;
            let summary: Vec<Value> = set
                .rules()
                .iter()
                .map(|r| {
                    let cond = |c: &curate_core::rules::CompiledCondition| {
                        c.phrases.iter().map(|p| json!({ "phrase": p.original, "pattern": p.pattern })).collect::<Vec<_>>()
                    };
                    json!({
                        "name": r.rule.name,
                        "includes": r.includes.iter().map(cond).collect::<Vec<_>>(),
                        "exclude": r.exclude.as_ref().map(cond),
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Rules(RulesCmd::Apply { rules, corpus, explain }) => {
            let text = fs::read_to_string(&rules).with_context(|| format!("reading {}", rules.display()))?;
            let set = RuleSet::compile(&parse_rule_set(&text)?)?;
            let corpus = load_corpus(&corpus)?;
            write_predictions(corpus.comments().iter().map(|c| (c.id.clone(), set.classify(&c.text))), explain)?;
        }
        Command::Prompts(PromptsCmd::Eval { prompts, corpus, provider: args, cache }) => {
            let text = fs::read_to_string(&prompts).with_context(|| format!("reading {}", prompts.display()))?;
            let prompts = parse_prompt_set(&text)?;
            let corpus = load_corpus(&corpus)?;
            let (llm, batch) = provider(&args)?;
            let mut verdicts = match &cache {
                Some(p) => VerdictCache::load(p)?,
                None => VerdictCache::new(),
            };
            let items: Vec<(&str, &str)> = corpus.comments().iter().map(|c| (c.id.as_str(), c.text.as_str())).collect();
            let outcome = evaluate(&prompts, &items, &mut verdicts, llm.as_ref(), batch);
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(p) = &cache {
                verdicts.save(p)?;
            }
            eprintln!("{} request(s), {} degraded", outcome.requests, outcome.degraded.len());
            write_predictions(outcome.predictions.into_iter(), true)?;
        }
        Command::Eval(EvalCmd::Score { predictions, ground_truth }) => {
            let s = score(&read_predictions(&predictions)?, &read_ground_truth(&ground_truth)?)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Eval(EvalCmd::Report { sessions, out }) => {
            let r = report(&session_records(&sessions)?);
            write_report(&out, &r)?;
            for note in &r.notes {
                eprintln!("note: {note}");
            }
            println!("{}", serde_json::to_string_pretty(&r.finals)?);
        }
        Command::Serve { config } => {
            let cfg: ServiceConfig = match &config {
                Some(p) => read_json(p)?,
                None => ServiceConfig::default(),
            };
            let app = App::open(cfg, Arc::new(SystemClock)).map_err(|e| anyhow::anyhow!("{e}"))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(curate_service::api::serve(Arc::new(app)))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
