//! Command-line pipeline: corpus synthesis and splitting, SFT, PPO, scoring,
//! reranking and the two evaluation commands. Exit codes: 0 success, 1
//! runtime failure, 2 usage or configuration error.

mod config;
mod manifest;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{
    generate_synthetic_corpus, load_corpus, split_corpus, Corpus, CorpusError, ExchangePair, SplitRatios, Turn,
};
use crate::metrics::{corpus_bleu, corpus_rouge, MetricsError};
use crate::policy::{build_tokenizer, load_checkpoint, save_checkpoint, HeadInit, PolicyError, PolicyModel, Tokenizer};
use crate::simulator::{
    rerank_candidates, select_few_shot, FewShotExample, HttpChatClient, ReplayClient, ResponseCache, ResponseScorer,
    ScoringDecoding, ScriptedScorer, Simulator, SimulatorClient, SimulatorError, SimulatorStats,
};
use crate::train::{evaluate_policy, ppo_train, sft_train, EvalReport, TrainError};

pub use config::{
    load_config, load_config_from_manifest, sanitize_model_id, BackendKind, BackendSection, ConfigError, CorpusPaths,
    EvalSection, ModelSection, RunConfig,
};
pub use manifest::{sha256_file, sha256_hex, timestamp, RunManifest};

/// Environment variable holding the remote backend's API key.
pub const API_KEY_ENV: &str = "UGRO_API_KEY";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Jsonl { path: String, line: usize, message: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ugro", version, about = "Satisfaction-guided response optimization for task-oriented dialogue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic booking corpus.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Manifest path (default: <out>.manifest.json).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Seeded train/dev/test split of a corpus.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train: f64,
        #[arg(long, default_value_t = 0.1)]
        dev: f64,
        #[arg(long, default_value_t = 0.1)]
        test: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Supervised fine-tuning on the training split.
    Sft(RunArgs),
    /// PPO against the configured satisfaction backend.
    Ppo {
        #[command(flatten)]
        run: RunArgs,
        /// Initial checkpoint (default: <output_dir>/sft.ckpt.json).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Score responses: JSONL {id, history, response, required_keywords?}.
    Score(ScoreArgs),
    /// Pick the best candidate: JSONL {id, history, candidates, required_keywords?}.
    Rerank(ScoreArgs),
    /// Classification report from {id, prediction} and {id, gold} files.
    EvalSim {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// BLEU and ROUGE from {id, text} hypothesis and reference files.
    EvalGen {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-run with the configuration recorded in an earlier manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        match (&self.config, &self.from_manifest) {
            (Some(p), _) => Ok(load_config(p)?),
            (None, Some(m)) => Ok(load_config_from_manifest(m)?),
            (None, None) => Err(CliError::Usage("--config or --from-manifest is required".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// TOML run configuration (defaults: scripted backend).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors go to standard error as one line.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { n, seed, out, manifest } => cmd_synth(n, seed, &out, manifest),
        Command::Split {
            input,
            out_dir,
            train,
            dev,
            test,
            seed,
        } => cmd_split(&input, &out_dir, SplitRatios { train, dev, test }, seed),
        Command::Sft(run) => cmd_sft(&run.load()?),
        Command::Ppo { run, init } => cmd_ppo(&run.load()?, init),
        Command::Score(a) => cmd_score(&score_config(&a)?, &a),
        Command::Rerank(a) => cmd_rerank(&score_config(&a)?, &a),
        Command::EvalSim { pred, gold } => cmd_eval_sim(&pred, &gold),
        Command::EvalGen { hyp, reference } => cmd_eval_gen(&hyp, &reference),
    }
}

fn score_config(a: &ScoreArgs) -> Result<RunConfig, CliError> {
    match &a.config {
        Some(p) => Ok(load_config(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn default_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn finish_manifest(m: RunManifest, path: &Path) -> Result<(), CliError> {
    m.finish(path).map_err(io_err(path))?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

/// Reads a JSONL file into records, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Jsonl {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect()
}

fn cmd_synth(n: usize, seed: u64, out: &Path, manifest: Option<PathBuf>) -> Result<(), CliError> {
    let mut m = RunManifest::new("synth", json!({"n": n, "seed": seed, "out": out}));
    m.seeds.insert("seed".into(), seed);
    let corpus = generate_synthetic_corpus(n, seed)?;
    write_file(out, corpus.to_jsonl().as_bytes())?;
    m.add_output(out).map_err(io_err(out))?;
    m.metrics = json!({"dialogues": corpus.len(), "exchanges": corpus.exchange_pairs().len()});
    finish_manifest(m, &manifest.unwrap_or_else(|| default_manifest_path(out)))
}

fn cmd_split(input: &Path, out_dir: &Path, ratios: SplitRatios, seed: u64) -> Result<(), CliError> {
    let mut m = RunManifest::new(
        "split",
        json!({"input": input, "out_dir": out_dir, "train": ratios.train, "dev": ratios.dev, "test": ratios.test, "seed": seed}),
    );
    m.seeds.insert("seed".into(), seed);
    let corpus = load_corpus(input)?;
    m.add_input(input).map_err(io_err(input))?;
    let (train, dev, test) = split_corpus(&corpus, ratios, seed).map_err(|e| match e {
        CorpusError::RatiosDoNotSumToOne(_) | CorpusError::NegativeRatio => CliError::Usage(e.to_string()),
        other => CliError::Corpus(other),
    })?;
    let mut sizes = serde_json::Map::new();
    for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let path = out_dir.join(format!("{name}.jsonl"));
        write_file(&path, part.to_jsonl().as_bytes())?;
        m.add_output(&path).map_err(io_err(&path))?;
        sizes.insert(name.into(), json!(part.len()));
    }
    m.metrics = serde_json::Value::Object(sizes);
    finish_manifest(m, &out_dir.join("split.manifest.json"))
}

/// The configured satisfaction backend.
pub enum Backend {
    Scripted(ScriptedScorer),
    Simulator(Simulator),
}

impl Backend {
    pub fn from_config(config: &RunConfig) -> Result<Self, CliError> {
        let b: &BackendSection = &config.backend;
        let client: Arc<dyn SimulatorClient> = match b.kind {
            BackendKind::Scripted => return Ok(Backend::Scripted(ScriptedScorer)),
            BackendKind::Replay => Arc::new(ReplayClient::new(b.model.clone())),
            BackendKind::Remote => {
                let endpoint = b.endpoint.clone().expect("validated: remote has an endpoint");
                let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
                if key.is_none() {
                    log::warn!("{API_KEY_ENV} is not set; sending unauthenticated requests");
                }
                Arc::new(
                    HttpChatClient::new(endpoint, b.model.clone(), key)
                        .map_err(|e| CliError::Input(format!("cannot build HTTP client: {e}")))?,
                )
            }
        };
        fs::create_dir_all(&config.cache_dir).map_err(io_err(&config.cache_dir))?;
        let cache = Arc::new(ResponseCache::open(config.cache_file())?);
        let shots = match &b.few_shot_pool {
            Some(pool) => {
                let pool: Vec<FewShotExample> = read_jsonl(pool)?;
                select_few_shot(&pool, config.prompt.shot_count, config.seed)?
            }
            None => Vec::new(),
        };
        let sim = Simulator::new(client, cache, config.prompt.clone(), shots)?
            .with_decoding(ScoringDecoding {
                temperature: b.temperature,
                max_tokens: b.max_tokens,
                seed: config.seed,
            })
            .with_max_in_flight(b.max_in_flight);
        Ok(Backend::Simulator(sim))
    }

    pub fn scorer(&self) -> &dyn ResponseScorer {
        match self {
            Backend::Scripted(s) => s,
            Backend::Simulator(s) => s,
        }
    }

    pub fn stats(&self) -> SimulatorStats {
        match self {
            Backend::Scripted(_) => SimulatorStats::default(),
            Backend::Simulator(s) => s.stats(),
        }
    }
}

fn load_split(config_path: &Option<PathBuf>, field: &str, m: &mut RunManifest) -> Result<Corpus, CliError> {
    let path = config_path
        .as_ref()
        .ok_or_else(|| CliError::Config(ConfigError::Invalid(format!("{field} is required for this command"))))?;
    let corpus = load_corpus(path)?;
    m.add_input(path).map_err(io_err(path))?;
    Ok(corpus)
}

fn held_out_pairs(config: &RunConfig, m: &mut RunManifest) -> Result<Option<Vec<ExchangePair>>, CliError> {
    if config.corpus.test.is_none() {
        return Ok(None);
    }
    let test = load_split(&config.corpus.test, "corpus.test", m)?;
    let mut pairs = test.exchange_pairs();
    if config.eval.max_exchanges > 0 {
        pairs.truncate(config.eval.max_exchanges);
    }
    Ok(Some(pairs))
}

fn eval_summary(r: &EvalReport) -> serde_json::Value {
    json!({"mean_score": r.mean_score, "evaluated": r.scores.len(), "skipped": r.skipped})
}

fn config_json(config: &RunConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

fn cmd_sft(config: &RunConfig) -> Result<(), CliError> {
    let mut m = RunManifest::new("sft", config_json(config));
    m.seeds.insert("model_init".into(), config.seed);
    m.seeds.insert("sft".into(), config.sft.seed);
    let train = load_split(&config.corpus.train, "corpus.train", &mut m)?;
    let held_out = held_out_pairs(config, &mut m)?;

    let tokenizer = build_tokenizer(&train, config.model.max_vocab, config.model.min_freq)?;
    let model_config = config.model.model_config(tokenizer.vocab_size());
    let mut policy = PolicyModel::<f32>::new(model_config, config.seed, HeadInit::Zero)?;
    let report = sft_train(&mut policy, &tokenizer, &train.exchange_pairs(), &config.sft)?;

    let ckpt = config.output_dir.join("sft.ckpt.json");
    ensure_parent(&ckpt)?;
    save_checkpoint(&ckpt, &policy, &tokenizer)?;
    m.add_output(&ckpt).map_err(io_err(&ckpt))?;

    let tail = &report.losses[report.losses.len().saturating_sub(10)..];
    let mut metrics = json!({
        "vocab_size": tokenizer.vocab_size(),
        "num_params": policy.num_params(),
        "steps": report.losses.len(),
        "initial_loss": report.losses.first(),
        "final_loss": tail.iter().sum::<f64>() / tail.len() as f64,
        "skipped_pairs": report.skipped_pairs,
    });
    let backend = Backend::from_config(config)?;
    if let Some(pairs) = held_out {
        let eval = evaluate_policy(&policy, &tokenizer, &pairs, backend.scorer(), config.eval.max_new_tokens)?;
        metrics["held_out"] = eval_summary(&eval);
    }
    m.metrics = metrics;
    m.backend = Some(backend.stats());
    finish_manifest(m, &config.output_dir.join("sft.manifest.json"))
}

fn cmd_ppo(config: &RunConfig, init: Option<PathBuf>) -> Result<(), CliError> {
    let mut m = RunManifest::new("ppo", config_json(config));
    m.seeds.insert("ppo".into(), config.ppo.seed);
    let init = init.unwrap_or_else(|| config.output_dir.join("sft.ckpt.json"));
    let (mut policy, tokenizer): (PolicyModel<f32>, Tokenizer) = load_checkpoint(&init)?;
    m.add_input(&init).map_err(io_err(&init))?;
    let prompts_field = if config.corpus.ppo_prompts.is_some() {
        (&config.corpus.ppo_prompts, "corpus.ppo_prompts")
    } else {
        (&config.corpus.train, "corpus.train")
    };
    let prompts = load_split(prompts_field.0, prompts_field.1, &mut m)?;
    let held_out = held_out_pairs(config, &mut m)?;
    let backend = Backend::from_config(config)?;

    let before = match &held_out {
        Some(pairs) => Some(evaluate_policy(&policy, &tokenizer, pairs, backend.scorer(), config.eval.max_new_tokens)?),
        None => None,
    };
    let report = ppo_train(
        &mut policy,
        &tokenizer,
        &prompts.exchange_pairs(),
        backend.scorer(),
        &config.ppo,
        &mut |s| {
            log::info!(
                "ppo iteration {}: mean score {:.3}, kl/token {:.4}, clip fraction {:.3}",
                s.iteration,
                s.mean_score,
                s.mean_kl_per_token,
                s.clip_fraction
            )
        },
    )?;

    let ckpt = config.output_dir.join("ppo.ckpt.json");
    ensure_parent(&ckpt)?;
    save_checkpoint(&ckpt, &policy, &tokenizer)?;
    m.add_output(&ckpt).map_err(io_err(&ckpt))?;

    let n = report.stats.len().max(1) as f64;
    let last = report.stats.last();
    let mut metrics = json!({
        "iterations": report.stats.len(),
        "skipped_pairs": report.skipped_pairs,
        "mean_kl_per_token": report.stats.iter().map(|s| s.mean_kl_per_token).sum::<f64>() / n,
        "final_rollout_score": last.map(|s| s.mean_score),
        "final_kl_per_token": last.map(|s| s.mean_kl_per_token),
    });
    if let (Some(pairs), Some(before)) = (&held_out, &before) {
        let after = evaluate_policy(&policy, &tokenizer, pairs, backend.scorer(), config.eval.max_new_tokens)?;
        metrics["held_out_before"] = eval_summary(before);
        metrics["held_out_after"] = eval_summary(&after);
        metrics["held_out_uplift"] = json!(after.mean_score - before.mean_score);
    }
    m.metrics = metrics;
    m.backend = Some(backend.stats());
    finish_manifest(m, &config.output_dir.join("ppo.manifest.json"))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreItem {
    id: String,
    history: Vec<Turn>,
    response: String,
    #[serde(default)]
    required_keywords: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RerankItem {
    id: String,
    history: Vec<Turn>,
    candidates: Vec<String>,
    #[serde(default)]
    required_keywords: Option<Vec<String>>,
}

fn exchange(history: Vec<Turn>, required_keywords: Option<Vec<String>>) -> ExchangePair {
    ExchangePair {
        history,
        target: Turn {
            required_keywords,
            ..Turn::system("")
        },
    }
}

fn judged<'a>(
    ids: impl Iterator<Item = &'a str>,
    results: Vec<Result<crate::simulator::SatisfactionJudgment, SimulatorError>>,
) -> Result<Vec<crate::simulator::SatisfactionJudgment>, CliError> {
    ids.zip(results)
        .map(|(id, r)| r.map_err(|e| CliError::Input(format!("item {id:?}: {e}"))))
        .collect()
}

fn cmd_score(config: &RunConfig, a: &ScoreArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("score", json!({"config": config, "input": a.input, "out": a.out}));
    m.seeds.insert("seed".into(), config.seed);
    let items: Vec<ScoreItem> = read_jsonl(&a.input)?;
    m.add_input(&a.input).map_err(io_err(&a.input))?;
    let backend = Backend::from_config(config)?;
    let pairs: Vec<ExchangePair> =
        items.iter().map(|it| exchange(it.history.clone(), it.required_keywords.clone())).collect();
    let batch: Vec<(&ExchangePair, &str)> = pairs.iter().zip(&items).map(|(p, it)| (p, it.response.as_str())).collect();
    let results = backend.scorer().score_batch(&batch);
    let judgments = judged(items.iter().map(|it| it.id.as_str()), results)?;

    let rows: Vec<serde_json::Value> = items
        .iter()
        .zip(&judgments)
        .map(|(it, j)| json!({"id": it.id, "score": j.score, "explanation": j.explanation}))
        .collect();
    write_file(&a.out, to_jsonl(&rows).as_bytes())?;
    m.add_output(&a.out).map_err(io_err(&a.out))?;
    let mean = judgments.iter().map(|j| j.score as f64).sum::<f64>() / judgments.len().max(1) as f64;
    m.metrics = json!({"items": judgments.len(), "mean_score": mean});
    m.backend = Some(backend.stats());
    finish_manifest(m, &default_manifest_path(&a.out))
}

fn cmd_rerank(config: &RunConfig, a: &ScoreArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("rerank", json!({"config": config, "input": a.input, "out": a.out}));
    m.seeds.insert("seed".into(), config.seed);
    let items: Vec<RerankItem> = read_jsonl(&a.input)?;
    m.add_input(&a.input).map_err(io_err(&a.input))?;
    if let Some(it) = items.iter().find(|it| it.candidates.is_empty()) {
        return Err(CliError::Input(format!("item {:?}: {}", it.id, SimulatorError::NoCandidates)));
    }
    let backend = Backend::from_config(config)?;
    let pairs: Vec<ExchangePair> =
        items.iter().map(|it| exchange(it.history.clone(), it.required_keywords.clone())).collect();
    let mut batch = Vec::new();
    let mut ids = Vec::new();
    for (p, it) in pairs.iter().zip(&items) {
        for c in &it.candidates {
            batch.push((p, c.as_str()));
            ids.push(it.id.as_str());
        }
    }
    let results = backend.scorer().score_batch(&batch);
    let mut judgments = judged(ids.into_iter(), results)?.into_iter();

    let mut rows = Vec::with_capacity(items.len());
    for it in &items {
        let js: Vec<_> = judgments.by_ref().take(it.candidates.len()).collect();
        let (best, j) = rerank_candidates(&js)?;
        rows.push(json!({
            "id": it.id,
            "best_index": best,
            "best": it.candidates[best],
            "score": j.score,
            "scores": js.iter().map(|j| j.score).collect::<Vec<_>>(),
        }));
    }
    write_file(&a.out, to_jsonl(&rows).as_bytes())?;
    m.add_output(&a.out).map_err(io_err(&a.out))?;
    m.metrics = json!({"items": rows.len(), "candidates": batch.len()});
    m.backend = Some(backend.stats());
    finish_manifest(m, &default_manifest_path(&a.out))
}

/// Pairs two id-keyed files, in the order of the first. Ids must be unique
/// and match exactly.
fn join_on_id<A, B>(left: Vec<(String, A)>, right: Vec<(String, B)>, what: &str) -> Result<Vec<(A, B)>, CliError> {
    let mut right_map = std::collections::HashMap::new();
    for (id, v) in right {
        if right_map.insert(id.clone(), v).is_some() {
            return Err(CliError::Input(format!("duplicate id {id:?} in {what} file")));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(left.len());
    for (id, a) in left {
        if !seen.insert(id.clone()) {
            return Err(CliError::Input(format!("duplicate id {id:?}")));
        }
        let b = right_map
            .remove(&id)
            .ok_or_else(|| CliError::Input(format!("id {id:?} has no {what} entry")))?;
        out.push((a, b));
    }
    if let Some(id) = right_map.keys().min() {
        return Err(CliError::Input(format!("{what} id {id:?} has no counterpart")));
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRow {
    id: String,
    prediction: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldRow {
    id: String,
    gold: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRow {
    id: String,
    text: String,
}

fn print_json(v: &impl Serialize) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).expect("report serializes");
    writeln!(out).map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })
}

fn cmd_eval_sim(pred: &Path, gold: &Path) -> Result<(), CliError> {
    let p: Vec<PredictionRow> = read_jsonl(pred)?;
    let g: Vec<GoldRow> = read_jsonl(gold)?;
    let joined = join_on_id(
        p.into_iter().map(|r| (r.id, r.prediction)).collect(),
        g.into_iter().map(|r| (r.id, r.gold)).collect(),
        "gold",
    )?;
    let (preds, golds): (Vec<u8>, Vec<u8>) = joined.into_iter().unzip();
    print_json(&crate::metrics::classification_report(&preds, &golds)?)
}

fn cmd_eval_gen(hyp: &Path, reference: &Path) -> Result<(), CliError> {
    let h: Vec<TextRow> = read_jsonl(hyp)?;
    let r: Vec<TextRow> = read_jsonl(reference)?;
    let joined = join_on_id(
        h.into_iter().map(|r| (r.id, r.text)).collect(),
        r.into_iter().map(|r| (r.id, r.text)).collect(),
        "reference",
    )?;
    let (hyps, refs): (Vec<String>, Vec<String>) = joined.into_iter().unzip();
    let bleu = corpus_bleu(&hyps, &refs)?;
    let rouge = corpus_rouge(&hyps, &refs)?;
    print_json(&json!({
        "bleu": bleu.bleu,
        "r1": rouge.r1.f1,
        "r2": rouge.r2.f1,
        "rl": rouge.rl.f1,
        "rouge_mean": rouge.mean_f1,
    }))
}
