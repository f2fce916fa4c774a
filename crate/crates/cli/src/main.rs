use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use factrl::config::{ConfigFile, RunConfig};
use factrl::corpus::{prepare_document, synthesize, LexiconClassifier, PromptRecord, Synthesized};
use factrl::eval::{
    aggregate_scorecards, evaluate_policy, render_table, JudgeScorecard, ScoreScale,
};
use factrl::grpo::train;
use factrl::io::{read_jsonl, to_jsonl_bytes};
use factrl::policy::PolicyParams;
use factrl::rewards::{Gazetteer, RewardModel};
use factrl::synthetic::{encode_prompts, vocabulary_for, FactTask};
use factrl::text::{tokenize, MarkerPair, Terminals, DEFAULT_TERMINALS};
use factrl::Error;

const CONFIG_ENV: &str = "FACTRL_CONFIG";

#[derive(Parser)]
#[command(
    name = "factrl",
    version,
    about = "Fact-aware reward scoring and GRPO training on a tabular policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment documents and synthesize QA, CoT and prompt records.
    Prepare(PrepareArgs),
    /// Score one output read from stdin.
    Score(ScoreArgs),
    /// Train a policy with GRPO.
    Train(TrainArgs),
    /// Sample from a checkpoint and report metrics.
    Eval(EvalArgs),
    /// Aggregate judge scorecards per model.
    JudgeAgg(JudgeAggArgs),
    /// Write the built-in five-fact demo task.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value = DEFAULT_TERMINALS)]
    terminals: String,
    /// Enables QA, CoT and prompt synthesis.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    gazetteer: PathBuf,
    /// Config file holding the reward weights; defaults apply when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    query_id: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Prompt records as JSON-Lines, or a `prepare` output directory
    /// holding `prompts.jsonl`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    gazetteer: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Further prompt files whose tokens join the vocabulary, so the
    /// checkpoint can later be evaluated on them.
    #[arg(long)]
    vocab_from: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    gazetteer: PathBuf,
    /// Supplies reward weights and max_len.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct JudgeAggArgs {
    #[arg(long)]
    cards: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    scale_min: f64,
    #[arg(long, default_value_t = 10.0)]
    scale_max: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    version: String,
    seed: u64,
    config: ConfigFile,
    inputs: Vec<InputDigest>,
    started_at: String,
    finished_at: String,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            report("usage", first.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.code(), e.to_string());
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn report(code: &str, message: String) {
    let line = ErrorLine {
        error: code,
        message: message.replace('\n', " "),
    };
    eprintln!(
        "{}",
        serde_json::to_string(&line).expect("error line serializes")
    );
}

fn run(command: Command) -> factrl::Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Score(a) => score(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::JudgeAgg(a) => judge_agg(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_config(path: Option<&Path>) -> factrl::Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> factrl::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn digest(path: &Path) -> factrl::Result<InputDigest> {
    let bytes = fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn prepare(a: PrepareArgs) -> factrl::Result<()> {
    if a.k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let terminals = Terminals::new(&a.terminals);
    if terminals.is_empty() {
        return Err(Error::InvalidConfig("terminals must not be empty".into()));
    }
    let gazetteer = a
        .gazetteer
        .as_deref()
        .map(Gazetteer::from_jsonl)
        .transpose()?;
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no documents in {}",
            a.input.display()
        )));
    }

    let classifier = LexiconClassifier::default();
    let markers = MarkerPair::default();
    let mut segments = Vec::new();
    let mut synth = Synthesized::default();
    for f in &files {
        let text = fs::read_to_string(f)?;
        let doc_id = f
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let (segs, windows) = prepare_document(&text, &doc_id, &terminals, a.k, &classifier);
        if let Some(g) = &gazetteer {
            let s = synthesize(&windows, g, &markers);
            synth.qa.extend(s.qa);
            synth.cot.extend(s.cot);
            synth.prompts.extend(s.prompts);
        }
        segments.extend(segs);
    }

    fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("segments.jsonl"), &to_jsonl_bytes(&segments)?)?;
    if gazetteer.is_some() {
        write_atomic(&a.out.join("qa.jsonl"), &to_jsonl_bytes(&synth.qa)?)?;
        write_atomic(&a.out.join("cot.jsonl"), &to_jsonl_bytes(&synth.cot)?)?;
        write_atomic(
            &a.out.join("prompts.jsonl"),
            &to_jsonl_bytes(&synth.prompts)?,
        )?;
    }
    Ok(())
}

fn score(a: ScoreArgs) -> factrl::Result<()> {
    let gazetteer = Gazetteer::from_jsonl(&a.gazetteer)?;
    let weights = load_config(a.weights.as_deref())?.resolve().weights;
    let model = RewardModel::new(gazetteer, weights)?;
    let mut text = String::new();
    io::stdin().read_to_string(&mut text)?;
    let scored = model.score(&tokenize(&text), &a.query_id)?;
    println!("{}", serde_json::to_string(&scored.breakdown)?);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> factrl::Result<()> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut file = load_config(a.config.as_deref())?;
    // flags override the file
    file.seed = a.seed.or(file.seed);
    file.threads = a.threads.or(file.threads);
    file.iterations = a.iterations.or(file.iterations);
    file.learning_rate = a.learning_rate.or(file.learning_rate);
    let cfg: RunConfig = file.resolve();
    cfg.validate()?;

    let gazetteer = Gazetteer::from_jsonl(&a.gazetteer)?;
    let corpus = if a.corpus.is_dir() {
        a.corpus.join("prompts.jsonl")
    } else {
        a.corpus.clone()
    };
    let records: Vec<PromptRecord> = read_jsonl(&corpus)?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no prompts in {}",
            corpus.display()
        )));
    }
    let mut vocab_records = records.clone();
    for p in &a.vocab_from {
        vocab_records.extend(read_jsonl::<PromptRecord>(p)?);
    }
    let vocab = vocabulary_for(&gazetteer, &vocab_records, std::iter::empty::<&str>())?;
    let prompts = encode_prompts(&vocab, &records)?;
    let outcome = train(
        &cfg.train,
        &prompts,
        &gazetteer,
        &cfg.weights,
        PolicyParams::uniform(vocab),
    )?;

    let mut inputs = Vec::new();
    if let Some(c) = &a.config {
        inputs.push(digest(c)?);
    }
    inputs.push(digest(&corpus)?);
    inputs.push(digest(&a.gazetteer)?);
    for p in &a.vocab_from {
        inputs.push(digest(p)?);
    }

    fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("policy.bin"), &outcome.params.to_bytes())?;
    write_atomic(
        &a.out.join("metrics.jsonl"),
        &to_jsonl_bytes(&outcome.metrics)?,
    )?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.train.seed,
        config: cfg.snapshot(),
        inputs,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&a.out.join("manifest.json"), &bytes)?;
    Ok(())
}

fn eval(a: EvalArgs) -> factrl::Result<()> {
    let cfg = load_config(a.config.as_deref())?.resolve();
    cfg.weights.validate()?;
    let params = PolicyParams::load(&a.checkpoint)?;
    let gazetteer = Gazetteer::from_jsonl(&a.gazetteer)?;
    let records: Vec<PromptRecord> = read_jsonl(&a.prompts)?;
    let prompts = encode_prompts(params.vocab(), &records)?;
    let model = RewardModel::new(gazetteer, cfg.weights)?;
    let m = evaluate_policy(
        &params,
        &prompts,
        &model,
        a.samples,
        cfg.train.max_len,
        a.seed,
        None,
    )?;
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

fn judge_agg(a: JudgeAggArgs) -> factrl::Result<()> {
    let scale = ScoreScale {
        min: a.scale_min,
        max: a.scale_max,
    };
    if scale.min.partial_cmp(&scale.max) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidConfig(
            "scale_min must be below scale_max".into(),
        ));
    }
    let cards: Vec<JudgeScorecard> = read_jsonl(&a.cards)?;
    let rows = aggregate_scorecards(&cards, scale)?;
    let mut out = io::stdout().lock();
    out.write_all(&to_jsonl_bytes(&rows)?)?;
    writeln!(out)?;
    out.write_all(render_table(&rows).as_bytes())?;
    Ok(())
}

fn synth(a: SynthArgs) -> factrl::Result<()> {
    let task = FactTask::new()?;
    fs::create_dir_all(&a.out)?;
    write_atomic(
        &a.out.join("gazetteer.jsonl"),
        &to_jsonl_bytes(task.gazetteer.entries())?,
    )?;
    write_atomic(&a.out.join("train.jsonl"), &to_jsonl_bytes(&task.train)?)?;
    write_atomic(
        &a.out.join("heldout.jsonl"),
        &to_jsonl_bytes(&task.heldout)?,
    )?;
    Ok(())
}
