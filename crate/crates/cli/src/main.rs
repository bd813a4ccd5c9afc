//! `crossverify`: train, predict, evaluate, generate synthetic data and
//! summarize datasets from the command line.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use crossverify::data::{generate_synthetic, load_jsonl, write_jsonl, Example};
use crossverify::metrics::{evaluate, span_validity_stats, EvalOptions, ROUGE_BETA};
use crossverify::pipeline::{predict_all, train, Checkpoint, ConfigFile, EpochRecord, Prediction, StepRecord, TrainEvent};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "crossverify", version, about = "Multi-passage reading comprehension with cross-passage answer verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, a log and a report to a directory.
    Train {
        /// Flat TOML file of model settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        /// Selects the retained checkpoint; without it the last state is kept.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer every example of a JSONL file with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions against gold examples; prints a JSON report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare tokens verbatim instead of lowercased.
        #[arg(long)]
        no_case_fold: bool,
        #[arg(long, default_value_t = ROUGE_BETA)]
        rouge_beta: f64,
    },
    /// Write synthetic train.jsonl and dev.jsonl.
    Synth {
        /// Config file; only `synth_*` keys are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset summary with multi-answer and multi-span proportions.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Token F1 above which a passage span counts as valid.
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
    },
}

/// One line of the prediction file.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    answer: Vec<String>,
    #[serde(default)]
    passage: usize,
    #[serde(default)]
    start: usize,
    #[serde(default)]
    end: usize,
    #[serde(default)]
    boundary_score: f64,
    #[serde(default)]
    content_score: f64,
    #[serde(default)]
    verification_score: f64,
    #[serde(default)]
    score: f64,
}

impl From<&Prediction> for PredictionLine {
    fn from(p: &Prediction) -> Self {
        let c = p.answer();
        Self {
            id: p.id.clone(),
            answer: c.tokens.clone(),
            passage: c.passage,
            start: c.start,
            end: c.end,
            boundary_score: c.boundary_score,
            content_score: c.content_score,
            verification_score: c.verification_score,
            score: p.score,
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ConfigFile::default()),
    }
}

fn load_examples(path: &Path) -> Result<Vec<Example>> {
    load_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run_train(config: Option<&Path>, train_path: &Path, dev_path: Option<&Path>, out: &Path) -> Result<()> {
    let config = load_config(config)?.model;
    let train_set = load_examples(train_path)?;
    let dev = match dev_path {
        Some(p) => load_examples(p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut write_error = None;
    let mut on_event = |event: TrainEvent| {
        let line = match event {
            TrainEvent::Step(s) => LogLine::Step(s),
            TrainEvent::Epoch(e) => {
                match e.dev_metric {
                    Some(m) => eprintln!("epoch {} step {} dev {m:.4}{}", e.epoch, e.step, if e.improved { " *" } else { "" }),
                    None => eprintln!("epoch {} step {}", e.epoch, e.step),
                }
                LogLine::Epoch(e)
            }
        };
        let result = serde_json::to_writer(&mut log, &line)
            .map_err(anyhow::Error::from)
            .and_then(|_| writeln!(log).map_err(anyhow::Error::from));
        if let Err(e) = result {
            write_error.get_or_insert(e);
        }
    };
    let outcome = train(&config, &train_set, &dev, &mut on_event)?;
    if let Some(e) = write_error {
        return Err(e.context(format!("writing {}", log_path.display())));
    }
    log.flush()?;
    outcome.best.save(out.join("best.json"))?;
    outcome.last.save(out.join("last.json"))?;
    write_json(&out.join("report.json"), &outcome.report)?;
    if outcome.report.dropped_examples > 0 {
        eprintln!("{} training examples had no usable gold span", outcome.report.dropped_examples);
    }
    match outcome.report.best_metric {
        Some(m) => eprintln!("best dev {:?} {m:.4} at epoch {}", outcome.report.metric, outcome.report.best_epoch.unwrap_or(0)),
        None => eprintln!("trained {} epochs", outcome.report.epochs.len()),
    }
    Ok(())
}

fn run_predict(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let examples = load_examples(input)?;
    let preds = predict_all(&ck.model.eval_view(), &examples)?;
    let mut w = BufWriter::new(File::create(output).with_context(|| format!("creating {}", output.display()))?);
    for p in &preds {
        serde_json::to_writer(&mut w, &PredictionLine::from(p))?;
        writeln!(w)?;
    }
    w.flush()?;
    eprintln!("wrote {} predictions", preds.len());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine =
            serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if out.insert(p.id.clone(), p.answer).is_some() {
            bail!("{} line {}: duplicate id `{}`", path.display(), i + 1, p.id);
        }
    }
    Ok(out)
}

fn run_eval(pred: &Path, gold: &Path, out: Option<&Path>, opts: EvalOptions) -> Result<()> {
    let predicted = read_predictions(pred)?;
    let gold = load_examples(gold)?;
    let report = evaluate(&predicted, &gold, opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn run_synth(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let synth = load_config(config)?.synth;
    let (train_set, dev) = generate_synthetic(&synth, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_jsonl(out.join("train.jsonl"), &train_set)?;
    write_jsonl(out.join("dev.jsonl"), &dev)?;
    eprintln!("wrote {} train and {} dev examples", train_set.len(), dev.len());
    Ok(())
}

#[derive(Serialize)]
struct DatasetSummary {
    examples: usize,
    mean_passages: f64,
    mean_passage_len: f64,
    with_gold_span: usize,
    multiple_answers: f64,
    multiple_spans: f64,
}

fn run_stats(input: &Path, threshold: f64) -> Result<()> {
    let examples = load_examples(input)?;
    let n = examples.len().max(1) as f64;
    let passages: usize = examples.iter().map(|e| e.passages.len()).sum();
    let tokens: usize = examples.iter().flat_map(|e| &e.passages).map(Vec::len).sum();
    let spans = span_validity_stats(&examples, threshold);
    let summary = DatasetSummary {
        examples: examples.len(),
        mean_passages: passages as f64 / n,
        mean_passage_len: if passages == 0 { 0.0 } else { tokens as f64 / passages as f64 },
        with_gold_span: examples.iter().filter(|e| e.gold_span.is_some()).count(),
        multiple_answers: spans.multiple_answers,
        multiple_spans: spans.multiple_spans,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, train, dev, out } => run_train(config.as_deref(), &train, dev.as_deref(), &out),
        Command::Predict { checkpoint, input, output } => run_predict(&checkpoint, &input, &output),
        Command::Eval {
            pred,
            gold,
            out,
            no_case_fold,
            rouge_beta,
        } => run_eval(
            &pred,
            &gold,
            out.as_deref(),
            EvalOptions {
                rouge_beta,
                case_fold: !no_case_fold,
            },
        ),
        Command::Synth { config, seed, out } => run_synth(config.as_deref(), seed, &out),
        Command::Stats { input, threshold } => run_stats(&input, threshold),
    }
}
