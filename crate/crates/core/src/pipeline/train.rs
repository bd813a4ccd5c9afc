use std::collections::HashMap;

use ndcore::{Adam, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{DevMetric, ModelConfig};
use super::model::Model;
use super::predict::predict_all;
use crate::data::{make_batch, prepare_training_set, Example, Vocabulary};
use crate::encoder::PretrainedVectors;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, ROUGE_BETA};

/// Loss values after one optimizer step, each a batch mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub boundary: f64,
    pub content: f64,
    pub verification: f64,
    /// Joint loss plus L2.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    /// Dev score with EMA weights; `None` without a dev set.
    pub dev_metric: Option<f64>,
    pub improved: bool,
}

#[derive(Clone, Copy, Debug)]
pub enum TrainEvent<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub metric: DevMetric,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    /// Training examples with no usable gold span.
    pub dropped_examples: usize,
    /// Training examples whose gold span was cut off by truncation, summed
    /// over epochs.
    pub truncated_examples: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the best dev evaluation, or the final state without dev data.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub report: TrainReport,
}

/// The concrete metric `Auto` stands for on this dev set.
pub fn resolve_metric(metric: DevMetric, dev: &[Example]) -> DevMetric {
    match metric {
        DevMetric::Auto => {
            let token_data = !dev.is_empty()
                && dev.iter().all(|ex| {
                    ex.gold_answer_tokens()
                        .is_some_and(|t| ex.references.iter().any(|r| *r == t.join(" ")))
                });
            if token_data {
                DevMetric::ExactSpan
            } else {
                DevMetric::RougeL
            }
        }
        m => m,
    }
}

/// Predicts `examples` with the given weights and scores them.
pub fn dev_score(model: &Model, examples: &[Example], metric: DevMetric) -> Result<f64> {
    let preds = predict_all(model, examples)?;
    let answers: HashMap<String, Vec<String>> = preds
        .into_iter()
        .map(|p| {
            let tokens = p.answer().tokens.clone();
            (p.id, tokens)
        })
        .collect();
    let opts = EvalOptions {
        rouge_beta: ROUGE_BETA,
        case_fold: model.config.case_fold,
    };
    let report = evaluate(&answers, examples, opts)?;
    Ok(match resolve_metric(metric, examples) {
        DevMetric::ExactSpan => report.exact_span_accuracy.unwrap_or(0.0),
        _ => report.rouge_l,
    })
}

/// Builds the vocabulary and a fresh model for `train` and `dev`.
pub fn init_model(config: &ModelConfig, train: &[Example], dev: &[Example]) -> Result<Model> {
    let vocab = Vocabulary::from_examples(train.iter().chain(dev));
    let pretrained = match &config.pretrained_embeddings {
        Some(path) => Some(PretrainedVectors::load(path, config.word_dim)?),
        None => None,
    };
    Model::new(config.clone(), vocab, pretrained.as_ref())
}

/// Trains from scratch. Each epoch shuffles the training set, takes one
/// Adam step and one EMA update per batch, then scores the dev set with
/// the EMA weights. Stops after `max_epochs`, after `patience` epochs
/// without improvement, or once `stop_at_metric` is reached.
pub fn train(
    config: &ModelConfig,
    train: &[Example],
    dev: &[Example],
    on_event: &mut dyn FnMut(TrainEvent),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (examples, dropped) = prepare_training_set(train);
    if examples.is_empty() {
        return Err(Error::Config("no training example has a usable gold span".into()));
    }
    let mut model = init_model(config, &examples, dev)?;
    let mut optimizer = Adam::new(config.adam(), &model.store);
    let metric = resolve_metric(config.dev_metric, dev);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut report = TrainReport {
        metric,
        steps: Vec::new(),
        epochs: Vec::new(),
        best_epoch: None,
        best_metric: None,
        dropped_examples: dropped,
        truncated_examples: 0,
    };
    let mut best: Option<Checkpoint> = None;
    let mut stale = 0;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batch_config = config.batch(true);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let items: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let batch = make_batch(&items, &model.vocab, &batch_config)?;
            report.truncated_examples += batch.dropped_examples;
            if batch.is_empty() {
                continue;
            }
            let (record, grads) = {
                let mut tape = Tape::with_params(&model.store);
                let parts = model.batch_loss(&mut tape, &batch)?;
                let record = StepRecord {
                    step: step + 1,
                    epoch,
                    boundary: tape.value(parts.boundary).item(),
                    content: tape.value(parts.content).item(),
                    verification: tape.value(parts.verification).item(),
                    total: tape.value(parts.total).item(),
                };
                for (component, v) in [
                    ("boundary", record.boundary),
                    ("content", record.content),
                    ("verification", record.verification),
                    ("total", record.total),
                ] {
                    if !v.is_finite() {
                        return Err(Error::Diverged {
                            step: record.step,
                            component,
                        });
                    }
                }
                (record, tape.backward(parts.total)?)
            };
            optimizer.step(&mut model.store, &grads)?;
            model.store.ema_update(config.ema_decay)?;
            step += 1;
            on_event(TrainEvent::Step(&record));
            report.steps.push(record);
        }

        let dev_metric = if dev.is_empty() {
            None
        } else {
            Some(dev_score(&model.eval_view(), dev, metric)?)
        };
        let improved = match (dev_metric, report.best_metric) {
            (None, _) => true,
            (Some(m), None) => m.is_finite(),
            (Some(m), Some(b)) => m > b,
        };
        if improved {
            stale = 0;
            report.best_epoch = Some(epoch);
            report.best_metric = dev_metric;
            best = Some(Checkpoint {
                model: model.clone(),
                optimizer: Some(optimizer.clone()),
                step,
            });
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            step,
            dev_metric,
            improved,
        };
        on_event(TrainEvent::Epoch(&record));
        report.epochs.push(record);

        let reached = matches!((dev_metric, config.stop_at_metric), (Some(m), Some(t)) if m >= t);
        if reached || (dev_metric.is_some() && stale >= config.patience) {
            break;
        }
    }

    let last = Checkpoint {
        model,
        optimizer: Some(optimizer),
        step,
    };
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        report,
    })
}
