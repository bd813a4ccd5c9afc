use ndcore::Tape;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::boundary::extract_candidates;
use crate::content::content_score;
use crate::data::{make_batch, Example};
use crate::error::{Error, Result};

/// Scores below this are raised to it before multiplying.
pub const SCORE_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub passage: usize,
    pub start: usize,
    pub end: usize,
    pub global_start: usize,
    pub global_end: usize,
    pub boundary_score: f64,
    pub content_score: f64,
    pub verification_score: f64,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// Index into `candidates`.
    pub chosen: usize,
    pub candidates: Vec<AnswerCandidate>,
    /// Product of the chosen candidate's active scores.
    pub score: f64,
}

impl Prediction {
    pub fn answer(&self) -> &AnswerCandidate {
        &self.candidates[self.chosen]
    }
}

/// Index and value of the largest floored product of each row of factors.
/// Ties go to the earliest row; `None` for no rows.
pub fn select_by_product<F: AsRef<[f64]>>(factors: &[F]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in factors.iter().enumerate() {
        let product = f.as_ref().iter().map(|s| s.max(SCORE_FLOOR)).product::<f64>();
        if best.is_none_or(|(_, b)| product > b) {
            best = Some((i, product));
        }
    }
    best
}

/// One candidate per passage, scored and ranked by the score product.
/// Uses the model's live weights; pass [`Model::eval_view`] for EMA weights.
pub fn predict(model: &Model, example: &Example) -> Result<Prediction> {
    let batch = make_batch(
        std::slice::from_ref(example),
        &model.vocab,
        &model.config.batch(false),
    )?;
    let inputs = batch.item(0);
    let offsets = &batch.offsets[0];
    let mut tape = Tape::with_params(&model.store);
    let out = model.forward(&mut tape, &inputs)?;

    let start = tape.value(out.boundary.start).data();
    let end = tape.value(out.boundary.end).data();
    let spans = extract_candidates(start, end, offsets, model.config.max_span_len)?;
    if spans.is_empty() {
        return Err(Error::NoAnswer(example.id.clone()));
    }
    let verification = tape.value(out.verification).data();
    let candidates = spans
        .iter()
        .map(|s| {
            let probs = tape.value(out.content[s.passage]).data();
            Ok(AnswerCandidate {
                passage: s.passage,
                start: s.start,
                end: s.end,
                global_start: s.global_start,
                global_end: s.global_end,
                boundary_score: s.score,
                content_score: content_score(probs, s.start, s.end)?,
                verification_score: verification[s.passage],
                tokens: batch.passage_tokens[0][s.passage][s.start..=s.end].to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let factors: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| {
            let mut f = vec![c.boundary_score];
            if model.config.score_content {
                f.push(c.content_score);
            }
            if model.config.score_verification {
                f.push(c.verification_score);
            }
            f
        })
        .collect();
    let (chosen, score) = select_by_product(&factors).ok_or_else(|| Error::NoAnswer(example.id.clone()))?;
    Ok(Prediction {
        id: example.id.clone(),
        chosen,
        candidates,
        score,
    })
}

/// [`predict`] over many examples in parallel; output order follows input.
pub fn predict_all(model: &Model, examples: &[Example]) -> Result<Vec<Prediction>> {
    examples.par_iter().map(|ex| predict(model, ex)).collect()
}
