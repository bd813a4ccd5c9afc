//! Per-word answer-content probabilities and the answer representation.

use ndcore::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Floor applied inside the cross-entropy logarithms.
pub const BCE_FLOOR: f64 = 1e-12;

/// `p = sigmoid(w_out . relu(W_in v))`, no biases.
#[derive(Clone, Debug)]
pub struct ContentHead {
    /// `[2H x H]`
    pub w_in: ParamId,
    /// `[H x 1]`
    pub w_out: ParamId,
}

impl ContentHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_in: store.add_weight("content.w_in", 2 * hidden, hidden, rng)?,
            w_out: store.add_weight("content.w_out", hidden, 1, rng)?,
        })
    }

    pub fn load(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w_in: store.id("content.w_in")?,
            w_out: store.id("content.w_out")?,
        })
    }

    /// `[T x 1]` probabilities for the `[T x 2H]` matched passage.
    pub fn probs(&self, tape: &mut Tape, matched: Var) -> Result<Var> {
        let w_in = tape.param(self.w_in)?;
        let w_out = tape.param(self.w_out)?;
        let hidden = tape.matmul(matched, w_in)?;
        let hidden = tape.relu(hidden);
        let logits = tape.matmul(hidden, w_out)?;
        Ok(tape.sigmoid(logits))
    }
}

/// Binary cross-entropy averaged over every word of every passage of one
/// example. `probs[i]` is `[len_i x 1]` and `labels[i]` has `len_i` entries.
pub fn content_loss_one(tape: &mut Tape, probs: &[Var], labels: &[Vec<u8>]) -> Result<Var> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::contract(format!(
            "{} probability vectors for {} label vectors",
            probs.len(),
            labels.len()
        )));
    }
    for (i, (&p, y)) in probs.iter().zip(labels).enumerate() {
        let n = tape.value(p).numel();
        if n != y.len() {
            return Err(Error::contract(format!(
                "passage {i}: {} labels for {n} unmasked words",
                y.len()
            )));
        }
    }
    let p = tape.vcat(probs)?;
    let y: Vec<f64> = labels.iter().flatten().map(|&l| f64::from(l)).collect();
    let n = y.len();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let log_p = tape.log_clamped(p, BCE_FLOOR);
    let one_minus = tape.affine(p, -1.0, 1.0);
    let log_q = tape.log_clamped(one_minus, BCE_FLOOR);
    let pos = tape.mul_const(log_p, &Tensor::from_vec(n, 1, y))?;
    let neg = tape.mul_const(log_q, &Tensor::from_vec(n, 1, not_y))?;
    let total = tape.add(pos, neg)?;
    let total = tape.sum(total);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// `(1/|P|) * sum_k p_k [e_k; c_k]` as a `[1 x D]` row.
pub fn answer_representation(tape: &mut Tape, probs: Var, embeddings: Var) -> Result<Var> {
    let n = tape.value(embeddings).rows();
    if tape.value(probs).shape() != [n, 1] {
        return Err(Error::contract(format!(
            "probabilities {:?} do not align with {n} embedded words",
            tape.value(probs).shape()
        )));
    }
    let pt = tape.transpose(probs);
    let weighted = tape.matmul(pt, embeddings)?;
    Ok(tape.scale(weighted, 1.0 / n as f64))
}

/// Mean of the probabilities over the inclusive span.
pub fn content_score(probs: &[f64], start: usize, end: usize) -> Result<f64> {
    if start > end || end >= probs.len() {
        return Err(Error::contract(format!(
            "span [{start}, {end}] invalid for {} words",
            probs.len()
        )));
    }
    let span = &probs[start..=end];
    Ok(span.iter().sum::<f64>() / span.len() as f64)
}
