//! Pointer-network start/end prediction over all passages of an example.

use ndcore::{LstmCell, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::data::OffsetTable;
use crate::error::{Error, Result};

/// Floor applied to probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug)]
pub struct PointerNet {
    /// `[2H x A]` projection of passage vectors.
    pub w_passage: ParamId,
    /// `[H x A]` projection of the decoder state.
    pub w_state: ParamId,
    /// `[A x 1]` score vector.
    pub w_score: ParamId,
    /// `[2H x H]` and `[1 x H]`: question summary to the initial decoder state.
    pub w_init: ParamId,
    pub b_init: ParamId,
    pub decoder: LstmCell,
}

/// Start and end distributions as `[1 x N]` rows over the concatenated axis.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryDistribution {
    pub start: Var,
    pub end: Var,
}

impl PointerNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Result<Self> {
        let attn = hidden;
        Ok(Self {
            w_passage: store.add_weight("pointer.w_passage", 2 * hidden, attn, rng)?,
            w_state: store.add_weight("pointer.w_state", hidden, attn, rng)?,
            w_score: store.add_weight("pointer.w_score", attn, 1, rng)?,
            w_init: store.add_weight("pointer.w_init", 2 * hidden, hidden, rng)?,
            b_init: store.add_bias("pointer.b_init", hidden, 0.0)?,
            decoder: LstmCell::new(store, "pointer.decoder", 2 * hidden, hidden, rng)?,
        })
    }

    pub fn load(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w_passage: store.id("pointer.w_passage")?,
            w_state: store.id("pointer.w_state")?,
            w_score: store.id("pointer.w_score")?,
            w_init: store.id("pointer.w_init")?,
            b_init: store.id("pointer.b_init")?,
            decoder: LstmCell::load(store, "pointer.decoder")?,
        })
    }

    /// `passages` is `[N x 2H]`, every passage's matched rows stacked;
    /// `question` is the `[1 x 2H]` final question state.
    pub fn predict(&self, tape: &mut Tape, passages: Var, question: Var) -> Result<BoundaryDistribution> {
        if tape.value(passages).rows() == 0 {
            return Err(Error::contract("pointer network over zero positions"));
        }
        let w_init = tape.param(self.w_init)?;
        let b_init = tape.param(self.b_init)?;
        let h0 = tape.matmul(question, w_init)?;
        let h0 = tape.add_row(h0, b_init)?;
        let c0 = self.decoder.zero_state(tape);

        let w_passage = tape.param(self.w_passage)?;
        let keys = tape.matmul(passages, w_passage)?;

        let (start, ctx) = self.attend(tape, keys, passages, h0)?;
        let ctx = self.decoder.project_inputs(tape, ctx)?;
        let (h1, _) = self.decoder.step(tape, ctx, h0, c0)?;
        let (end, _) = self.attend(tape, keys, passages, h1)?;
        Ok(BoundaryDistribution { start, end })
    }

    /// Attention weights `[1 x N]` for decoder state `h` and the attended
    /// passage vector `[1 x 2H]`.
    fn attend(&self, tape: &mut Tape, keys: Var, passages: Var, h: Var) -> Result<(Var, Var)> {
        let w_state = tape.param(self.w_state)?;
        let w_score = tape.param(self.w_score)?;
        let q = tape.matmul(h, w_state)?;
        let pre = tape.add_row(keys, q)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, w_score)?;
        let scores = tape.transpose(scores);
        let alpha = tape.softmax_rows(scores, None)?;
        let ctx = tape.matmul(alpha, passages)?;
        Ok((alpha, ctx))
    }
}

/// `-(log a1[start] + log a2[end])` for one example.
pub fn boundary_loss_one(tape: &mut Tape, dist: BoundaryDistribution, start: usize, end: usize) -> Result<Var> {
    let n = tape.value(dist.start).numel();
    if start >= n || end >= n {
        return Err(Error::contract(format!(
            "gold boundary ({start}, {end}) outside {n} positions"
        )));
    }
    let ps = tape.pick(dist.start, start)?;
    let pe = tape.pick(dist.end, end)?;
    let ls = tape.log_clamped(ps, LOG_FLOOR);
    let le = tape.log_clamped(pe, LOG_FLOOR);
    let sum = tape.add(ls, le)?;
    Ok(tape.scale(sum, -1.0))
}

/// Batch mean of per-example boundary losses.
pub fn boundary_loss(tape: &mut Tape, items: &[(BoundaryDistribution, usize, usize)]) -> Result<Var> {
    let losses = items
        .iter()
        .map(|&(d, s, e)| boundary_loss_one(tape, d, s, e))
        .collect::<Result<Vec<_>>>()?;
    mean_of(tape, &losses)
}

pub(crate) fn mean_of(tape: &mut Tape, items: &[Var]) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::contract("mean over an empty batch"));
    }
    let stacked = tape.vcat(items)?;
    Ok(tape.mean(stacked))
}

/// Best span of one passage, positions both local and global.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanCandidate {
    pub passage: usize,
    pub start: usize,
    pub end: usize,
    pub global_start: usize,
    pub global_end: usize,
    /// `start_probs[global_start] * end_probs[global_end]`.
    pub score: f64,
}

/// For every nonempty passage, the span maximizing `start[s] * end[e]` with
/// `s <= e < s + max_span_len`. Ties go to the smaller start, then the
/// shorter span.
pub fn extract_candidates(
    start_probs: &[f64],
    end_probs: &[f64],
    offsets: &OffsetTable,
    max_span_len: usize,
) -> Result<Vec<SpanCandidate>> {
    if start_probs.len() != offsets.total() || end_probs.len() != offsets.total() {
        return Err(Error::contract(format!(
            "distributions of length {} / {} for {} positions",
            start_probs.len(),
            end_probs.len(),
            offsets.total()
        )));
    }
    if max_span_len == 0 {
        return Err(Error::contract("max_span_len must be positive"));
    }
    let mut out = Vec::new();
    for p in 0..offsets.num_passages() {
        let range = offsets.passage_range(p);
        let mut best: Option<(usize, usize, f64)> = None;
        for s in range.clone() {
            let stop = range.end.min(s + max_span_len);
            for e in s..stop {
                let score = start_probs[s] * end_probs[e];
                if best.is_none_or(|(_, _, b)| score > b) {
                    best = Some((s, e, score));
                }
            }
        }
        if let Some((s, e, score)) = best {
            out.push(SpanCandidate {
                passage: p,
                start: s - range.start,
                end: e - range.start,
                global_start: s,
                global_end: e,
                score,
            });
        }
    }
    Ok(out)
}

/// Row of a `[1 x N]` distribution as plain values.
pub fn probabilities(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).data().to_vec()
}

/// A `[1 x N]` constant distribution, for building toy inputs.
pub fn constant_distribution(tape: &mut Tape, probs: Vec<f64>) -> Var {
    tape.constant(Tensor::row(probs))
}
