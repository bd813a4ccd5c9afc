//! Cross-passage attention among answer candidates and their scores.

use ndcore::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::boundary::LOG_FLOOR;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    /// `[n x n]`, diagonal exactly 0.
    pub similarity: Var,
    /// `[n x n]` row-stochastic attention.
    pub weights: Var,
    /// `[n x D]` attended representations.
    pub attended: Var,
}

/// Attention of every candidate over all candidates. `reprs` is `[n x D]`.
/// With `mask_self` the diagonal is excluded from the softmax; a lone
/// candidate then attends to nothing and gets a zero vector.
pub fn cross_attend(tape: &mut Tape, reprs: Var, mask_self: bool) -> Result<CrossAttention> {
    let (n, d) = tape.value(reprs).dims2()?;
    if n == 0 {
        return Err(Error::contract("cross attention over zero candidates"));
    }
    let off_diag: Vec<f64> = (0..n * n).map(|k| f64::from(k / n != k % n)).collect();
    let rt = tape.transpose(reprs);
    let raw = tape.matmul(reprs, rt)?;
    let similarity = tape.mul_const(raw, &Tensor::from_vec(n, n, off_diag))?;
    if mask_self && n == 1 {
        let weights = tape.constant(Tensor::zeros(1, 1));
        let attended = tape.constant(Tensor::zeros(1, d));
        return Ok(CrossAttention {
            similarity,
            weights,
            attended,
        });
    }
    let mask: Option<Vec<bool>> = mask_self.then(|| (0..n * n).map(|k| k / n != k % n).collect());
    let weights = tape.softmax_rows(similarity, mask.as_deref())?;
    let attended = tape.matmul(weights, reprs)?;
    Ok(CrossAttention {
        similarity,
        weights,
        attended,
    })
}

/// Scores `w . [r; r~; r*r~]` normalized over the candidates of one example.
#[derive(Clone, Debug)]
pub struct Verifier {
    /// `[3D x 1]`, no bias.
    pub w: ParamId,
}

impl Verifier {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, repr_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w: store.add_weight("verifier.w", 3 * repr_dim, 1, rng)?,
        })
    }

    pub fn load(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w: store.id("verifier.w")?,
        })
    }

    /// `[1 x n]` probabilities.
    pub fn scores(&self, tape: &mut Tape, reprs: Var, attended: Var) -> Result<Var> {
        let w = tape.param(self.w)?;
        verify_scores(tape, w, reprs, attended)
    }
}

/// The scoring half of [`Verifier::scores`] with an explicit weight node.
pub fn verify_scores(tape: &mut Tape, w: Var, reprs: Var, attended: Var) -> Result<Var> {
    let prod = tape.mul(reprs, attended)?;
    let fused = tape.hcat(&[reprs, attended, prod])?;
    let g = tape.matmul(fused, w)?;
    let g = tape.transpose(g);
    Ok(tape.softmax_rows(g, None)?)
}

/// `-log p[gold]` for one example.
pub fn verification_loss_one(tape: &mut Tape, probs: Var, gold: usize) -> Result<Var> {
    let n = tape.value(probs).numel();
    if gold >= n {
        return Err(Error::contract(format!(
            "gold candidate {gold} outside {n} candidates"
        )));
    }
    let p = tape.pick(probs, gold)?;
    let lp = tape.log_clamped(p, LOG_FLOOR);
    Ok(tape.scale(lp, -1.0))
}
