//! Recurrent layers built from tape primitives.

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Parameters of one LSTM direction.
///
/// Gate pre-activations are `x * w_input + h * w_hidden + bias`, a `1 x 4H`
/// row laid out as input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub const FORGET_BIAS: f64 = 1.0;

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_input = store.add_weight(&format!("{prefix}.w_input"), input_dim, 4 * hidden, rng)?;
        let w_hidden = store.add_weight(&format!("{prefix}.w_hidden"), hidden, 4 * hidden, rng)?;
        let bias = store.add_bias(&format!("{prefix}.bias"), 4 * hidden, 0.0)?;
        store.get_mut(bias).value.data_mut()[hidden..2 * hidden].fill(Self::FORGET_BIAS);
        store.get_mut(bias).ema_shadow = store.value(bias).clone();
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }

    /// Looks up an existing cell by name prefix.
    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_input = store.id(&format!("{prefix}.w_input"))?;
        let w_hidden = store.id(&format!("{prefix}.w_hidden"))?;
        let bias = store.id(&format!("{prefix}.bias"))?;
        let (input_dim, four_h) = store.value(w_input).dims2()?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden: four_h / 4,
        })
    }

    /// Zero `1 x H` state.
    pub fn zero_state(&self, tape: &mut Tape) -> Var {
        tape.constant(Tensor::zeros(1, self.hidden))
    }

    /// Projects a whole `T x D` input sequence at once: `X * w_input + bias`.
    pub fn project_inputs(&self, tape: &mut Tape, seq: Var) -> Result<Var> {
        let d = tape.value(seq).cols();
        if d != self.input_dim {
            return Err(Error::contract(format!(
                "LSTM expects inputs of width {}, got {d}",
                self.input_dim
            )));
        }
        let w = tape.param(self.w_input)?;
        let b = tape.param(self.bias)?;
        let xw = tape.matmul(seq, w)?;
        tape.add_row(xw, b)
    }

    /// One recurrence step from pre-projected input rows. Each row of
    /// `x_proj` advances the state in the same row of `h_prev` and `c_prev`.
    pub fn step(&self, tape: &mut Tape, x_proj: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let h = self.hidden;
        let rows = tape.value(x_proj).rows();
        for (what, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
            let dims = tape.value(v).dims2()?;
            if dims != (rows, h) {
                return Err(Error::contract(format!(
                    "LSTM {what} must be {rows}x{h}, got {}x{}",
                    dims.0, dims.1
                )));
            }
        }
        let wh = tape.param(self.w_hidden)?;
        let rec = tape.matmul(h_prev, wh)?;
        let pre = tape.add(x_proj, rec)?;
        let i_pre = tape.slice_cols(pre, 0, h)?;
        let f_pre = tape.slice_cols(pre, h, h)?;
        let o_pre = tape.slice_cols(pre, 2 * h, h)?;
        let g_pre = tape.slice_cols(pre, 3 * h, h)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c))
    }

    /// Runs over the rows of `seq` (`T x D`), front to back or back to front.
    /// Returned states are indexed by input position either way.
    pub fn run(&self, tape: &mut Tape, seq: Var, reverse: bool) -> Result<Vec<Var>> {
        let t_len = tape.value(seq).rows();
        let proj = self.project_inputs(tape, seq)?;
        let mut h = self.zero_state(tape);
        let mut c = self.zero_state(tape);
        let mut out = vec![h; t_len];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..t_len).rev())
        } else {
            Box::new(0..t_len)
        };
        for t in order {
            let x = tape.slice_rows(proj, t, 1)?;
            (h, c) = self.step(tape, x, h, c)?;
            out[t] = h;
        }
        Ok(out)
    }

    /// Runs several sequences of equal length side by side, one batched
    /// step per position. Equivalent to calling [`run`](Self::run) on each.
    /// Returns one `T x H` state matrix per sequence.
    pub fn run_many(&self, tape: &mut Tape, seqs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let n = seqs.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let t_len = tape.value(seqs[0]).rows();
        if seqs.iter().any(|s| tape.value(*s).rows() != t_len) {
            return Err(Error::contract("run_many needs sequences of equal length"));
        }
        if t_len == 0 {
            return Err(Error::contract("LSTM over an empty sequence"));
        }
        // Row t*n + i of the time-major stack is position t of sequence i.
        let stacked = tape.vcat(seqs)?;
        let time_major: Vec<usize> = (0..t_len)
            .flat_map(|t| (0..n).map(move |i| i * t_len + t))
            .collect();
        let x = tape.gather_rows(stacked, &time_major)?;
        let proj = self.project_inputs(tape, x)?;
        let mut h = tape.constant(Tensor::zeros(n, self.hidden));
        let mut c = h;
        let mut out = vec![h; t_len];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..t_len).rev())
        } else {
            Box::new(0..t_len)
        };
        for t in order {
            let xt = tape.slice_rows(proj, t * n, n)?;
            (h, c) = self.step(tape, xt, h, c)?;
            out[t] = h;
        }
        let all = tape.vcat(&out)?;
        (0..n)
            .map(|i| {
                let rows: Vec<usize> = (0..t_len).map(|t| t * n + i).collect();
                tape.gather_rows(all, &rows)
            })
            .collect()
    }
}

/// One full LSTM cell update: `(h, c)` from input `x` and previous state.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    params: &LstmCell,
) -> Result<(Var, Var)> {
    let dims = tape.value(x).dims2()?;
    if dims.0 != 1 {
        return Err(Error::contract(format!(
            "lstm_cell takes a single input row, got {}x{}",
            dims.0, dims.1
        )));
    }
    let proj = params.project_inputs(tape, x)?;
    params.step(tape, proj, h_prev, c_prev)
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmOutput {
    /// `T x 2H`; row `t` is `[forward_t, backward_t]`.
    pub states: Var,
    /// Forward state after the last position.
    pub last_forward: Var,
    /// Backward state after reaching position 0.
    pub last_backward: Var,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::new(store, &format!("{prefix}.fwd"), input_dim, hidden, rng)?,
            backward: LstmCell::new(store, &format!("{prefix}.bwd"), input_dim, hidden, rng)?,
        })
    }

    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::load(store, &format!("{prefix}.fwd"))?,
            backward: LstmCell::load(store, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn run(&self, tape: &mut Tape, seq: Var) -> Result<BiLstmOutput> {
        let t_len = tape.value(seq).rows();
        if t_len == 0 {
            return Err(Error::contract("BiLSTM over an empty sequence"));
        }
        let fwd = self.forward.run(tape, seq, false)?;
        let bwd = self.backward.run(tape, seq, true)?;
        let f = tape.vcat(&fwd)?;
        let b = tape.vcat(&bwd)?;
        let states = tape.hcat(&[f, b])?;
        Ok(BiLstmOutput {
            states,
            last_forward: fwd[t_len - 1],
            last_backward: bwd[0],
        })
    }
}

impl BiLstm {
    /// [`run`](Self::run) over several sequences of equal length at once.
    pub fn run_many(&self, tape: &mut Tape, seqs: &[Var]) -> Result<Vec<BiLstmOutput>> {
        let fwd = self.forward.run_many(tape, seqs, false)?;
        let bwd = self.backward.run_many(tape, seqs, true)?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| {
                let t_len = tape.value(f).rows();
                Ok(BiLstmOutput {
                    states: tape.hcat(&[f, b])?,
                    last_forward: tape.slice_rows(f, t_len - 1, 1)?,
                    last_backward: tape.slice_rows(b, 0, 1)?,
                })
            })
            .collect()
    }
}

/// Masked row softmax; see [`Tape::softmax_rows`].
pub fn softmax(tape: &mut Tape, scores: Var, mask: Option<&[bool]>) -> Result<Var> {
    tape.softmax_rows(scores, mask)
}
