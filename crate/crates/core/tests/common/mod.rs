//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod grad_cases;

use crossverify::data::{generate_synthetic, make_batch, Batch, Example, SynthConfig, Vocabulary};
use crossverify::pipeline::{Model, ModelConfig};
use ndcore::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-6;

/// `|a - n| / (|a| + |n|)` over whole tensors; 0 when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
}

/// Reverse-mode against central-difference gradients, per tensor.
pub struct GradientReport {
    /// `(name, relative error)` for every parameter and leaf.
    pub tensors: Vec<(String, f64)>,
    /// Relative error of all gradients concatenated into one vector.
    pub overall: f64,
}

impl GradientReport {
    pub fn worst(&self) -> (f64, &str) {
        self.tensors.iter().fold(
            (0.0, ""),
            |acc, (n, e)| if *e >= acc.0 { (*e, n.as_str()) } else { acc },
        )
    }
}

/// Gradients of the scalar built by `f` with respect to every parameter of
/// `store` and every leaf.
pub fn check_gradients(
    store: &ParamStore,
    leaves: &[Tensor],
    f: impl Fn(&mut Tape, &[Var]) -> Var,
) -> GradientReport {
    let eval = |s: &ParamStore, l: &[Tensor]| {
        let mut tape = Tape::with_params(s);
        let vars: Vec<Var> = l.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::with_params(store);
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).expect("backward");

    let mut tensors = Vec::new();
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for (id, p) in store.iter() {
        let numeric: Vec<f64> = (0..p.value.numel())
            .map(|i| {
                let mut plus = store.clone();
                plus.get_mut(id).value.data_mut()[i] += FD_STEP;
                let mut minus = store.clone();
                minus.get_mut(id).value.data_mut()[i] -= FD_STEP;
                (eval(&plus, leaves) - eval(&minus, leaves)) / (2.0 * FD_STEP)
            })
            .collect();
        let analytic = grads.get(&p.name).expect("parameter gradient");
        tensors.push((p.name.clone(), rel_err(analytic.data(), &numeric)));
        all_a.extend_from_slice(analytic.data());
        all_n.extend(numeric);
    }
    for (k, v) in vars.iter().enumerate() {
        let numeric: Vec<f64> = (0..leaves[k].numel())
            .map(|i| {
                let mut plus = leaves.to_vec();
                plus[k].data_mut()[i] += FD_STEP;
                let mut minus = leaves.to_vec();
                minus[k].data_mut()[i] -= FD_STEP;
                (eval(store, &plus) - eval(store, &minus)) / (2.0 * FD_STEP)
            })
            .collect();
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(&leaves[k]));
        tensors.push((format!("input {k}"), rel_err(analytic.data(), &numeric)));
        all_a.extend_from_slice(analytic.data());
        all_n.extend(numeric);
    }
    GradientReport {
        tensors,
        overall: rel_err(&all_a, &all_n),
    }
}

/// Sum of `v` weighted elementwise by a fixed random pattern, so every
/// element reaches the scalar with a distinct coefficient.
pub fn project(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let (r, c) = tape.value(v).dims2().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, r, c, 1.0);
    let p = tape.mul_const(v, &w).unwrap();
    tape.sum(p)
}

/// Model config small enough for finite differences.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        hidden: 3,
        word_dim: 4,
        char_dim: 2,
        embedding_scale: 0.5,
        ..ModelConfig::default()
    }
}

/// Synthetic examples with `n_passages` passages of `passage_len` tokens.
pub fn toy_examples(n: usize, n_passages: usize, passage_len: usize, seed: u64) -> Vec<Example> {
    let synth = SynthConfig {
        n_train: n,
        n_dev: 0,
        n_passages,
        passage_len,
        noise_pairs: 0,
        ..SynthConfig::default()
    };
    generate_synthetic(&synth, seed).unwrap().0
}

pub fn toy_model(config: ModelConfig, examples: &[Example]) -> Model {
    Model::new(config, Vocabulary::from_examples(examples), None).unwrap()
}

pub fn toy_batch(model: &Model, examples: &[Example]) -> Batch {
    make_batch(examples, &model.vocab, &model.config.batch(true)).unwrap()
}

/// LCS length by trying every subsequence of the shorter sequence.
pub fn brute_force_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute force is exponential");
    let is_subsequence = |mask: u32| {
        let mut it = long.iter();
        (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .all(|i| it.any(|x| *x == short[i]))
    };
    (0u32..1 << short.len())
        .filter(|&m| is_subsequence(m))
        .map(|m| m.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

/// LCS-based F-measure written out from precision and recall.
pub fn oracle_rouge(cand: &[String], reference: &[String], beta: f64) -> f64 {
    let lcs = brute_force_lcs(cand, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / cand.len() as f64;
    let recall = lcs / reference.len() as f64;
    (1.0 + beta * beta) * precision * recall / (recall + beta * beta * precision)
}

/// Every span of every passage, best per passage under the extraction rule.
/// Returns `(passage, local start, local end, score)`.
pub fn oracle_candidates(
    start: &[f64],
    end: &[f64],
    lens: &[usize],
    max_len: usize,
) -> Vec<(usize, usize, usize, f64)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (p, &len) in lens.iter().enumerate() {
        let mut spans: Vec<(usize, usize, f64)> = Vec::new();
        for s in 0..len {
            for e in s..len {
                if e - s < max_len {
                    spans.push((s, e, start[offset + s] * end[offset + e]));
                }
            }
        }
        spans.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        if let Some(&(s, e, score)) = spans.first() {
            out.push((p, s, e, score));
        }
        offset += len;
    }
    out
}

/// The best-scoring span of `passage` against `references` by exhaustive
/// enumeration: `(start, end, score)`. Ties within 1e-12 prefer the shorter
/// span, then the earlier start.
pub fn oracle_gold_span(passage: &[String], references: &[String]) -> Option<(usize, usize, f64)> {
    let passage: Vec<String> = passage.iter().map(|t| t.to_lowercase()).collect();
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| {
            r.split_whitespace()
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
        })
        .filter(|r| !r.is_empty())
        .collect();
    if passage.is_empty() || refs.is_empty() {
        return None;
    }
    let mut all = Vec::new();
    for s in 0..passage.len() {
        for e in s..passage.len() {
            let score = refs
                .iter()
                .map(|r| oracle_rouge(&passage[s..=e], r, 1.2))
                .fold(0.0, f64::max);
            all.push((s, e, score));
        }
    }
    let top = all.iter().map(|x| x.2).fold(f64::MIN, f64::max);
    all.into_iter()
        .filter(|x| top - x.2 <= 1e-12)
        .min_by_key(|&(s, e, _)| (e - s, s))
}

/// Random tokens over a small alphabet so that matches are frequent.
pub fn random_tokens(rng: &mut impl Rng, len: usize, alphabet: usize) -> Vec<String> {
    (0..len)
        .map(|_| format!("t{}", rng.random_range(0..alphabet)))
        .collect()
}

pub const NORM_TOL: f64 = 1e-9;

fn check_stochastic(t: &Tensor, what: &str) -> Result<(), String> {
    let (r, c) = t.dims2().unwrap();
    for i in 0..r {
        let row = &t.data()[i * c..(i + 1) * c];
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() >= NORM_TOL {
            return Err(format!("{what} row {i} sums to {s}"));
        }
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(format!("{what} row {i} leaves [0, 1]"));
        }
    }
    Ok(())
}

/// One randomized draw of every normalized quantity: start and end
/// pointers, C2Q and Q2C attention, cross-passage attention and the
/// verification scores. Also checks the zero similarity diagonal.
pub fn normalization_trial(seed: u64) -> Result<(), String> {
    use crossverify::boundary::PointerNet;
    use crossverify::encoder::attention_flow;
    use crossverify::verification::{cross_attend, verify_scores};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..=4);
    let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];

    let mut store = ParamStore::new();
    let pointer = PointerNet::new(&mut store, h, &mut rng).unwrap();
    let n = rng.random_range(1..=20);
    let mut tape = Tape::with_params(&store);
    let passages = tape.leaf(random_tensor(&mut rng, n, 2 * h, scale));
    let question = tape.leaf(random_tensor(&mut rng, 1, 2 * h, scale));
    let dist = pointer.predict(&mut tape, passages, question).unwrap();
    check_stochastic(tape.value(dist.start), "start")?;
    check_stochastic(tape.value(dist.end), "end")?;

    let lq = rng.random_range(1..=6);
    let lp = rng.random_range(1..=9);
    let u_q = tape.leaf(random_tensor(&mut rng, lq, 2 * h, scale));
    let u_p = tape.leaf(random_tensor(&mut rng, lp, 2 * h, scale));
    let (_, c2q, q2c, _) = attention_flow(&mut tape, u_q, u_p).unwrap();
    check_stochastic(tape.value(c2q), "C2Q")?;
    check_stochastic(tape.value(q2c), "Q2C")?;

    let k = rng.random_range(1..=6);
    let d = rng.random_range(1..=5);
    let mask_self = rng.random_bool(0.5);
    let reprs = tape.leaf(random_tensor(&mut rng, k, d, scale));
    let att = cross_attend(&mut tape, reprs, mask_self).unwrap();
    let s = tape.value(att.similarity);
    if (0..k).any(|i| s.data()[i * k + i] != 0.0) {
        return Err("similarity diagonal is not exactly 0".into());
    }
    if !(mask_self && k == 1) {
        check_stochastic(tape.value(att.weights), "cross attention")?;
    }
    let w = tape.leaf(random_tensor(&mut rng, 3 * d, 1, scale));
    let pv = verify_scores(&mut tape, w, reprs, att.attended).unwrap();
    check_stochastic(tape.value(pv), "verification")
}
