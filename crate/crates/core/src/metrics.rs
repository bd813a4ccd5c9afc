//! Answer-quality metrics: ROUGE-L, corpus BLEU-1, bag-of-tokens F1,
//! exact-span accuracy and multi-answer dataset statistics.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};

/// Recall weight conventionally used for MS-MARCO style evaluation.
pub const ROUGE_BETA: f64 = 1.2;

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure from an LCS length and the two sequence lengths.
pub fn rouge_from_lcs(lcs: usize, cand_len: usize, ref_len: usize, beta: f64) -> f64 {
    if lcs == 0 || cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand_len as f64;
    let r = lcs as f64 / ref_len as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// ROUGE-L of one candidate against one reference. An empty candidate scores 0.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T], beta: f64) -> f64 {
    rouge_from_lcs(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
        beta,
    )
}

/// Best ROUGE-L over several references.
pub fn rouge_l_multi<T: PartialEq, R: AsRef<[T]>>(candidate: &[T], references: &[R], beta: f64) -> f64 {
    references
        .iter()
        .map(|r| rouge_l(candidate, r.as_ref(), beta))
        .fold(0.0, f64::max)
}

fn counts<T: Eq + Hash>(tokens: &[T]) -> HashMap<&T, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Corpus-level BLEU-1: clipped unigram precision times the brevity penalty.
/// Each candidate may have several references; clipping uses the maximum
/// count over references and the effective reference length is the closest
/// one (shorter wins ties).
pub fn bleu_1<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::contract("BLEU over an empty corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "BLEU got {} candidates and {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut matched = 0usize;
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        let mut max_ref: HashMap<&T, usize> = HashMap::new();
        for r in refs {
            for (tok, n) in counts(r) {
                let e = max_ref.entry(tok).or_insert(0);
                *e = (*e).max(n);
            }
        }
        for (tok, n) in counts(cand) {
            matched += n.min(max_ref.get(tok).copied().unwrap_or(0));
        }
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let precision = matched as f64 / cand_len as f64;
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(precision * bp)
}

/// Harmonic mean of bag-of-tokens precision and recall.
pub fn token_f1<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    let rc = counts(reference);
    let overlap: usize = counts(candidate)
        .into_iter()
        .map(|(t, n)| n.min(rc.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / candidate.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// True if some contiguous span of `passage` has token F1 strictly above
/// `threshold` against `reference`.
pub fn has_valid_span<T: Eq + Hash>(passage: &[T], reference: &[T], threshold: f64) -> bool {
    if reference.is_empty() {
        return false;
    }
    let rc = counts(reference);
    for start in 0..passage.len() {
        let mut seen: HashMap<&T, usize> = HashMap::new();
        let mut overlap = 0usize;
        for (len, tok) in passage[start..].iter().enumerate() {
            let c = seen.entry(tok).or_insert(0);
            if *c < rc.get(tok).copied().unwrap_or(0) {
                overlap += 1;
            }
            *c += 1;
            let f1 = 2.0 * overlap as f64 / (len + 1 + reference.len()) as f64;
            if f1 > threshold {
                return true;
            }
        }
    }
    false
}

pub fn tokenize(text: &str, case_fold: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if case_fold { t.to_lowercase() } else { t.to_string() })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanStats {
    pub questions: usize,
    /// Fraction of questions with at least two distinct reference answers.
    pub multiple_answers: f64,
    /// Fraction of questions with valid spans in at least two passages.
    pub multiple_spans: f64,
}

/// Multi-answer statistics. References are compared after whitespace and
/// case normalization; a passage counts when it holds a span with token F1
/// above `threshold` against any reference.
pub fn span_validity_stats(dataset: &[Example], threshold: f64) -> SpanStats {
    let mut multi_answer = 0usize;
    let mut multi_span = 0usize;
    for ex in dataset {
        let refs: Vec<Vec<String>> = ex.references.iter().map(|r| tokenize(r, true)).collect();
        let distinct: BTreeSet<String> = refs
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| r.join(" "))
            .collect();
        if distinct.len() >= 2 {
            multi_answer += 1;
        }
        let valid_passages = ex
            .passages
            .iter()
            .filter(|p| {
                let folded: Vec<String> = p.iter().map(|t| t.to_lowercase()).collect();
                refs.iter().any(|r| has_valid_span(&folded, r, threshold))
            })
            .count();
        if valid_passages >= 2 {
            multi_span += 1;
        }
    }
    let n = dataset.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    SpanStats {
        questions: n,
        multiple_answers: frac(multi_answer),
        multiple_spans: frac(multi_span),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub rouge_beta: f64,
    pub case_fold: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            rouge_beta: ROUGE_BETA,
            case_fold: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub rouge_l: f64,
    pub exact_span: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over examples of the best-reference ROUGE-L.
    pub rouge_l: f64,
    pub bleu_1: f64,
    /// Over examples that carry a gold span; `None` when none do.
    pub exact_span_accuracy: Option<f64>,
    pub rows: Vec<EvalRow>,
}

/// Reference token lists for an example: its reference strings, or the gold
/// span's tokens when it has none.
pub fn reference_tokens(ex: &Example, case_fold: bool) -> Vec<Vec<String>> {
    let refs: Vec<Vec<String>> = ex
        .references
        .iter()
        .map(|r| tokenize(r, case_fold))
        .filter(|r| !r.is_empty())
        .collect();
    if !refs.is_empty() {
        return refs;
    }
    ex.gold_answer_tokens()
        .map(|t| vec![fold_all(t, case_fold)])
        .unwrap_or_default()
}

fn fold_all(tokens: &[String], case_fold: bool) -> Vec<String> {
    tokens
        .iter()
        .map(|t| if case_fold { t.to_lowercase() } else { t.clone() })
        .collect()
}

/// Exact-span match: the predicted answer tokens equal the gold span tokens.
pub fn exact_span_match(predicted: &[String], ex: &Example, case_fold: bool) -> Option<bool> {
    ex.gold_answer_tokens()
        .map(|gold| fold_all(gold, case_fold) == fold_all(predicted, case_fold))
}

/// Scores predicted answers (keyed by example id) against gold examples.
/// Gold examples without a prediction score as an empty answer.
pub fn evaluate(
    predicted: &HashMap<String, Vec<String>>,
    gold: &[Example],
    opts: EvalOptions,
) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::contract("evaluation over an empty gold set"));
    }
    let mut rows = Vec::with_capacity(gold.len());
    let mut cands = Vec::with_capacity(gold.len());
    let mut refs = Vec::with_capacity(gold.len());
    let mut exact = (0usize, 0usize);
    for ex in gold {
        let answer = predicted.get(&ex.id).cloned().unwrap_or_default();
        let cand = fold_all(&answer, opts.case_fold);
        let ex_refs = reference_tokens(ex, opts.case_fold);
        let rouge = rouge_l_multi(&cand, &ex_refs, opts.rouge_beta);
        let em = exact_span_match(&answer, ex, opts.case_fold);
        if let Some(hit) = em {
            exact.1 += 1;
            exact.0 += hit as usize;
        }
        rows.push(EvalRow {
            id: ex.id.clone(),
            rouge_l: rouge,
            exact_span: em,
        });
        cands.push(cand);
        refs.push(ex_refs);
    }
    let rouge_l = rows.iter().map(|r| r.rouge_l).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport {
        rouge_l,
        bleu_1: bleu_1(&cands, &refs)?,
        exact_span_accuracy: (exact.1 > 0).then(|| exact.0 as f64 / exact.1 as f64),
        rows,
    })
}
