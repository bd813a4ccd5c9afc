use super::{Example, GoldSpan};
use crate::error::{Error, Result};
use crate::metrics::{rouge_from_lcs, tokenize, ROUGE_BETA};

/// Scores closer than this are treated as ties.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanScore {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// The span of `passage` with the highest ROUGE-L against any reference.
/// Ties go to the shorter span, then the earlier start. Comparison is case
/// insensitive. Returns `None` for an empty passage or no usable reference.
pub fn derive_gold_span(passage: &[String], references: &[String]) -> Option<SpanScore> {
    let folded: Vec<String> = passage.iter().map(|t| t.to_lowercase()).collect();
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize(r, true))
        .filter(|r| !r.is_empty())
        .collect();
    if folded.is_empty() || refs.is_empty() {
        return None;
    }

    let mut best: Option<SpanScore> = None;
    // One DP row per reference, extended token by token from each start:
    // row[j] = LCS(passage[start..=end], reference[..j]).
    let mut rows: Vec<Vec<usize>> = refs.iter().map(|r| vec![0; r.len() + 1]).collect();
    let mut next: Vec<Vec<usize>> = rows.clone();
    for start in 0..folded.len() {
        for row in &mut rows {
            row.fill(0);
        }
        for end in start..folded.len() {
            let tok = &folded[end];
            let mut score: f64 = 0.0;
            for (k, r) in refs.iter().enumerate() {
                let (prev, cur) = (&rows[k], &mut next[k]);
                cur[0] = 0;
                for (j, rt) in r.iter().enumerate() {
                    cur[j + 1] = if rt == tok {
                        prev[j] + 1
                    } else {
                        cur[j].max(prev[j + 1])
                    };
                }
                score = score.max(rouge_from_lcs(cur[r.len()], end - start + 1, r.len(), ROUGE_BETA));
            }
            std::mem::swap(&mut rows, &mut next);
            let cand = SpanScore { start, end, score };
            if best.is_none_or(|b| better(&cand, &b)) {
                best = Some(cand);
            }
        }
    }
    best
}

fn better(a: &SpanScore, b: &SpanScore) -> bool {
    if (a.score - b.score).abs() > TIE_EPS {
        return a.score > b.score;
    }
    let (la, lb) = (a.end - a.start, b.end - b.start);
    la < lb || (la == lb && a.start < b.start)
}

/// 1 inside the inclusive span, 0 elsewhere.
pub fn derive_content_labels(start: usize, end: usize, passage_len: usize) -> Result<Vec<u8>> {
    if start > end || end >= passage_len {
        return Err(Error::contract(format!(
            "span [{start}, {end}] invalid for a passage of length {passage_len}"
        )));
    }
    Ok((0..passage_len)
        .map(|i| u8::from(start <= i && i <= end))
        .collect())
}

/// The passage whose answer counts as correct for verification: an explicit
/// marking, else the passage of an explicit span, else the passage whose
/// derived span scores highest (earliest index on ties).
pub fn derive_gold_passage(example: &Example) -> Option<usize> {
    if let Some(p) = example.gold_passage {
        return Some(p);
    }
    if let Some(s) = example.gold_span {
        return Some(s.passage);
    }
    best_derived(example).map(|(p, _)| p)
}

fn best_derived(example: &Example) -> Option<(usize, SpanScore)> {
    let mut best: Option<(usize, SpanScore)> = None;
    for (i, p) in example.passages.iter().enumerate() {
        if let Some(s) = derive_gold_span(p, &example.references) {
            if best.is_none_or(|(_, b)| s.score > b.score + TIE_EPS) {
                best = Some((i, s));
            }
        }
    }
    best
}

/// Fills in gold passage and span for every example that lacks them.
/// Examples where nothing matches the references are dropped; the second
/// value counts them.
pub fn prepare_training_set(examples: &[Example]) -> (Vec<Example>, usize) {
    let mut kept = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for ex in examples {
        let mut ex = ex.clone();
        if ex.gold_span.is_none() {
            let derived = match ex.gold_passage {
                Some(p) => derive_gold_span(&ex.passages[p], &ex.references).map(|s| (p, s)),
                None => best_derived(&ex),
            };
            match derived {
                Some((p, s)) if s.score > 0.0 => {
                    ex.gold_span = Some(GoldSpan {
                        passage: p,
                        start: s.start,
                        end: s.end,
                    });
                }
                _ => {
                    dropped += 1;
                    continue;
                }
            }
        }
        if ex.gold_passage.is_none() {
            ex.gold_passage = ex.gold_span.map(|s| s.passage);
        }
        kept.push(ex);
    }
    (kept, dropped)
}
