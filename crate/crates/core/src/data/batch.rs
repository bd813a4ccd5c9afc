use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{derive_content_labels, Example, Vocabulary, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub max_question_len: usize,
    pub max_passage_len: usize,
    pub max_passages: usize,
    /// Drop examples without a gold span inside the truncated window.
    pub require_gold: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            max_question_len: 32,
            max_passage_len: 64,
            max_passages: 10,
            require_gold: false,
        }
    }
}

/// Maps (passage, local position) to positions on the concatenated axis of
/// one example. Only real tokens are covered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffsetTable {
    starts: Vec<usize>,
    lens: Vec<usize>,
}

impl OffsetTable {
    pub fn new(lens: Vec<usize>) -> Self {
        let mut starts = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            starts.push(acc);
            acc += l;
        }
        Self { starts, lens }
    }

    pub fn num_passages(&self) -> usize {
        self.lens.len()
    }

    pub fn total(&self) -> usize {
        self.starts.last().map_or(0, |s| s + self.lens[self.lens.len() - 1])
    }

    pub fn passage_len(&self, passage: usize) -> usize {
        self.lens[passage]
    }

    pub fn passage_range(&self, passage: usize) -> Range<usize> {
        self.starts[passage]..self.starts[passage] + self.lens[passage]
    }

    pub fn to_global(&self, passage: usize, local: usize) -> Option<usize> {
        (passage < self.lens.len() && local < self.lens[passage]).then(|| self.starts[passage] + local)
    }

    pub fn to_local(&self, global: usize) -> Option<(usize, usize)> {
        if global >= self.total() {
            return None;
        }
        // Last passage starting at or before `global` that is nonempty there.
        let p = self.starts.partition_point(|&s| s <= global) - 1;
        let p = (0..=p).rev().find(|&i| global < self.starts[i] + self.lens[i])?;
        Some((p, global - self.starts[p]))
    }
}

/// Word ids and per-word character ids of one token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSeq {
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
}

impl TokenSeq {
    pub fn encode(tokens: &[String], vocab: &Vocabulary) -> Self {
        Self {
            word_ids: tokens.iter().map(|t| vocab.word_id(t)).collect(),
            char_ids: tokens.iter().map(|t| vocab.char_ids(t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

/// The unpadded model inputs of one batch item.
#[derive(Clone, Debug)]
pub struct ExampleInputs {
    pub question: TokenSeq,
    pub passages: Vec<TokenSeq>,
}

/// Padded inputs for several examples. Padding uses `PAD` ids and a false
/// mask; `offsets[b]` covers exactly the masked-in passage tokens of item b.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B][Lq]`
    pub question_ids: Vec<Vec<usize>>,
    pub question_chars: Vec<Vec<Vec<usize>>>,
    pub question_mask: Vec<Vec<bool>>,
    /// `[B][P][Lp]`; items with fewer passages have fewer rows.
    pub passage_ids: Vec<Vec<Vec<usize>>>,
    pub passage_chars: Vec<Vec<Vec<Vec<usize>>>>,
    pub passage_mask: Vec<Vec<Vec<bool>>>,
    pub offsets: Vec<OffsetTable>,
    /// Truncated passage tokens, for reading answers back out.
    pub passage_tokens: Vec<Vec<Vec<String>>>,
    pub gold_start: Vec<Option<usize>>,
    pub gold_end: Vec<Option<usize>>,
    pub gold_passage: Vec<Option<usize>>,
    /// `[B][P][len]`, present when the item has a gold span.
    pub content_labels: Vec<Option<Vec<Vec<u8>>>>,
    pub truncated_questions: usize,
    pub truncated_passages: usize,
    pub dropped_examples: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn item(&self, b: usize) -> ExampleInputs {
        let strip = |ids: &[usize], chars: &[Vec<usize>], mask: &[bool]| {
            let n = mask.iter().take_while(|m| **m).count();
            TokenSeq {
                word_ids: ids[..n].to_vec(),
                char_ids: chars[..n].to_vec(),
            }
        };
        ExampleInputs {
            question: strip(
                &self.question_ids[b],
                &self.question_chars[b],
                &self.question_mask[b],
            ),
            passages: (0..self.passage_ids[b].len())
                .map(|p| {
                    strip(
                        &self.passage_ids[b][p],
                        &self.passage_chars[b][p],
                        &self.passage_mask[b][p],
                    )
                })
                .collect(),
        }
    }
}

fn pad<T: Clone>(mut v: Vec<T>, len: usize, fill: T) -> Vec<T> {
    v.resize(len, fill);
    v
}

/// Truncates, encodes and pads `examples`. With `require_gold`, items whose
/// gold span is absent or cut off are dropped and counted.
pub fn make_batch(examples: &[Example], vocab: &Vocabulary, config: &BatchConfig) -> Result<Batch> {
    if config.max_question_len == 0 || config.max_passage_len == 0 || config.max_passages == 0 {
        return Err(Error::contract("batch limits must be positive"));
    }
    let mut batch = Batch {
        ids: Vec::new(),
        question_ids: Vec::new(),
        question_chars: Vec::new(),
        question_mask: Vec::new(),
        passage_ids: Vec::new(),
        passage_chars: Vec::new(),
        passage_mask: Vec::new(),
        offsets: Vec::new(),
        passage_tokens: Vec::new(),
        gold_start: Vec::new(),
        gold_end: Vec::new(),
        gold_passage: Vec::new(),
        content_labels: Vec::new(),
        truncated_questions: 0,
        truncated_passages: 0,
        dropped_examples: 0,
    };

    let mut kept: Vec<(&Example, Vec<Vec<String>>)> = Vec::new();
    for ex in examples {
        ex.validate().map_err(|e| Error::contract(format!("example {}: {e}", ex.id)))?;
        let n_pass = ex.passages.len().min(config.max_passages);
        let passages: Vec<Vec<String>> = ex.passages[..n_pass]
            .iter()
            .map(|p| p[..p.len().min(config.max_passage_len)].to_vec())
            .collect();
        let span_fits = ex.gold_span.is_some_and(|s| s.passage < n_pass && s.end < passages[s.passage].len());
        if config.require_gold && !span_fits {
            batch.dropped_examples += 1;
            continue;
        }
        batch.truncated_passages += ex
            .passages
            .iter()
            .enumerate()
            .filter(|(i, p)| *i >= n_pass || p.len() > config.max_passage_len)
            .count();
        kept.push((ex, passages));
    }

    let q_len = kept
        .iter()
        .map(|(ex, _)| ex.question.len().min(config.max_question_len))
        .max()
        .unwrap_or(0);
    let p_len = kept
        .iter()
        .flat_map(|(_, ps)| ps.iter().map(Vec::len))
        .max()
        .unwrap_or(0);

    for (ex, passages) in kept {
        if ex.question.len() > config.max_question_len {
            batch.truncated_questions += 1;
        }
        let question = &ex.question[..ex.question.len().min(config.max_question_len)];
        let q = TokenSeq::encode(question, vocab);
        batch.question_mask.push(pad(vec![true; q.len()], q_len, false));
        batch.question_ids.push(pad(q.word_ids, q_len, PAD));
        batch.question_chars.push(pad(q.char_ids, q_len, Vec::new()));

        let offsets = OffsetTable::new(passages.iter().map(Vec::len).collect());
        let (mut ids, mut chars, mut masks) = (Vec::new(), Vec::new(), Vec::new());
        for p in &passages {
            let s = TokenSeq::encode(p, vocab);
            masks.push(pad(vec![true; s.len()], p_len, false));
            ids.push(pad(s.word_ids, p_len, PAD));
            chars.push(pad(s.char_ids, p_len, Vec::new()));
        }

        let span = ex
            .gold_span
            .filter(|s| s.passage < passages.len() && s.end < passages[s.passage].len());
        match span {
            Some(s) => {
                batch.gold_start.push(offsets.to_global(s.passage, s.start));
                batch.gold_end.push(offsets.to_global(s.passage, s.end));
                let labels = passages
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        if i == s.passage {
                            derive_content_labels(s.start, s.end, p.len())
                        } else {
                            Ok(vec![0; p.len()])
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                batch.content_labels.push(Some(labels));
            }
            None => {
                batch.gold_start.push(None);
                batch.gold_end.push(None);
                batch.content_labels.push(None);
            }
        }
        let gold_passage = ex
            .gold_passage
            .or(span.map(|s| s.passage))
            .filter(|&g| g < passages.len());
        batch.gold_passage.push(gold_passage);

        batch.ids.push(ex.id.clone());
        batch.passage_ids.push(ids);
        batch.passage_chars.push(chars);
        batch.passage_mask.push(masks);
        batch.offsets.push(offsets);
        batch.passage_tokens.push(passages);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GoldSpan;

    fn toks(n: usize, tag: &str) -> Vec<String> {
        (0..n).map(|i| format!("{tag}{i}")).collect()
    }

    fn example(lens: &[usize], span: Option<GoldSpan>) -> Example {
        Example {
            id: "x".into(),
            question: toks(3, "q"),
            passages: lens.iter().map(|&n| toks(n, "p")).collect(),
            gold_span: span,
            gold_passage: None,
            references: vec![],
        }
    }

    #[test]
    fn offset_arithmetic() {
        let t = OffsetTable::new(vec![3, 4]);
        assert_eq!(t.passage_range(0), 0..3);
        assert_eq!(t.passage_range(1), 3..7);
        assert_eq!(t.to_global(1, 2), Some(5));
        assert_eq!(t.to_local(5), Some((1, 2)));
        assert_eq!(t.to_global(0, 3), None);
        assert_eq!(t.to_local(7), None);
    }

    #[test]
    fn zero_length_passages_are_skipped() {
        let t = OffsetTable::new(vec![2, 0, 1]);
        assert_eq!(t.to_local(2), Some((2, 0)));
        assert_eq!(t.to_local(1), Some((0, 1)));
    }

    #[test]
    fn gold_translated_to_global() {
        let ex = example(
            &[3, 4],
            Some(GoldSpan {
                passage: 1,
                start: 0,
                end: 1,
            }),
        );
        let vocab = Vocabulary::from_examples([&ex]);
        let b = make_batch(&[ex], &vocab, &BatchConfig::default()).unwrap();
        assert_eq!((b.gold_start[0], b.gold_end[0]), (Some(3), Some(4)));
        assert_eq!(b.gold_passage[0], Some(1));
        let labels = b.content_labels[0].as_ref().unwrap();
        assert_eq!(labels[0], vec![0, 0, 0]);
        assert_eq!(labels[1], vec![1, 1, 0, 0]);
        assert_eq!(b.passage_mask[0][0], vec![true, true, true, false]);
    }

    #[test]
    fn truncation_counts_and_drops() {
        let cfg = BatchConfig {
            max_question_len: 2,
            max_passage_len: 3,
            max_passages: 10,
            require_gold: true,
        };
        let inside = example(
            &[5],
            Some(GoldSpan {
                passage: 0,
                start: 0,
                end: 2,
            }),
        );
        let outside = example(
            &[5],
            Some(GoldSpan {
                passage: 0,
                start: 2,
                end: 4,
            }),
        );
        let vocab = Vocabulary::from_examples([&inside]);
        let b = make_batch(&[inside, outside], &vocab, &cfg).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.dropped_examples, 1);
        assert_eq!(b.truncated_questions, 1);
        assert_eq!(b.question_ids[0].len(), 2);
        assert_eq!(b.item(0).passages[0].len(), 3);
    }

    #[test]
    fn item_strips_padding() {
        let a = example(&[2, 5], None);
        let mut b = example(&[1], None);
        b.question = toks(6, "q");
        let vocab = Vocabulary::from_examples([&a, &b]);
        let batch = make_batch(&[a, b], &vocab, &BatchConfig::default()).unwrap();
        let item = batch.item(0);
        assert_eq!(item.question.len(), 3);
        assert_eq!(item.passages.iter().map(TokenSeq::len).collect::<Vec<_>>(), vec![2, 5]);
        assert_eq!(batch.item(1).question.len(), 6);
        assert_eq!(item.passages[1].word_ids, TokenSeq::encode(&toks(5, "p"), &vocab).word_ids);
    }
}
