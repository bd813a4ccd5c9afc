//! Dataset types, ingestion, gold-label derivation, batching and the
//! synthetic multi-passage generator.

mod batch;
mod gold;
mod jsonl;
mod synth;
mod vocab;

pub use batch::{make_batch, Batch, BatchConfig, ExampleInputs, OffsetTable, TokenSeq};
pub use gold::{
    derive_content_labels, derive_gold_passage, derive_gold_span, prepare_training_set, SpanScore,
};
pub use jsonl::{load_jsonl, parse_jsonl, to_jsonl, write_jsonl};
pub use synth::{generate_synthetic, SynthConfig};
pub use vocab::{Vocabulary, PAD, UNK};

/// Inclusive token span inside one passage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GoldSpan {
    pub passage: usize,
    pub start: usize,
    pub end: usize,
}

/// One question with its retrieved passages.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub question: Vec<String>,
    pub passages: Vec<Vec<String>>,
    pub gold_span: Option<GoldSpan>,
    pub gold_passage: Option<usize>,
    pub references: Vec<String>,
}

impl Example {
    /// Checks the structural invariants; the message names what is wrong.
    pub fn validate(&self) -> Result<(), String> {
        if self.question.is_empty() {
            return Err("question has no tokens".into());
        }
        if self.passages.is_empty() {
            return Err("no passages".into());
        }
        if let Some(i) = self.passages.iter().position(|p| p.is_empty()) {
            return Err(format!("passage {i} has no tokens"));
        }
        if let Some(g) = self.gold_passage {
            if g >= self.passages.len() {
                return Err(format!(
                    "gold_passage {g} out of range for {} passages",
                    self.passages.len()
                ));
            }
        }
        if let Some(s) = self.gold_span {
            let Some(p) = self.passages.get(s.passage) else {
                return Err(format!("span passage {} does not exist", s.passage));
            };
            if s.start > s.end || s.end >= p.len() {
                return Err(format!(
                    "span [{}, {}] out of range for passage {} of length {}",
                    s.start,
                    s.end,
                    s.passage,
                    p.len()
                ));
            }
        }
        Ok(())
    }

    /// Tokens covered by the gold span.
    pub fn gold_answer_tokens(&self) -> Option<&[String]> {
        let s = self.gold_span?;
        self.passages
            .get(s.passage)
            .and_then(|p| p.get(s.start..=s.end))
    }
}
