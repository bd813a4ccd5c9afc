use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Example, GoldSpan};
use crate::error::{Error, Issue, Result};

/// On-disk form of one example.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    question: Vec<String>,
    passages: Vec<Vec<String>>,
    /// `[start, end]` (in `gold_passage`, else passage 0) or
    /// `[passage, start, end]`; the first entry is the training span.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    answer_spans: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_passage: Option<usize>,
    #[serde(default)]
    references: Vec<String>,
}

fn record_to_example(rec: Record, line: usize) -> Result<Example, String> {
    let gold_span = match rec.answer_spans.first().map(Vec::as_slice) {
        None => None,
        Some([start, end]) => Some(GoldSpan {
            passage: rec.gold_passage.unwrap_or(0),
            start: *start,
            end: *end,
        }),
        Some([passage, start, end]) => Some(GoldSpan {
            passage: *passage,
            start: *start,
            end: *end,
        }),
        Some(other) => {
            return Err(format!(
                "answer span must have 2 or 3 entries, got {}",
                other.len()
            ))
        }
    };
    let ex = Example {
        id: rec.id.unwrap_or_else(|| format!("line-{line}")),
        question: rec.question,
        passages: rec.passages,
        gold_span,
        gold_passage: rec.gold_passage,
        references: rec.references,
    };
    ex.validate()?;
    Ok(ex)
}

/// Parses JSONL text. Blank lines are skipped; every bad line is reported.
pub fn parse_jsonl(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(e) => {
                issues.push(Issue {
                    line,
                    id: None,
                    reason: format!("malformed JSON: {e}"),
                });
                continue;
            }
        };
        let id = value.get("id").and_then(Value::as_str).map(String::from);
        let parsed = serde_json::from_value::<Record>(value)
            .map_err(|e| e.to_string())
            .and_then(|rec| record_to_example(rec, line));
        match parsed {
            Ok(ex) => out.push(ex),
            Err(reason) => issues.push(Issue { line, id, reason }),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(Error::Ingestion(issues))
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

/// Serializes examples in the same format [`parse_jsonl`] reads.
pub fn to_jsonl(examples: &[Example]) -> Result<String> {
    let mut out = String::new();
    for ex in examples {
        let rec = Record {
            id: Some(ex.id.clone()),
            question: ex.question.clone(),
            passages: ex.passages.clone(),
            answer_spans: ex
                .gold_span
                .map(|s| vec![vec![s.passage, s.start, s.end]])
                .unwrap_or_default(),
            gold_passage: ex.gold_passage,
            references: ex.references.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let text = to_jsonl(examples)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_passage_span() {
        let text = r#"{"id":"q1","question":["who"],"passages":[["a","b","c","d","e"]],"answer_spans":[[1,3]],"references":["b c d"]}"#;
        let ex = parse_jsonl(text).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(
            ex[0].gold_span,
            Some(GoldSpan {
                passage: 0,
                start: 1,
                end: 3
            })
        );
    }

    #[test]
    fn span_past_end_names_example() {
        let text = r#"{"id":"bad-one","question":["who"],"passages":[["a","b"]],"answer_spans":[[1,2]]}"#;
        let err = parse_jsonl(text).unwrap_err();
        match &err {
            Error::Ingestion(issues) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].id.as_deref(), Some("bad-one"));
                assert_eq!(issues[0].line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("bad-one"));
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        assert!(parse_jsonl("").unwrap().is_empty());
        assert!(parse_jsonl("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn missing_field_and_malformed_lines_reported() {
        let text = "{\"id\":\"x\",\"passages\":[[\"a\"]]}\nnot json\n";
        match parse_jsonl(text).unwrap_err() {
            Error::Ingestion(issues) => {
                assert_eq!(issues.len(), 2);
                assert!(issues[0].reason.contains("question"));
                assert_eq!(issues[1].line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn three_entry_spans_and_gold_passage() {
        let text = r#"{"question":["q"],"passages":[["a"],["b","c"]],"answer_spans":[[1,0,1]],"gold_passage":1}"#;
        let ex = &parse_jsonl(text).unwrap()[0];
        assert_eq!(ex.id, "line-1");
        assert_eq!(ex.gold_span.unwrap().passage, 1);
        assert_eq!(ex.gold_answer_tokens().unwrap(), &["b", "c"]);
    }

    #[test]
    fn write_then_read_preserves_examples() {
        let text = r#"{"id":"q","question":["q"],"passages":[["a"],["b","c"]],"answer_spans":[[1,1,1]],"gold_passage":1,"references":["c"]}"#;
        let ex = parse_jsonl(text).unwrap();
        let again = parse_jsonl(&to_jsonl(&ex).unwrap()).unwrap();
        assert_eq!(ex, again);
    }
}
