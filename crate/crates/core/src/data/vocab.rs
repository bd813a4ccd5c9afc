use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Example;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Word and character inventories. Ids are dense from 0 with `PAD = 0` and
/// `UNK = 1` in both tables; characters are Unicode scalar values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    chars: Vec<char>,
    word_ids: HashMap<String, usize>,
    char_ids: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    chars: Vec<char>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let word_ids = r.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let char_ids = r.chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Self {
            words: r.words,
            chars: r.chars,
            word_ids,
            char_ids,
        }
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            words: v.words,
            chars: v.chars,
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(VocabRepr {
            words: vec![PAD_TOKEN.into(), UNK_TOKEN.into()],
            chars: vec!['\0', '\u{fffd}'],
        })
    }
}

impl Vocabulary {
    /// Vocabulary over the tokens of the given token streams, in first-seen order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a String>) -> Self {
        let mut v = Self::default();
        for t in tokens {
            v.add_word(t);
        }
        v
    }

    /// All question and passage tokens of the examples.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut v = Self::default();
        for ex in examples {
            for t in ex.question.iter().chain(ex.passages.iter().flatten()) {
                v.add_word(t);
            }
        }
        v
    }

    pub fn add_word(&mut self, word: &str) -> usize {
        for c in word.chars() {
            if !self.char_ids.contains_key(&c) {
                self.char_ids.insert(c, self.chars.len());
                self.chars.push(c);
            }
        }
        if let Some(&id) = self.word_ids.get(word) {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.word_ids.insert(word.to_string(), id);
        id
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn char_ids(&self, word: &str) -> Vec<usize> {
        word.chars()
            .map(|c| self.char_ids.get(&c).copied().unwrap_or(UNK))
            .collect()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }
}
