use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, GoldSpan};
use crate::error::{Error, Result};

/// Knobs of the key/value retrieval task. Every question asks for the value
/// of one key; most passages agree on that value, the rest carry distractors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of distinct filler/value tokens.
    pub vocab_size: usize,
    pub n_keys: usize,
    pub n_passages: usize,
    pub passage_len: usize,
    pub n_train: usize,
    pub n_dev: usize,
    /// Fraction of passages carrying a distractor value, capped so the
    /// correct value keeps a strict majority.
    pub distractor_rate: f64,
    pub answer_len: usize,
    /// Extra key/value pairs for other keys placed in every passage.
    pub noise_pairs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            n_keys: 50,
            n_passages: 5,
            passage_len: 16,
            n_train: 50,
            n_dev: 200,
            distractor_rate: 0.4,
            answer_len: 2,
            noise_pairs: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let block = 1 + self.answer_len;
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.n_passages == 0 || self.answer_len == 0 {
            return bad("n_passages and answer_len must be positive");
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad("distractor_rate must lie in [0, 1]");
        }
        if self.n_keys < 1 + self.noise_pairs {
            return bad("n_keys must exceed noise_pairs");
        }
        if self.passage_len < block * (1 + self.noise_pairs) {
            return bad("passage_len too short for the key/value blocks");
        }
        // Answer, one distractor per minority passage, noise values, fillers.
        if self.vocab_size < self.answer_len * (self.n_passages + self.noise_pairs) + 1 {
            return bad("vocab_size too small for distinct values");
        }
        Ok(())
    }

    pub fn n_minority(&self) -> usize {
        let by_rate = (self.distractor_rate * self.n_passages as f64).floor() as usize;
        by_rate.min((self.n_passages - 1) / 2)
    }
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn key(i: usize) -> String {
    format!("k{i}")
}

/// Draws `n` distinct word indices not in `taken`, marking them taken.
fn draw_value(rng: &mut ChaCha8Rng, n: usize, vocab: usize, taken: &mut Vec<usize>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = rng.random_range(0..vocab);
        if !taken.contains(&w) {
            taken.push(w);
            out.push(word(w));
        }
    }
    out
}

/// Lays out blocks and filler tokens in random order. Returns the tokens and
/// the position of the first block's value.
fn layout(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    blocks: Vec<Vec<String>>,
    taken: &[usize],
) -> (Vec<String>, usize) {
    let used: usize = blocks.iter().map(Vec::len).sum();
    let mut units: Vec<(Option<usize>, Vec<String>)> =
        blocks.into_iter().enumerate().map(|(i, b)| (Some(i), b)).collect();
    for _ in used..cfg.passage_len {
        let w = loop {
            let w = rng.random_range(0..cfg.vocab_size);
            if !taken.contains(&w) {
                break w;
            }
        };
        units.push((None, vec![word(w)]));
    }
    units.shuffle(rng);
    let mut tokens = Vec::with_capacity(cfg.passage_len);
    let mut value_at = 0;
    for (tag, unit) in units {
        if tag == Some(0) {
            value_at = tokens.len() + 1;
        }
        tokens.extend(unit);
    }
    (tokens, value_at)
}

fn make_example(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String) -> Example {
    let keys: Vec<usize> = (0..cfg.n_keys).collect();
    let chosen: Vec<usize> = keys.choose_multiple(rng, 1 + cfg.noise_pairs).copied().collect();
    let target = key(chosen[0]);

    let mut taken = Vec::new();
    let answer = draw_value(rng, cfg.answer_len, cfg.vocab_size, &mut taken);
    let noise: Vec<(String, Vec<String>)> = chosen[1..]
        .iter()
        .map(|&k| (key(k), draw_value(rng, cfg.answer_len, cfg.vocab_size, &mut taken)))
        .collect();

    let n_min = cfg.n_minority();
    let mut is_minority: Vec<bool> = (0..cfg.n_passages).map(|i| i < n_min).collect();
    is_minority.shuffle(rng);

    let mut passages = Vec::with_capacity(cfg.n_passages);
    let mut value_pos = Vec::with_capacity(cfg.n_passages);
    for &minority in &is_minority {
        let value = if minority {
            draw_value(rng, cfg.answer_len, cfg.vocab_size, &mut taken)
        } else {
            answer.clone()
        };
        let mut blocks = vec![std::iter::once(target.clone()).chain(value).collect::<Vec<_>>()];
        for (k, v) in &noise {
            blocks.push(std::iter::once(k.clone()).chain(v.iter().cloned()).collect());
        }
        let (tokens, at) = layout(rng, cfg, blocks, &taken);
        passages.push(tokens);
        value_pos.push(at);
    }

    let majority: Vec<usize> = (0..cfg.n_passages).filter(|&i| !is_minority[i]).collect();
    let gold = *majority.choose(rng).expect("majority is never empty");
    Example {
        id,
        question: vec!["what".into(), "is".into(), target],
        passages,
        gold_span: Some(GoldSpan {
            passage: gold,
            start: value_pos[gold],
            end: value_pos[gold] + cfg.answer_len - 1,
        }),
        gold_passage: Some(gold),
        references: vec![answer.join(" ")],
    }
}

/// Deterministic (train, dev) split for a seed.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = (0..config.n_train)
        .map(|i| make_example(&mut rng, config, format!("train-{i}")))
        .collect();
    let dev = (0..config.n_dev)
        .map(|i| make_example(&mut rng, config, format!("dev-{i}")))
        .collect();
    Ok((train, dev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::to_jsonl;

    fn count_with_answer(ex: &Example) -> usize {
        let answer = ex.gold_answer_tokens().unwrap();
        ex.passages
            .iter()
            .filter(|p| p.windows(answer.len()).any(|w| w == answer))
            .count()
    }

    #[test]
    fn majority_carries_the_answer() {
        let (train, dev) = generate_synthetic(&SynthConfig::default(), 7).unwrap();
        assert_eq!((train.len(), dev.len()), (50, 200));
        for ex in train.iter().chain(&dev) {
            ex.validate().unwrap();
            assert_eq!(ex.passages.len(), 5);
            assert!(ex.passages.iter().all(|p| p.len() == 16));
            assert_eq!(count_with_answer(ex), 3);
            let g = ex.gold_span.unwrap();
            assert_eq!(ex.passages[g.passage][g.start - 1], ex.question[2]);
            assert_eq!(ex.references[0], ex.gold_answer_tokens().unwrap().join(" "));
        }
    }

    #[test]
    fn zero_distractors_means_all_agree() {
        let cfg = SynthConfig {
            distractor_rate: 0.0,
            ..SynthConfig::default()
        };
        let (train, _) = generate_synthetic(&cfg, 1).unwrap();
        assert!(train.iter().all(|ex| count_with_answer(ex) == 5));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig::default();
        let (a, b) = generate_synthetic(&cfg, 99).unwrap();
        let (c, d) = generate_synthetic(&cfg, 99).unwrap();
        assert_eq!(to_jsonl(&a).unwrap(), to_jsonl(&c).unwrap());
        assert_eq!(to_jsonl(&b).unwrap(), to_jsonl(&d).unwrap());
        let (e, _) = generate_synthetic(&cfg, 100).unwrap();
        assert_ne!(to_jsonl(&a).unwrap(), to_jsonl(&e).unwrap());
    }

    #[test]
    fn rejects_impossible_layouts() {
        let cfg = SynthConfig {
            passage_len: 4,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg, 0).is_err());
    }
}
