//! Shared embedding, contextual encoding and question-aware passage matching.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndcore::{BiLstm, BiLstmOutput, ParamId, ParamStore, Tape, Var};
use rand::Rng;

use crate::data::{ExampleInputs, TokenSeq, Vocabulary, PAD};
use crate::error::{Error, Result};

/// Word table `[V x word_dim]` and character table `[C x char_dim]`.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub word: ParamId,
    pub char: ParamId,
    pub word_dim: usize,
    pub char_dim: usize,
}

impl EmbeddingTable {
    /// Random tables with zeroed, frozen PAD rows. Rows found in `pretrained`
    /// are overwritten and frozen.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab: &Vocabulary,
        word_dim: usize,
        char_dim: usize,
        scale: f64,
        pretrained: Option<&PretrainedVectors>,
        rng: &mut R,
    ) -> Result<Self> {
        let word = store.add_embedding("embed.word", vocab.num_words(), word_dim, scale, rng)?;
        let char = store.add_embedding("embed.char", vocab.num_chars(), char_dim, scale, rng)?;
        let mut frozen_words = vec![PAD];
        if let Some(pre) = pretrained {
            if pre.dim != word_dim {
                return Err(Error::Dimension {
                    name: "embed.word".into(),
                    expected: vec![vocab.num_words(), word_dim],
                    found: vec![vocab.num_words(), pre.dim],
                });
            }
            let table = &mut store.get_mut(word).value;
            for (id, w) in vocab.words().iter().enumerate().skip(PAD + 1) {
                if let Some(v) = pre.vectors.get(w) {
                    table.data_mut()[id * word_dim..(id + 1) * word_dim].copy_from_slice(v);
                    frozen_words.push(id);
                }
            }
        }
        for (id, rows, dim) in [(word, frozen_words, word_dim), (char, vec![PAD], char_dim)] {
            let p = store.get_mut(id);
            p.value.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
            p.ema_shadow = p.value.clone();
            store.freeze_rows(id, &rows)?;
        }
        Ok(Self {
            word,
            char,
            word_dim,
            char_dim,
        })
    }

    pub fn load(store: &ParamStore) -> Result<Self> {
        let word = store.id("embed.word")?;
        let char = store.id("embed.char")?;
        Ok(Self {
            word,
            char,
            word_dim: store.value(word).cols(),
            char_dim: store.value(char).cols(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.word_dim + self.char_dim
    }

    /// `[T x (word_dim + char_dim)]`: row t is the word vector followed by the
    /// sum of the token's character vectors.
    pub fn embed(&self, tape: &mut Tape, tokens: &TokenSeq) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot embed an empty token sequence"));
        }
        let word = tape.param(self.word)?;
        let char = tape.param(self.char)?;
        let w = tape.gather_rows(word, &tokens.word_ids)?;
        let c = tape.gather_sum_rows(char, &tokens.char_ids)?;
        Ok(tape.hcat(&[w, c])?)
    }
}

/// Word vectors read from a text file.
#[derive(Clone, Debug, Default)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    /// One token per line followed by `dim` whitespace-separated floats.
    /// Blank lines are skipped; the first occurrence of a token wins.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("embeddings line {}: {e}", i + 1)))?;
            if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "embeddings line {}: expected {dim} finite values, found {}",
                    i + 1,
                    values.len()
                )));
            }
            vectors.entry(token.to_string()).or_insert(values);
        }
        Ok(Self { dim, vectors })
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, dim)
    }
}

/// Output of matching one passage against the question.
#[derive(Clone, Copy, Debug)]
pub struct MatchedPassage {
    /// `[|Q| x |P|]` dot-product similarities.
    pub similarity: Var,
    /// `[|P| x |Q|]`; row k is the attention of passage word k over the question.
    pub c2q: Var,
    /// `[1 x |P|]` attention over passage words from the column maxima.
    pub q2c: Var,
    /// `[|P| x 2H]` fused representation.
    pub fused: Var,
}

/// Everything the heads need from one example.
#[derive(Clone, Debug)]
pub struct EncodedExample {
    pub question: BiLstmOutput,
    /// Raw `[e; c]` rows per passage.
    pub passage_embeddings: Vec<Var>,
    pub passages: Vec<MatchedPassage>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub embeddings: EmbeddingTable,
    pub question: BiLstm,
    pub passage: BiLstm,
    pub fusion: BiLstm,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        embeddings: EmbeddingTable,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = embeddings.output_dim();
        Ok(Self {
            question: BiLstm::new(store, "encoder.question", d, hidden, rng)?,
            passage: BiLstm::new(store, "encoder.passage", d, hidden, rng)?,
            fusion: BiLstm::new(store, "encoder.fusion", 8 * hidden, hidden, rng)?,
            embeddings,
        })
    }

    pub fn load(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            embeddings: EmbeddingTable::load(store)?,
            question: BiLstm::load(store, "encoder.question")?,
            passage: BiLstm::load(store, "encoder.passage")?,
            fusion: BiLstm::load(store, "encoder.fusion")?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.question.hidden()
    }

    /// Encodes the question once and every passage independently.
    pub fn encode(&self, tape: &mut Tape, inputs: &ExampleInputs) -> Result<EncodedExample> {
        if inputs.passages.is_empty() {
            return Err(Error::contract("example has no passages"));
        }
        let q_emb = self.embeddings.embed(tape, &inputs.question)?;
        let question = self.question.run(tape, q_emb)?;
        let mut passage_embeddings = Vec::with_capacity(inputs.passages.len());
        for (i, p) in inputs.passages.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::contract(format!("passage {i} is empty")));
            }
            passage_embeddings.push(self.embeddings.embed(tape, p)?);
        }
        let lens: Vec<usize> = inputs.passages.iter().map(|p| p.len()).collect();
        let encoded = run_grouped(tape, &self.passage, &passage_embeddings, &lens)?;
        let mut flows = Vec::with_capacity(encoded.len());
        for u_p in encoded {
            flows.push(attention_flow(tape, question.states, u_p)?);
        }
        let merged: Vec<Var> = flows.iter().map(|f| f.3).collect();
        let fused = run_grouped(tape, &self.fusion, &merged, &lens)?;
        let passages = flows
            .into_iter()
            .zip(fused)
            .map(|((similarity, c2q, q2c, _), fused)| MatchedPassage {
                similarity,
                c2q,
                q2c,
                fused,
            })
            .collect();
        Ok(EncodedExample {
            question,
            passage_embeddings,
            passages,
        })
    }

    /// Attention flow between `u_q [|Q| x 2H]` and `u_p [|P| x 2H]` followed
    /// by the fusion BiLSTM over `[u; u~; u*u~; u*h^]`.
    pub fn match_passage(&self, tape: &mut Tape, u_q: Var, u_p: Var) -> Result<MatchedPassage> {
        let (s, c2q, q2c, merged) = attention_flow(tape, u_q, u_p)?;
        let fused = self.fusion.run(tape, merged)?.states;
        Ok(MatchedPassage {
            similarity: s,
            c2q,
            q2c,
            fused,
        })
    }
}

/// BiLSTM states of each sequence, batching sequences of equal length.
fn run_grouped(tape: &mut Tape, layer: &BiLstm, seqs: &[Var], lens: &[usize]) -> Result<Vec<Var>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in lens.iter().enumerate() {
        groups.entry(len).or_default().push(i);
    }
    let mut out = vec![None; seqs.len()];
    for members in groups.values() {
        let batch: Vec<Var> = members.iter().map(|&i| seqs[i]).collect();
        for (&i, o) in members.iter().zip(layer.run_many(tape, &batch)?) {
            out[i] = Some(o.states);
        }
    }
    Ok(out.into_iter().flatten().collect())
}

/// Parameter-free half of the matcher: returns `(S, C2Q, Q2C, merged)`.
pub fn attention_flow(tape: &mut Tape, u_q: Var, u_p: Var) -> Result<(Var, Var, Var, Var)> {
    if tape.value(u_q).rows() == 0 {
        return Err(Error::contract("question has no unmasked positions"));
    }
    let u_p_t = tape.transpose(u_p);
    let s = tape.matmul(u_q, u_p_t)?;
    let s_t = tape.transpose(s);
    let c2q = tape.softmax_rows(s_t, None)?;
    let attended_q = tape.matmul(c2q, u_q)?;
    let col_max = tape.max_over_rows(s);
    let q2c = tape.softmax_rows(col_max, None)?;
    let summary = tape.matmul(q2c, u_p)?;
    let u_aq = tape.mul(u_p, attended_q)?;
    let u_summary = tape.mul_row(u_p, summary)?;
    let merged = tape.hcat(&[u_p, attended_q, u_aq, u_summary])?;
    Ok((s, c2q, q2c, merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndcore::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(word_dim: usize, char_dim: usize) -> (ParamStore, Vocabulary, EmbeddingTable) {
        let toks: Vec<String> = ["a", "bc"].iter().map(|s| s.to_string()).collect();
        let vocab = Vocabulary::from_tokens(&toks);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = EmbeddingTable::new(&mut store, &vocab, word_dim, char_dim, 0.1, None, &mut rng).unwrap();
        (store, vocab, emb)
    }

    #[test]
    fn embedding_rows() {
        let (store, vocab, emb) = setup(4, 3);
        let mut tape = Tape::with_params(&store);
        let seq = TokenSeq::encode(&["a".into(), "zz".into()], &vocab);
        let out = emb.embed(&mut tape, &seq).unwrap();
        let v = tape.value(out);
        assert_eq!(v.shape(), &[2, 7]);
        let words = store.value(emb.word);
        let chars = store.value(emb.char);
        let a = vocab.word_id("a");
        assert_eq!(&v.row_slice(0)[..4], words.row_slice(a));
        assert_eq!(&v.row_slice(0)[4..], chars.row_slice(vocab.char_ids("a")[0]));
        assert_eq!(&v.row_slice(1)[..4], words.row_slice(crate::data::UNK));
    }

    #[test]
    fn default_widths() {
        let (_, _, emb) = setup(300, 30);
        assert_eq!(emb.output_dim(), 330);
    }

    #[test]
    fn pad_rows_zero_and_frozen() {
        let (store, _, emb) = setup(4, 3);
        for id in [emb.word, emb.char] {
            let p = store.get(id);
            assert!(p.value.row_slice(PAD).iter().all(|x| *x == 0.0));
            assert!(p.is_row_frozen(PAD));
            assert!(!p.is_row_frozen(PAD + 1));
        }
    }

    #[test]
    fn pretrained_rows_loaded_and_frozen() {
        let toks: Vec<String> = ["a", "bc"].iter().map(|s| s.to_string()).collect();
        let vocab = Vocabulary::from_tokens(&toks);
        let pre = PretrainedVectors::parse("bc 1 2\nother 3 4\n", 2).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = EmbeddingTable::new(&mut store, &vocab, 2, 2, 0.1, Some(&pre), &mut rng).unwrap();
        let p = store.get(emb.word);
        let bc = vocab.word_id("bc");
        assert_eq!(p.value.row_slice(bc), &[1.0, 2.0]);
        assert!(p.is_row_frozen(bc));
        assert!(!p.is_row_frozen(vocab.word_id("a")));
        assert!(PretrainedVectors::parse("x 1\n", 2).is_err());
        assert!(PretrainedVectors::parse("x 1 nope\n", 2).is_err());
    }

    #[test]
    fn orthogonal_inputs_give_uniform_c2q() {
        let mut tape = Tape::new();
        let u_q = tape.leaf(Tensor::from_vec(3, 4, vec![1., 0., 0., 0., 0., 1., 0., 0., 1., 1., 0., 0.]));
        let u_p = tape.leaf(Tensor::from_vec(2, 4, vec![0., 0., 1., 0., 0., 0., 0., 2.]));
        let (s, c2q, _, merged) = attention_flow(&mut tape, u_q, u_p).unwrap();
        assert_eq!(tape.value(s).shape(), &[3, 2]);
        assert!(tape.value(s).data().iter().all(|x| *x == 0.0));
        for x in tape.value(c2q).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(tape.value(merged).shape(), &[2, 16]);
    }
}
