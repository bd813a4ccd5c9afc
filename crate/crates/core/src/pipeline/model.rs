use ndcore::{ParamKind, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::boundary::{boundary_loss_one, mean_of, BoundaryDistribution, PointerNet};
use crate::content::{answer_representation, content_loss_one, ContentHead};
use crate::data::{Batch, ExampleInputs, Vocabulary};
use crate::encoder::{EmbeddingTable, EncodedExample, Encoder, PretrainedVectors};
use crate::error::{Error, Result};
use crate::verification::{cross_attend, verification_loss_one, CrossAttention, Verifier};

/// Parameters, vocabulary and the layer handles into the store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub pointer: PointerNet,
    pub content: ContentHead,
    pub verifier: Verifier,
}

/// Graph nodes of one example's forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub encoded: EncodedExample,
    pub boundary: BoundaryDistribution,
    /// `[len_i x 1]` per passage.
    pub content: Vec<Var>,
    /// `[n x (word_dim + char_dim)]`, one row per passage.
    pub representations: Var,
    pub attention: CrossAttention,
    /// `[1 x n]`
    pub verification: Var,
}

/// Scalar loss nodes, each already averaged over the batch.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub boundary: Var,
    pub content: Var,
    pub verification: Var,
    /// Joint loss plus the L2 penalty.
    pub total: Var,
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, pretrained: Option<&PretrainedVectors>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let embeddings = EmbeddingTable::new(
            &mut store,
            &vocab,
            config.word_dim,
            config.char_dim,
            config.embedding_scale,
            pretrained,
            &mut rng,
        )?;
        let repr_dim = embeddings.output_dim();
        let encoder = Encoder::new(&mut store, embeddings, h, &mut rng)?;
        let pointer = PointerNet::new(&mut store, h, &mut rng)?;
        let content = ContentHead::new(&mut store, h, &mut rng)?;
        let verifier = Verifier::new(&mut store, repr_dim, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            store,
            encoder,
            pointer,
            content,
            verifier,
        })
    }

    /// Adopts an existing store after checking it has exactly the
    /// parameters and shapes `config` and `vocab` call for.
    pub fn from_store(config: ModelConfig, vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        let template = Self::new(config.clone(), vocab.clone(), None)?;
        for p in template.store.parameters() {
            let found = store
                .by_name(&p.name)
                .map_err(|_| Error::Checkpoint(format!("parameter `{}` is missing", p.name)))?;
            if found.value.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: found.value.shape().to_vec(),
                });
            }
        }
        if store.len() != template.store.len() {
            let extra = store
                .parameters()
                .iter()
                .find(|p| template.store.id(&p.name).is_err())
                .map_or_else(String::new, |p| p.name.clone());
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self {
            encoder: Encoder::load(&store)?,
            pointer: PointerNet::load(&store)?,
            content: ContentHead::load(&store)?,
            verifier: Verifier::load(&store)?,
            config,
            vocab,
            store,
        })
    }

    /// The same model with EMA shadows as live weights.
    pub fn eval_view(&self) -> Self {
        let mut m = self.clone();
        m.store.ema_swap();
        m
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &ExampleInputs) -> Result<ForwardOutput> {
        let encoded = self.encoder.encode(tape, inputs)?;
        let fused: Vec<Var> = encoded.passages.iter().map(|p| p.fused).collect();
        let all = tape.vcat(&fused)?;
        let question = tape.hcat(&[encoded.question.last_forward, encoded.question.last_backward])?;
        let boundary = self.pointer.predict(tape, all, question)?;

        let probs_all = self.content.probs(tape, all)?;
        let mut content = Vec::with_capacity(fused.len());
        let mut reprs = Vec::with_capacity(fused.len());
        let mut offset = 0;
        for emb in &encoded.passage_embeddings {
            let len = tape.value(*emb).rows();
            let p = tape.slice_rows(probs_all, offset, len)?;
            reprs.push(answer_representation(tape, p, *emb)?);
            content.push(p);
            offset += len;
        }
        let representations = tape.vcat(&reprs)?;
        let attention = cross_attend(tape, representations, self.config.mask_self_attention)?;
        let verification = self.verifier.scores(tape, representations, attention.attended)?;
        Ok(ForwardOutput {
            encoded,
            boundary,
            content,
            representations,
            attention,
            verification,
        })
    }

    /// Forward pass and losses for every item of a training batch.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<LossParts> {
        let mut lb = Vec::with_capacity(batch.len());
        let mut lc = Vec::with_capacity(batch.len());
        let mut lv = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let missing = || Error::contract(format!("training item `{}` lacks gold labels", batch.ids[b]));
            let (start, end) = batch.gold_start[b].zip(batch.gold_end[b]).ok_or_else(missing)?;
            let labels = batch.content_labels[b].as_ref().ok_or_else(missing)?;
            let gold_passage = batch.gold_passage[b].ok_or_else(missing)?;
            let out = self.forward(tape, &batch.item(b))?;
            lb.push(boundary_loss_one(tape, out.boundary, start, end)?);
            lc.push(content_loss_one(tape, &out.content, labels)?);
            lv.push(verification_loss_one(tape, out.verification, gold_passage)?);
        }
        let boundary = mean_of(tape, &lb)?;
        let content = mean_of(tape, &lc)?;
        let verification = mean_of(tape, &lv)?;
        let joint = joint_loss(
            tape,
            boundary,
            content,
            verification,
            self.config.beta_content,
            self.config.beta_verification,
        )?;
        let total = match l2_penalty(tape, &self.store, self.config.l2_weight)? {
            Some(l2) => tape.add(joint, l2)?,
            None => joint,
        };
        Ok(LossParts {
            boundary,
            content,
            verification,
            total,
        })
    }
}

/// `boundary + beta_content * content + beta_verification * verification`.
pub fn joint_loss(
    tape: &mut Tape,
    boundary: Var,
    content: Var,
    verification: Var,
    beta_content: f64,
    beta_verification: f64,
) -> Result<Var> {
    let c = tape.scale(content, beta_content);
    let v = tape.scale(verification, beta_verification);
    let bc = tape.add(boundary, c)?;
    Ok(tape.add(bc, v)?)
}

/// `weight / 2 * sum ||W||^2` over weight matrices; `None` when `weight` is 0.
pub fn l2_penalty(tape: &mut Tape, store: &ParamStore, weight: f64) -> Result<Option<Var>> {
    if weight == 0.0 {
        return Ok(None);
    }
    let mut terms = Vec::new();
    for (id, p) in store.iter() {
        if p.kind == ParamKind::Weight && p.is_trainable() {
            let w = tape.param(id)?;
            let sq = tape.mul(w, w)?;
            terms.push(tape.sum(sq));
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let stacked = tape.vcat(&terms)?;
    let total = tape.sum(stacked);
    Ok(Some(tape.scale(total, 0.5 * weight)))
}
