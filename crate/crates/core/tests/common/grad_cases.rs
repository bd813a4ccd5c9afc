//! Gradient-check scenarios for each head and for the joint loss.

use crossverify::boundary::{boundary_loss_one, PointerNet};
use crossverify::content::{answer_representation, content_loss_one, ContentHead};
use crossverify::data::{derive_content_labels, make_batch, Vocabulary};
use crossverify::encoder::{EmbeddingTable, Encoder};
use crossverify::verification::{cross_attend, verification_loss_one, Verifier};
use ndcore::{ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

const H: usize = 3;

/// Encoder and question-passage matcher, through every passage output.
pub fn encoder_and_matcher() -> GradientReport {
    let examples = toy_examples(1, 2, 5, 3);
    let vocab = Vocabulary::from_examples(&examples);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let table = EmbeddingTable::new(&mut store, &vocab, 4, 2, 0.5, None, &mut rng).unwrap();
    let encoder = Encoder::new(&mut store, table, H, &mut rng).unwrap();
    let config = toy_config();
    let batch = make_batch(&examples, &vocab, &config.batch(true)).unwrap();
    let inputs = batch.item(0);
    check_gradients(&store, &[], |t, _| {
        let enc = encoder.encode(t, &inputs).unwrap();
        let mut total = project(t, enc.question.states, 100);
        for (i, p) in enc.passages.iter().enumerate() {
            let f = project(t, p.fused, 200 + i as u64);
            let c = project(t, p.c2q, 300 + i as u64);
            let fc = t.add(f, c).unwrap();
            total = t.add(total, fc).unwrap();
        }
        total
    })
}

/// Pointer network and boundary loss, inputs included.
pub fn boundary_head() -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let pointer = PointerNet::new(&mut store, H, &mut rng).unwrap();
    let passages = random_tensor(&mut rng, 8, 2 * H, 1.0);
    let question = random_tensor(&mut rng, 1, 2 * H, 1.0);
    check_gradients(&store, &[passages, question], |t, v| {
        let dist = pointer.predict(t, v[0], v[1]).unwrap();
        boundary_loss_one(t, dist, 2, 5).unwrap()
    })
}

/// Content head, its loss and the answer representation.
pub fn content_head() -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let head = ContentHead::new(&mut store, H, &mut rng).unwrap();
    let matched = random_tensor(&mut rng, 7, 2 * H, 1.0);
    let embedded = random_tensor(&mut rng, 7, 5, 1.0);
    let labels = vec![vec![0, 1, 1, 0], derive_content_labels(0, 0, 3).unwrap()];
    check_gradients(&store, &[matched, embedded], |t, v| {
        let probs = head.probs(t, v[0]).unwrap();
        let first = t.slice_rows(probs, 0, 4).unwrap();
        let second = t.slice_rows(probs, 4, 3).unwrap();
        let loss = content_loss_one(t, &[first, second], &labels).unwrap();
        let emb = t.slice_rows(v[1], 0, 4).unwrap();
        let r = answer_representation(t, first, emb).unwrap();
        let r = project(t, r, 7);
        t.add(loss, r).unwrap()
    })
}

/// Cross attention, verifier scores and verification loss.
pub fn verification_head(mask_self: bool) -> GradientReport {
    {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let verifier = Verifier::new(&mut store, 5, &mut rng).unwrap();
        let reprs = random_tensor(&mut rng, 4, 5, 1.0);
        check_gradients(&store, &[reprs], |t, v: &[Var]| {
            let att = cross_attend(t, v[0], mask_self).unwrap();
            let p = verifier.scores(t, v[0], att.attended).unwrap();
            verification_loss_one(t, p, 2).unwrap()
        })
    }
}

/// Joint loss with L2 through the whole model.
pub fn joint_loss() -> GradientReport {
    let examples = toy_examples(2, 3, 4, 5);
    let model = toy_model(toy_config(), &examples);
    let batch = toy_batch(&model, &examples);
    check_gradients(&model.store, &[], |t: &mut Tape, _| {
        model.batch_loss(t, &batch).unwrap().total
    })
}
