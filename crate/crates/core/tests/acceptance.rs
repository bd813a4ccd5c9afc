//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 5 6`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use crossverify::boundary::{
    boundary_loss_one, constant_distribution, extract_candidates, BoundaryDistribution,
};
use crossverify::data::{derive_gold_span, generate_synthetic, OffsetTable};
use crossverify::metrics::{lcs_len, rouge_l, ROUGE_BETA};
use crossverify::pipeline::{
    dev_score, joint_loss, predict_all, select_by_product, train, Checkpoint, ConfigFile, DevMetric, ModelConfig,
};
use crossverify::verification::verification_loss_one;
use ndcore::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAINABILITY: &str = include_str!("../../../configs/trainability.toml");
const VERIFICATION: &str = include_str!("../../../configs/verification.toml");

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let heads = [
        ("encoder+matcher", grad_cases::encoder_and_matcher()),
        ("boundary", grad_cases::boundary_head()),
        ("content", grad_cases::content_head()),
        ("verification", grad_cases::verification_head(false)),
        ("verification (self masked)", grad_cases::verification_head(true)),
    ];
    let mut worst: f64 = 0.0;
    for (head, report) in &heads {
        let (err, tensor) = report.worst();
        ensure(err < GRAD_TOL, || format!("{head}: {tensor} relative error {err:e}"))?;
        worst = worst.max(err);
    }
    let joint = grad_cases::joint_loss().overall;
    ensure(joint < GRAD_TOL, || format!("joint loss: relative error {joint:e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "worst per-tensor error {worst:.1e}, joint {joint:.1e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn normalization() -> Outcome {
    for trial in 0..1000u64 {
        normalization_trial(trial).map_err(|e| format!("trial {trial}: {e}"))?;
    }
    Ok("1000 trials, sums within 1e-9, diagonal exactly 0".into())
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let n_passages = rng.random_range(1..=4);
        let mut lens: Vec<usize> = (0..n_passages).map(|_| rng.random_range(0..=5)).collect();
        while lens.iter().sum::<usize>() == 0 || lens.iter().sum::<usize>() > 12 {
            lens = (0..n_passages).map(|_| rng.random_range(0..=5)).collect();
        }
        let n: usize = lens.iter().sum();
        let grid = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0u8..=4)) + 0.5).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total).collect::<Vec<f64>>()
        };
        let (start, end) = (grid(&mut rng), grid(&mut rng));
        let max_len = rng.random_range(1..=6);
        let got = extract_candidates(&start, &end, &OffsetTable::new(lens.clone()), max_len).unwrap();
        let got: Vec<_> = got.iter().map(|c| (c.passage, c.start, c.end, c.score)).collect();
        ensure(got == oracle_candidates(&start, &end, &lens, max_len), || {
            format!("extraction case {case} differs")
        })?;
    }
    for case in 0..100 {
        let len = rng.random_range(1..=12);
        let passage = random_tokens(&mut rng, len, 4);
        let refs: Vec<String> = (0..rng.random_range(1..=2))
            .map(|_| {
                let rl = rng.random_range(1..=4);
                random_tokens(&mut rng, rl, 5).join(" ")
            })
            .collect();
        let got = derive_gold_span(&passage, &refs).unwrap();
        let (s, e, score) = oracle_gold_span(&passage, &refs).unwrap();
        ensure(
            (got.start, got.end) == (s, e) && (got.score - score).abs() < 1e-12,
            || format!("gold span case {case}: ({}, {}) vs ({s}, {e})", got.start, got.end),
        )?;
    }
    for case in 0..500 {
        let la = rng.random_range(0..8);
        let lb = rng.random_range(0..8);
        let a = random_tokens(&mut rng, la, 4);
        let b = random_tokens(&mut rng, lb, 4);
        ensure(lcs_len(&a, &b) == brute_force_lcs(&a, &b), || format!("LCS case {case}"))?;
        let (got, want) = (rouge_l(&a, &b, ROUGE_BETA), oracle_rouge(&a, &b, ROUGE_BETA));
        ensure((got - want).abs() < 1e-12, || format!("ROUGE-L case {case}: {got} vs {want}"))?;
    }
    Ok("200 extraction, 100 gold-span and 500 ROUGE-L cases agree".into())
}

fn worked_example() -> Outcome {
    let triples = [
        [1.0e-2, 1.0e-1, 1.1e-1],
        [1.0e-4, 4.0e-2, 3.2e-2],
        [5.5e-3, 7.7e-2, 1.2e-1],
        [2.7e-3, 8.1e-2, 1.3e-1],
        [5.8e-4, 7.9e-2, 5.1e-2],
        [5.8e-3, 9.1e-2, 2.7e-1],
    ];
    let (chosen, product) = select_by_product(&triples).unwrap();
    let first: f64 = triples[0].iter().product();
    ensure(chosen == 5, || format!("chose candidate [{}]", chosen + 1))?;
    ensure((product - 1.43e-4).abs() / 1.43e-4 < 0.01, || format!("product {product:e}"))?;
    ensure((first - 1.1e-4).abs() < 1e-12, || format!("candidate [1] product {first:e}"))?;
    Ok(format!("candidate [6] chosen, {product:.3e} over {first:.2e}"))
}

fn trainability() -> Outcome {
    let file = ConfigFile::parse(TRAINABILITY).map_err(|e| e.to_string())?;
    let (train_set, _) = generate_synthetic(&file.synth, file.model.seed).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = train(&file.model, &train_set, &train_set, &mut |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let best = out.report.best_metric.unwrap_or(0.0);
    let acc = dev_score(&out.best.model.eval_view(), &train_set, DevMetric::ExactSpan).map_err(|e| e.to_string())?;
    let epochs = out.report.epochs.len();
    ensure(acc >= 0.95 && (acc - best).abs() < 1e-12, || {
        format!("training accuracy {acc:.3} after {epochs} epochs")
    })?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "training exact-span {acc:.3} after {epochs} epochs, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn dev_accuracy(model: &ModelConfig, seed: u64, ablate: bool) -> Result<f64, String> {
    let file = ConfigFile::parse(VERIFICATION).map_err(|e| e.to_string())?;
    let (train_set, dev) = generate_synthetic(&file.synth, seed).map_err(|e| e.to_string())?;
    let mut config = ModelConfig { seed, ..model.clone() };
    if ablate {
        config.beta_content = 0.0;
        config.beta_verification = 0.0;
        config.score_content = false;
        config.score_verification = false;
    }
    let out = train(&config, &train_set, &dev, &mut |_| {}).map_err(|e| e.to_string())?;
    Ok(out.report.best_metric.unwrap_or(0.0))
}

fn verification_usefulness() -> Outcome {
    let file = ConfigFile::parse(VERIFICATION).map_err(|e| e.to_string())?;
    let seeds = [1u64, 2, 3];
    let mut full = Vec::new();
    let mut ablated = Vec::new();
    for &seed in &seeds {
        full.push(dev_accuracy(&file.model, seed, false)?);
        ablated.push(dev_accuracy(&file.model, seed, true)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, a) = (mean(&full), mean(&ablated));
    let line = format!("full {f:.3} {full:?} vs boundary-only {a:.3} {ablated:?}");
    ensure(f >= a, || line.clone())?;
    Ok(line)
}

fn determinism_and_persistence() -> Outcome {
    let config = ModelConfig {
        hidden: 4,
        word_dim: 6,
        char_dim: 3,
        learning_rate: 0.01,
        batch_size: 4,
        max_epochs: 3,
        ema_decay: 0.9,
        seed: 7,
        ..ModelConfig::default()
    };
    let data = toy_examples(12, 3, 6, 1);
    let run = || train(&config, &data, &data[..4], &mut |_| {}).map_err(|e| e.to_string());
    let (a, b) = (run()?, run()?);
    ensure(a.report.steps == b.report.steps, || "loss traces differ".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("best.json");
    a.best.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let bits = |c: &Checkpoint| -> Vec<u64> {
        c.model.store.parameters().iter().flat_map(|p| p.value.data().iter().map(|x| x.to_bits())).collect()
    };
    ensure(bits(&loaded) == bits(&a.best), || "parameters changed on reload".into())?;
    let before = predict_all(&a.best.model.eval_view(), &data).map_err(|e| e.to_string())?;
    let after = predict_all(&loaded.model.eval_view(), &data).map_err(|e| e.to_string())?;
    ensure(before == after, || "predictions changed on reload".into())?;
    Ok(format!("{} identical steps, bit-identical reload", a.report.steps.len()))
}

fn degenerate_cases() -> Outcome {
    let examples = toy_examples(1, 1, 6, 2);
    let model = toy_model(toy_config(), &examples);
    let batch = toy_batch(&model, &examples);
    let mut tape = Tape::with_params(&model.store);
    let out = model.forward(&mut tape, &batch.item(0)).map_err(|e| e.to_string())?;
    let pv = tape.value(out.verification).data().to_vec();
    ensure(pv == [1.0], || format!("single passage p^v = {pv:?}"))?;
    let lv = verification_loss_one(&mut tape, out.verification, 0).unwrap();
    ensure(tape.value(lv).item() == 0.0, || "single passage verification loss is not 0".into())?;

    for n in [1usize, 3, 16, 64] {
        let u = vec![1.0 / n as f64; n];
        let dist = BoundaryDistribution {
            start: constant_distribution(&mut tape, u.clone()),
            end: constant_distribution(&mut tape, u.clone()),
        };
        let lb = boundary_loss_one(&mut tape, dist, 0, n - 1).unwrap();
        let lb = tape.value(lb).item();
        ensure((lb - 2.0 * (n as f64).ln()).abs() < 1e-12, || format!("uniform boundary loss {lb} for n={n}"))?;
        let p = constant_distribution(&mut tape, u);
        let lv = verification_loss_one(&mut tape, p, n - 1).unwrap();
        let lv = tape.value(lv).item();
        ensure((lv - (n as f64).ln()).abs() < 1e-12, || format!("uniform verification loss {lv} for n={n}"))?;
    }

    let zero = ModelConfig {
        beta_content: 0.0,
        beta_verification: 0.0,
        ..toy_config()
    };
    let examples = toy_examples(3, 3, 6, 4);
    let model = toy_model(zero, &examples);
    let batch = toy_batch(&model, &examples);
    let mut tape = Tape::with_params(&model.store);
    let parts = model.batch_loss(&mut tape, &batch).map_err(|e| e.to_string())?;
    let j = joint_loss(&mut tape, parts.boundary, parts.content, parts.verification, 0.0, 0.0).unwrap();
    ensure(tape.value(j).item() == tape.value(parts.boundary).item(), || {
        "zero-weight joint loss differs from boundary loss".into()
    })?;
    Ok("single passage, uniform distributions and zero weights all exact".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient integrity", gradient_integrity),
        ("normalization invariants", normalization),
        ("oracle equivalence", oracle_equivalence),
        ("worked ranking example", worked_example),
        ("trainability", trainability),
        ("verification usefulness", verification_usefulness),
        ("determinism and persistence", determinism_and_persistence),
        ("degenerate cases", degenerate_cases),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {number} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {number} ({name}): FAIL - {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
