use std::collections::BTreeMap;

use habitmotion_core::habit::{HabitConfig, HabitMode, HabitModel};
use habitmotion_core::motion::{features_to_motion, synth, Corpus, CorpusSpec, Motion, Split};
use habitmotion_core::nn::Tensor;
use habitmotion_core::retrieval::{EmbeddingStore, HabitSource};
use habitmotion_core::transfer::{
    batch_transfer, cross_category_requests, eligible_targets, training_conditions, transfer,
    with_consistent_velocities, ConditionMask, TransferContext, TransferRequest,
};
use habitmotion_core::vqvae::{QuantizerMode, VqvaeConfig, VqvaeModel};
use habitmotion_core::Error;
use proptest::prelude::*;

const RAW: usize = 16;
const OBSERVED: [&str; 3] = ["cat", "cow", "horse"];

fn habit_model(label: &str, seed: u64) -> HabitModel {
    let config = HabitConfig {
        latent_dim: 6,
        hidden: 8,
        layers: 1,
        heads: 2,
        ff_dim: 8,
        flow_layers: 2,
        flow_hidden: 8,
        ..HabitConfig::desk(147, seed)
    };
    HabitModel::new(label, config).unwrap()
}

fn vqvae() -> VqvaeModel {
    let config = VqvaeConfig {
        width: 16,
        code_dim: 8,
        codebook_size: 8,
        cond_dim: 4,
        habit_dim: 6,
        text_dim: 12,
        raw_text_dim: Some(RAW),
        ..VqvaeConfig::desk(147)
    };
    let mut model = VqvaeModel::new(config, 3).unwrap();
    model.window = Some(10);
    model
}

fn store() -> EmbeddingStore {
    let mut store = EmbeddingStore::new(RAW).unwrap();
    for label in ["cat", "cow", "horse", "okapi"] {
        store.insert(label, synth::synthetic_embedding(label, RAW).unwrap(), "synthetic", false).unwrap();
    }
    store
}

fn context() -> TransferContext {
    let habits: BTreeMap<String, HabitModel> =
        OBSERVED.iter().enumerate().map(|(i, l)| (l.to_string(), habit_model(l, i as u64))).collect();
    TransferContext::new(vqvae(), habits, store(), None).unwrap()
}

fn corpus() -> Corpus {
    Corpus::synthesize(&CorpusSpec {
        sequences_per_category: 2,
        frames: 25,
        validation_fraction: 0.0,
        ..CorpusSpec::three_category(5)
    })
    .unwrap()
}

fn request(source: &Motion, target: &str, mode: HabitMode, seed: u64) -> TransferRequest {
    TransferRequest {
        source: source.clone(),
        source_id: "src".into(),
        target: target.into(),
        mode,
        seed,
    }
}

fn assert_valid(m: &Motion) {
    Motion::new(m.skeleton().clone(), m.category(), m.fps(), m.frames().to_vec()).unwrap();
    for f in m.frames() {
        for q in &f.rotations {
            let n = q.to_array().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn same_category_deterministic_transfer_is_the_reconstruction() {
    let ctx = context();
    let corpus = corpus();
    let src = corpus.split(Split::Train)[0];
    let out = transfer(&request(src, src.category(), HabitMode::Deterministic, 9), &ctx).unwrap();
    assert_eq!(out.habit_source, HabitSource::Own);

    let (condition, _) = ctx.condition(src.category(), HabitMode::Deterministic, 0).unwrap();
    let rec = ctx.vqvae.reconstruct(&src.to_features(), &condition, QuantizerMode::Argmax, None).unwrap();
    let (raw, _) = features_to_motion(&rec, src.skeleton(), src.category(), src.fps()).unwrap();
    assert_eq!(out.motion, with_consistent_velocities(raw).unwrap());
}

#[test]
fn output_keeps_shape_and_takes_target_label() {
    let ctx = context();
    let corpus = corpus();
    let src = corpus.split(Split::Train)[0];
    for target in OBSERVED {
        let out = transfer(&request(src, target, HabitMode::Stochastic, 4), &ctx).unwrap();
        assert_eq!(out.motion.len(), src.len());
        assert_eq!(out.motion.category(), target);
        assert_eq!(out.motion.skeleton(), src.skeleton());
        assert_eq!(out.motion.fps(), src.fps());
        assert_valid(&out.motion);
    }
}

#[test]
fn transfer_is_deterministic_per_seed() {
    let ctx = context();
    let corpus = corpus();
    let src = corpus.split(Split::Train)[1];
    let a = transfer(&request(src, "cow", HabitMode::Stochastic, 11), &ctx).unwrap();
    let b = transfer(&request(src, "cow", HabitMode::Stochastic, 11), &ctx).unwrap();
    let c = transfer(&request(src, "cow", HabitMode::Stochastic, 12), &ctx).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.motion, c.motion);
}

#[test]
fn unseen_label_borrows_a_habit() {
    let ctx = context();
    let corpus = corpus();
    let src = corpus.split(Split::Train)[0];
    let out = transfer(&request(src, "okapi", HabitMode::Deterministic, 0), &ctx).unwrap();
    match &out.habit_source {
        HabitSource::Retrieved { category, distance } => {
            assert!(OBSERVED.contains(&category.as_str()));
            assert!(*distance > 0.0);
        }
        other => panic!("expected a retrieved habit, got {other:?}"),
    }
    assert_eq!(out.motion.category(), "okapi");
    assert_valid(&out.motion);
}

#[test]
fn unknown_label_is_an_error() {
    let ctx = context();
    let corpus = corpus();
    let src = corpus.split(Split::Train)[0];
    let err = transfer(&request(src, "unicorn", HabitMode::Deterministic, 0), &ctx).unwrap_err();
    assert!(matches!(err, Error::UnknownCategory(ref l) if l == "unicorn"));
}

#[test]
fn context_needs_a_text_projection() {
    let mut model = vqvae();
    model.config.raw_text_dim = None;
    let model = VqvaeModel::new(model.config.clone(), 0).unwrap();
    let err = TransferContext::new(model, BTreeMap::new(), store(), None).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn batches_collect_failures_and_continue() {
    let ctx = context();
    assert_eq!(batch_transfer(&[], &ctx), Default::default());

    let corpus = corpus();
    let src = corpus.split(Split::Train)[0];
    let requests = [
        request(src, "cat", HabitMode::Deterministic, 0),
        request(src, "unicorn", HabitMode::Deterministic, 0),
        request(src, "okapi", HabitMode::Stochastic, 3),
    ];
    let out = batch_transfer(&requests, &ctx);
    assert_eq!(out.motions.len(), 2);
    assert_eq!(out.manifest.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].0, 1);
    assert_eq!(out.manifest[0].target_category, "cat");
    assert_eq!(out.manifest[0].habit_from, "cat");
    assert_eq!(out.manifest[1].target_category, "okapi");
    assert_ne!(out.manifest[1].habit_from, "okapi");
    assert_eq!(out.manifest[1].seed, 3);
    assert_eq!(out.manifest[1].source_category, src.category());
}

#[test]
fn cross_category_requests_respect_min_samples() {
    let corpus = corpus();
    let all = corpus.split(Split::Train);
    let horses: Vec<&Motion> = all.iter().copied().filter(|m| m.category() == "horse").collect();
    let cat = all.iter().copied().find(|m| m.category() == "cat").unwrap();
    let sources: Vec<(String, &Motion)> = vec![
        ("h0".into(), horses[0]),
        ("h1".into(), horses[1]),
        ("c0".into(), cat),
    ];
    assert_eq!(eligible_targets(sources.iter().map(|(_, m)| *m), 2), vec!["horse".to_string()]);

    let strict = cross_category_requests(&sources, 2, HabitMode::Deterministic, 0);
    assert_eq!(strict.len(), 1);
    assert_eq!((strict[0].source_id.as_str(), strict[0].target.as_str()), ("c0", "horse"));

    let loose = cross_category_requests(&sources, 1, HabitMode::Stochastic, 0);
    assert_eq!(loose.len(), 3);
    assert!(loose.iter().all(|r| r.target != r.source.category()));
    let seeds: std::collections::BTreeSet<u64> = loose.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 3);
    assert_eq!(loose, cross_category_requests(&sources, 1, HabitMode::Stochastic, 0));
}

#[test]
fn masks_zero_disabled_inputs() {
    let ctx = context().with_mask(ConditionMask { habit: false, text: true });
    let (c, _) = ctx.condition("horse", HabitMode::Stochastic, 1).unwrap();
    assert!(c.habit.iter().all(|v| *v == 0.0));
    assert!(c.text.iter().any(|v| *v != 0.0));

    let ctx = ctx.with_mask(ConditionMask { habit: true, text: false });
    let (c, _) = ctx.condition("horse", HabitMode::Stochastic, 1).unwrap();
    assert!(c.habit.iter().any(|v| *v != 0.0));
    assert!(c.text.iter().all(|v| *v == 0.0));
    assert_eq!(ConditionMask::default(), ConditionMask::FULL);
}

#[test]
fn training_conditions_match_transfer_conditions() {
    let ctx = context();
    let conditions = training_conditions(&ctx.habits, &ctx.store, None, 3, 8).unwrap();
    assert_eq!(conditions.keys().map(String::as_str).collect::<Vec<_>>(), OBSERVED);
    for (label, pool) in &conditions {
        assert_eq!(pool.len(), 4);
        let (det, _) = ctx.condition(label, HabitMode::Deterministic, 77).unwrap();
        assert_eq!(pool[0], det);
        for c in &pool[1..] {
            assert_eq!(c.text, det.text);
            assert_ne!(c.habit, det.habit);
        }
        assert_ne!(pool[1].habit, pool[2].habit);
    }
    assert_eq!(conditions, training_conditions(&ctx.habits, &ctx.store, None, 3, 8).unwrap());
    let single = training_conditions(&ctx.habits, &ctx.store, None, 0, 8).unwrap();
    assert!(single.values().all(|p| p.len() == 1));
}

#[test]
fn window_spans_cover_every_frame_once() {
    let mut model = vqvae();
    assert_eq!(model.window_spans(25), vec![(0, 0, 10), (10, 10, 20), (15, 20, 25)]);
    assert_eq!(model.window_spans(10), vec![(0, 0, 10)]);
    assert_eq!(model.window_spans(7), vec![(0, 0, 7)]);
    model.window = None;
    assert_eq!(model.window_spans(25), vec![(0, 0, 25)]);
}

#[test]
fn encoder_input_centres_joint_rotations_only() {
    let corpus = corpus();
    let x = corpus.split(Split::Train)[0].to_features();
    let (t, w) = (x.shape()[0], x.shape()[1]);
    let mut model = vqvae();
    let y = model.encoder_input(&x).unwrap();
    for ch in 0..w {
        let mean = (0..t).map(|i| y.data()[i * w + ch]).sum::<f64>() / t as f64;
        let same = (0..t).all(|i| y.data()[i * w + ch] == x.data()[i * w + ch]);
        if (4..84).contains(&ch) {
            assert!(mean.abs() < 1e-12, "channel {ch} mean {mean}");
        } else {
            assert!(same, "channel {ch} changed");
        }
    }
    model.config.center_pose = false;
    assert_eq!(model.encoder_input(&x).unwrap(), x);
    assert!(model.encoder_input(&Tensor::zeros(&[3, 10])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn window_spans_partition(frames in 1usize..200, window in 1usize..40) {
        let mut model = vqvae();
        model.window = Some(window);
        let spans = model.window_spans(frames);
        let mut next = 0;
        for &(start, keep, end) in &spans {
            prop_assert_eq!(keep, next);
            prop_assert!(start <= keep && keep < end && end <= frames);
            prop_assert!(end - start == window.min(frames));
            next = end;
        }
        prop_assert_eq!(next, frames);
    }
}
