use std::collections::BTreeMap;

use habitmotion_core::habit::{sample_habit, HabitConfig, HabitMode, HabitModel};
use habitmotion_core::motion::synth;
use habitmotion_core::nn::Tensor;
use habitmotion_core::retrieval::{
    get_condition, nearest_observed, retrieve_habit, EmbeddingStore, HabitSource, Projection, PROJECTED_DIM,
};
use habitmotion_core::Error;
use proptest::prelude::*;

fn identity_projection(dim: usize) -> Projection {
    let mut w = vec![0.0; dim * dim];
    for i in 0..dim {
        w[i * dim + i] = 1.0;
    }
    Projection::new(Tensor::matrix(dim, dim, w), vec![0.0; dim]).unwrap()
}

fn model(label: &str, seed: u64) -> HabitModel {
    let config = HabitConfig {
        latent_dim: 4,
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

/// Store over 3-dim vectors projected by the identity, with models for the
/// observed labels.
fn hand_store(points: &[(&str, [f64; 3], bool)]) -> (EmbeddingStore, BTreeMap<String, HabitModel>) {
    let mut store = EmbeddingStore::new(3).unwrap();
    let mut models = BTreeMap::new();
    for (i, (label, v, observed)) in points.iter().enumerate() {
        store.insert(label, v.to_vec(), "hand", *observed).unwrap();
        if *observed {
            models.insert(label.to_string(), model(label, i as u64));
        }
    }
    store.project_all(&identity_projection(3)).unwrap();
    (store, models)
}

#[test]
fn store_validation() {
    let mut store = EmbeddingStore::new(8).unwrap();
    store.insert("horse", vec![0.0; 8], "synthetic", true).unwrap();
    store.insert("cat", vec![1.0; 8], "synthetic", true).unwrap();
    assert_eq!(store.len(), 2);
    assert!(matches!(store.insert("cow", vec![0.0; 16], "synthetic", true), Err(Error::Embedding(_))));
    let err = store.insert("horse", vec![0.0; 8], "synthetic", true).unwrap_err();
    assert!(err.to_string().contains("horse"));
    assert!(EmbeddingStore::new(0).is_err());
    assert!(store.insert("nan", vec![f64::NAN; 8], "synthetic", true).is_err());
}

#[test]
fn projection_is_linear_and_256_wide() {
    let p = Projection::random(8, PROJECTED_DIM, 3).unwrap();
    let mut store = EmbeddingStore::new(8).unwrap();
    store.insert("a", vec![0.0; 8], "x", false).unwrap();
    let zero = store.project(&p, &[0.0; 8]).unwrap();
    assert_eq!(zero, vec![0.0; PROJECTED_DIM]);
    let a: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
    let b: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let (pa, pb, ps) = (p.apply(&a).unwrap(), p.apply(&b).unwrap(), p.apply(&sum).unwrap());
    for i in 0..PROJECTED_DIM {
        assert!((ps[i] - pa[i] - pb[i]).abs() < 1e-12);
    }
    assert!(store.project(&p, &[0.0; 4]).is_err());
    assert_eq!(p, Projection::random(8, PROJECTED_DIM, 3).unwrap());
    assert_ne!(p, Projection::random(8, PROJECTED_DIM, 4).unwrap());
}

#[test]
fn exact_match_is_a_fixed_point() {
    let (store, models) = hand_store(&[("a", [0.0, 1.0, 2.0], true), ("b", [5.0, 5.0, 5.0], true)]);
    let r = retrieve_habit(&[5.0, 5.0, 5.0], &store, &models, HabitMode::Deterministic, 0).unwrap();
    assert_eq!(r.category, "b");
    assert_eq!(r.distance, 0.0);
    assert_eq!(r.habit, sample_habit(&models["b"], HabitMode::Deterministic, 0).unwrap());
}

#[test]
fn hand_distances() {
    let (store, models) = hand_store(&[("A", [0.0, 0.0, 0.0], true), ("B", [3.0, 0.0, 0.0], true)]);
    let r = nearest_observed(&[1.0, 0.0, 0.0], &store, models.keys().map(String::as_str)).unwrap();
    assert_eq!(r.category, "A");
    assert_eq!(r.distance, 1.0);
    let r = nearest_observed(&[2.5, 0.0, 0.0], &store, ["A", "B"]).unwrap();
    assert_eq!((r.category.as_str(), r.distance), ("B", 0.5));
}

#[test]
fn ties_go_to_the_smaller_label() {
    let (store, models) = hand_store(&[("zebu", [1.0, 0.0, 0.0], true), ("auroch", [-1.0, 0.0, 0.0], true)]);
    let r = retrieve_habit(&[0.0, 0.0, 0.0], &store, &models, HabitMode::Deterministic, 0).unwrap();
    assert_eq!(r.category, "auroch");
    assert_eq!(r.distance, 1.0);
}

#[test]
fn no_observed_categories() {
    let (store, models) = hand_store(&[("a", [0.0, 0.0, 0.0], false)]);
    assert!(matches!(
        retrieve_habit(&[0.0; 3], &store, &models, HabitMode::Deterministic, 0),
        Err(Error::Empty(_))
    ));
}

#[test]
fn conditions_for_observed_unseen_and_absent_labels() {
    let (store, models) = hand_store(&[
        ("horse", [0.0, 0.0, 0.0], true),
        ("cat", [4.0, 0.0, 0.0], true),
        ("okapi", [0.5, 0.2, 0.0], false),
    ]);
    let own = get_condition("cat", &store, &models, HabitMode::Stochastic, 7).unwrap();
    assert_eq!(own.source, HabitSource::Own);
    assert_eq!(own.habit, sample_habit(&models["cat"], HabitMode::Stochastic, 7).unwrap());
    assert_eq!(own.projected, vec![4.0, 0.0, 0.0]);

    let borrowed = get_condition("okapi", &store, &models, HabitMode::Deterministic, 0).unwrap();
    match &borrowed.source {
        HabitSource::Retrieved { category, distance } => {
            assert_eq!(category, "horse");
            assert!((distance - (0.29f64).sqrt()).abs() < 1e-12);
        }
        other => panic!("expected retrieval, got {other:?}"),
    }
    assert_eq!(borrowed.habit, sample_habit(&models["horse"], HabitMode::Deterministic, 0).unwrap());
    assert_eq!(borrowed.projected, vec![0.5, 0.2, 0.0]);

    let err = get_condition("narwhal", &store, &models, HabitMode::Deterministic, 0).unwrap_err();
    assert!(matches!(err, Error::UnknownCategory(ref l) if l == "narwhal"));
}

#[test]
fn okapi_borrows_from_horse_in_the_shipped_store() {
    let labels = synth::category_labels();
    let mut store = EmbeddingStore::new(64).unwrap();
    let observed = ["cat", "cow", "horse"];
    for l in &labels {
        store
            .insert(l, synth::synthetic_embedding(l, 64).unwrap(), "synthetic", observed.contains(l))
            .unwrap();
    }
    store.project_all(&Projection::random(64, PROJECTED_DIM, 5).unwrap()).unwrap();
    let models: BTreeMap<String, HabitModel> =
        observed.iter().enumerate().map(|(i, l)| (l.to_string(), model(l, i as u64))).collect();
    let c = get_condition("okapi", &store, &models, HabitMode::Deterministic, 0).unwrap();
    assert!(matches!(c.source, HabitSource::Retrieved { ref category, .. } if category == "horse"));
}

#[test]
fn mark_observed_follows_models() {
    let (mut store, _) = hand_store(&[("a", [0.0; 3], true), ("b", [1.0; 3], false)]);
    store.mark_observed(["b"]);
    assert!(!store.get("a").unwrap().observed);
    assert!(store.get("b").unwrap().observed);
}

proptest! {
    #[test]
    fn argmin_is_scale_consistent(
        points in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 2..6),
        query in proptest::array::uniform3(-5.0f64..5.0),
        factor in 0.1f64..10.0,
    ) {
        let labels: Vec<String> = (0..points.len()).map(|i| format!("c{i}")).collect();
        let build = |k: f64| {
            let mut s = EmbeddingStore::new(3).unwrap();
            for (l, p) in labels.iter().zip(&points) {
                s.insert(l, p.iter().map(|v| v * k).collect(), "p", true).unwrap();
            }
            s.project_all(&identity_projection(3)).unwrap();
            s
        };
        let (plain, scaled) = (build(1.0), build(factor));
        let q: Vec<f64> = query.iter().map(|v| v * factor).collect();
        let a = nearest_observed(&query, &plain, labels.iter().map(String::as_str)).unwrap();
        let b = nearest_observed(&q, &scaled, labels.iter().map(String::as_str)).unwrap();
        // near-ties can flip under rounding; only compare clear winners
        let second = labels.iter().filter(|l| **l != a.category).map(|l| {
            let p = &points[labels.iter().position(|x| x == l).unwrap()];
            habitmotion_core::math::euclidean(&query, p)
        }).fold(f64::INFINITY, f64::min);
        if second - a.distance > 1e-9 {
            prop_assert_eq!(a.category, b.category);
        }
    }
}
