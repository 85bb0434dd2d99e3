use habitmotion_core::metrics::{
    diversity, downstream_score, fid, intra_fid, mpjpe, mpjpe_positions, one_nna, train_feature_extractor,
    ExtractorConfig, FeatureExtractor, FeatureSet,
};
use habitmotion_core::motion::{Corpus, CorpusSpec, Frame, Motion, Quat, Skeleton, Split};
use habitmotion_core::nn::{Checkpoint, Tensor};
use habitmotion_core::rng;
use habitmotion_core::transfer::{cross_category_requests, eligible_targets, TransferRequest};
use habitmotion_core::habit::HabitMode;
use proptest::prelude::*;

fn gaussian(seed: u64, n: usize, d: usize, shift: &[f64]) -> Tensor {
    let mut r = rng::rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for j in 0..d {
            data.push(rng::standard_normal(&mut r) + shift.get(j).copied().unwrap_or(0.0));
        }
    }
    Tensor::matrix(n, d, data)
}

/// Standard-normal rows in antithetic pairs `(x, -x)`, so the sample mean is
/// exactly zero and only the covariance carries sampling noise.
fn antithetic(seed: u64, n: usize, d: usize, shift: &[f64]) -> Tensor {
    let half = gaussian(seed, n / 2, d, &[]);
    let mut data = Vec::with_capacity(n * d);
    for sign in [1.0, -1.0] {
        for i in 0..n / 2 {
            for (j, v) in half.row(i).iter().enumerate() {
                data.push(sign * v + shift.get(j).copied().unwrap_or(0.0));
            }
        }
    }
    Tensor::matrix(n, d, data)
}

#[test]
fn fid_of_a_set_with_itself() {
    let x = gaussian(1, 400, 16, &[]);
    assert!(fid(&x, &x).unwrap() < 1e-8);
    // fewer rows than dims: singular covariance
    let thin = gaussian(2, 10, 64, &[]);
    assert!(fid(&thin, &thin).unwrap() < 1e-8);
}

#[test]
fn fid_gaussian_shift() {
    let a = antithetic(3, 5000, 4, &[]);
    let b = antithetic(4, 5000, 4, &[2.0]);
    let v = fid(&a, &b).unwrap();
    assert!((v - 4.0).abs() < 0.04, "{v}");
}

#[test]
fn fid_scalar_closed_form() {
    // (mu1 - mu2)^2 + (s1 - s2)^2 with unit variances
    let a = antithetic(5, 5000, 1, &[]);
    let b = antithetic(6, 5000, 1, &[2.0]);
    let v = fid(&a, &b).unwrap();
    assert!((v - 4.0).abs() < 0.04, "{v}");

    // exact on sets whose moments are known: {-1, 1} vs {1, 5}
    let a = Tensor::matrix(2, 1, vec![-1.0, 1.0]);
    let b = Tensor::matrix(2, 1, vec![1.0, 5.0]);
    let (s1, s2) = (2f64.sqrt(), 8f64.sqrt());
    let expected = 9.0 + (s1 - s2).powi(2);
    assert!((fid(&a, &b).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn fid_needs_two_rows() {
    let one = Tensor::matrix(1, 3, vec![0.0; 3]);
    assert!(fid(&one, &gaussian(1, 5, 3, &[])).is_err());
}

#[test]
fn fid_symmetry_and_rotation_invariance() {
    let a = gaussian(7, 300, 3, &[0.5]);
    let b = gaussian(8, 300, 3, &[0.0, 1.0]);
    let ab = fid(&a, &b).unwrap();
    assert!((ab - fid(&b, &a).unwrap()).abs() < 1e-8);
    let (c, s) = (0.6f64, 0.8f64);
    let rotate = |t: &Tensor| {
        let mut out = Vec::new();
        for i in 0..t.rows() {
            let r = t.row(i);
            out.extend_from_slice(&[c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]]);
        }
        Tensor::matrix(t.rows(), 3, out)
    };
    assert!((fid(&rotate(&a), &rotate(&b)).unwrap() - ab).abs() < 1e-6);
}

fn labeled(parts: &[(&str, Tensor)]) -> FeatureSet {
    let d = parts[0].1.last_dim();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (l, t) in parts {
        data.extend_from_slice(t.data());
        labels.extend(std::iter::repeat_n(l.to_string(), t.rows()));
    }
    FeatureSet::new(Tensor::matrix(labels.len(), d, data), labels).unwrap()
}

#[test]
fn intra_fid_cases() {
    let a = gaussian(1, 50, 2, &[]);
    let b = gaussian(2, 50, 2, &[3.0]);
    let real = labeled(&[("a", a.clone()), ("b", b.clone())]);
    assert!(intra_fid(&real, &real).unwrap().mean < 1e-8);

    let shifted_b = gaussian(3, 50, 2, &[0.0, 4.0]);
    let generated = labeled(&[("a", a.clone()), ("b", shifted_b.clone())]);
    let r = intra_fid(&real, &generated).unwrap();
    let expected = fid(&b, &shifted_b).unwrap() / 2.0;
    assert!((r.mean - expected).abs() < 1e-9);
    assert!(r.per_category["a"] < 1e-8);

    let extra = labeled(&[("a", a.clone()), ("c", b.clone())]);
    let err = intra_fid(&real, &extra).unwrap_err().to_string();
    assert!(err.contains('b') && err.contains('c'), "{err}");

    let single = labeled(&[("a", a.clone()), ("b", Tensor::matrix(1, 2, vec![0.0, 0.0]))]);
    let r = intra_fid(&single, &real).unwrap();
    assert_eq!(r.excluded, vec!["b".to_string()]);
    assert_eq!(r.per_category.len(), 1);
}

#[test]
fn diversity_cases() {
    let same = Tensor::matrix(4, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    assert_eq!(diversity(&same, 300, 0).unwrap(), 0.0);
    let two = Tensor::matrix(2, 2, vec![0.0, 0.0, 3.0, 4.0]);
    assert_eq!(diversity(&two, 300, 9).unwrap(), 5.0);
    let x = gaussian(1, 30, 3, &[]);
    assert_eq!(diversity(&x, 300, 4).unwrap(), diversity(&x, 300, 4).unwrap());
    assert!(diversity(&Tensor::matrix(1, 2, vec![0.0, 0.0]), 300, 0).is_err());
}

#[test]
fn one_nna_cases() {
    let g = Tensor::matrix(2, 1, vec![0.0, 0.1]);
    let r = Tensor::matrix(2, 1, vec![10.0, 10.1]);
    assert_eq!(one_nna(&g, &r).unwrap(), 1.0);

    let a = gaussian(11, 300, 4, &[]);
    let b = gaussian(12, 300, 4, &[]);
    let v = one_nna(&a, &b).unwrap();
    assert!((0.4..=0.6).contains(&v), "{v}");

    // identical multisets: every neighbour is a zero-distance twin, and the
    // tie goes to the lower global index
    let v = one_nna(&a, &a).unwrap();
    assert!((0.0..=1.0).contains(&v));
    assert_eq!(v, 0.0);
    assert!(one_nna(&Tensor::matrix(0, 4, vec![]), &a).is_err());
}

fn static_motion(offset: [f64; 3]) -> Motion {
    let skeleton = Skeleton::new(vec!["root".to_string(), "tip".to_string()], &[-1, 0], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
    let frame = |v: [f64; 3]| Frame {
        rotations: vec![Quat::IDENTITY; 2],
        velocities: vec![v, [0.0; 3]],
    };
    Motion::new(skeleton, "x", 30.0, vec![frame([0.0; 3]), frame(offset)]).unwrap()
}

#[test]
fn mpjpe_cases() {
    let a = static_motion([0.0; 3]);
    assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
    let pa = vec![vec![[0.0, 0.0, 0.0]]];
    let pb = vec![vec![[3.0, 4.0, 0.0]]];
    assert_eq!(mpjpe_positions(&pa, &pb).unwrap(), 5.0);
    // the second frame's root (and its child) move by (3, 4, 0)
    let b = static_motion([3.0, 4.0, 0.0]);
    assert_eq!(mpjpe(&a, &b).unwrap(), 2.5);
    assert_eq!(mpjpe(&a, &b).unwrap(), mpjpe(&b, &a).unwrap());
    let quadruped = habitmotion_core::motion::synth_generate(
        &habitmotion_core::motion::category_params("cat").unwrap(),
        &Skeleton::quadruped(),
        2,
        30.0,
        0,
    )
    .unwrap();
    assert!(mpjpe(&a, &quadruped).is_err());
}

proptest! {
    #[test]
    fn mpjpe_triangle_inequality(
        a in proptest::array::uniform3(-3.0f64..3.0),
        b in proptest::array::uniform3(-3.0f64..3.0),
        c in proptest::array::uniform3(-3.0f64..3.0),
    ) {
        let (ma, mb, mc) = (static_motion(a), static_motion(b), static_motion(c));
        let ab = mpjpe(&ma, &mb).unwrap();
        let bc = mpjpe(&mb, &mc).unwrap();
        let ac = mpjpe(&ma, &mc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn fid_is_non_negative(seed in 0u64..500, shift in -3.0f64..3.0) {
        let a = gaussian(seed, 20, 3, &[]);
        let b = gaussian(seed + 1, 25, 3, &[shift]);
        prop_assert!(fid(&a, &b).unwrap() >= 0.0);
    }
}

#[test]
fn diversity_ignores_row_order_in_distribution() {
    // swapping two rows maps the seeded pair multiset onto itself up to the
    // relabeling, so the value is unchanged when the swapped rows are equal
    let x = Tensor::matrix(3, 1, vec![1.0, 1.0, 4.0]);
    let y = Tensor::matrix(3, 1, vec![1.0, 1.0, 4.0]);
    assert_eq!(diversity(&x, 300, 2).unwrap(), diversity(&y, 300, 2).unwrap());
}

fn small_corpus() -> Corpus {
    Corpus::synthesize(&CorpusSpec::three_category(5)).unwrap()
}

fn small_extractor_config() -> ExtractorConfig {
    ExtractorConfig {
        hidden: 32,
        layers: 2,
        heads: 4,
        ff_dim: 64,
        embed_dim: 256,
        max_iterations: 400,
        patience: 100,
        learning_rate: 1e-3,
        ..ExtractorConfig::desk(147, 3)
    }
}

#[test]
fn extractor_learns_three_categories() {
    let corpus = small_corpus();
    let (train, val) = (corpus.split(Split::Train), corpus.split(Split::Validation));
    let (model, log) = train_feature_extractor(&train, &val, &small_extractor_config()).unwrap();
    let acc = model.accuracy(&val).unwrap();
    assert!(acc > 0.9, "held-out accuracy {acc}, log {log:?}");
    assert_eq!(model.features(&val).unwrap().shape(), &[val.len(), 256]);

    let (again, _) = train_feature_extractor(&train, &val, &small_extractor_config()).unwrap();
    let bytes = model.to_checkpoint().unwrap().to_bytes();
    assert_eq!(bytes, again.to_checkpoint().unwrap().to_bytes());
    let back = FeatureExtractor::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.features(&val).unwrap(), model.features(&val).unwrap());
    assert_eq!(back.corpus_hash, model.corpus_hash);
    assert_eq!(back.labels, vec!["cat", "cow", "horse"]);

    // identity transfer onto the source category scores a set against itself
    let sources: Vec<(String, &Motion)> = corpus
        .clips()
        .iter()
        .filter(|c| c.split == Split::Validation)
        .map(|c| (c.id.clone(), &c.motion))
        .collect();
    let requests: Vec<TransferRequest> = sources
        .iter()
        .map(|(id, m)| TransferRequest {
            source: (*m).clone(),
            source_id: id.clone(),
            target: m.category().to_string(),
            mode: HabitMode::Deterministic,
            seed: 0,
        })
        .collect();
    let report = downstream_score(&requests, &val, &model, |r| Ok(r.source.clone())).unwrap();
    assert!(report.mean < 1e-8, "{report:?}");
}

#[test]
fn extractor_needs_two_categories() {
    let corpus = small_corpus();
    let horses: Vec<&Motion> = corpus.split(Split::Train).into_iter().filter(|m| m.category() == "horse").collect();
    assert!(train_feature_extractor(&horses, &[], &small_extractor_config()).is_err());
}

#[test]
fn targets_need_enough_samples() {
    let corpus = small_corpus();
    let pick = |label: &str, n: usize| -> Vec<&Motion> {
        corpus.clips().iter().map(|c| &c.motion).filter(|m| m.category() == label).take(n).collect()
    };
    let mut set = pick("horse", 6);
    set.extend(pick("cat", 5));
    set.extend(pick("cow", 3));
    assert_eq!(eligible_targets(set.iter().copied(), 5), vec!["cat", "horse"]);
    let sources: Vec<(String, &Motion)> = set.iter().enumerate().map(|(i, m)| (format!("s{i}"), *m)).collect();
    let requests = cross_category_requests(&sources, 5, HabitMode::Deterministic, 0);
    assert!(requests.iter().all(|r| r.target != "cow" && r.target != r.source.category()));
    assert_eq!(requests.len(), 6 + 5 + 3 * 2);
}
