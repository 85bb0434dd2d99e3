use habitmotion_core::math::{add3, norm3, sub3};
use habitmotion_core::motion::{
    compute_velocities, features_to_motion, forward_kinematics, inverse_kinematics, motion_to_features, quadruped,
    synth, synth_generate, CategoryParams, Corpus, CorpusSpec, Frame, Motion, Quat, Skeleton, Split,
};
use habitmotion_core::nn::Tensor;
use habitmotion_core::rng::{self, SeedStream};
use habitmotion_core::Error;
use proptest::prelude::*;

fn chain(offsets: &[[f64; 3]]) -> Skeleton {
    let names = (0..offsets.len()).map(|i| format!("j{i}")).collect();
    let parents: Vec<i64> = (0..offsets.len() as i64).map(|i| i - 1).collect();
    Skeleton::new(names, &parents, offsets.to_vec()).unwrap()
}

fn random_unit_quat(rng: &mut rng::Rng) -> Quat {
    let q = Quat::new(
        rng::standard_normal(rng),
        rng::standard_normal(rng),
        rng::standard_normal(rng),
        rng::standard_normal(rng),
    );
    q.normalized().unwrap()
}

fn max_position_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| sub3(*p, *q))
        .fold(0.0, |m: f64, d| m.max(d.abs()))
}

#[test]
fn identity_pose_stacks_offsets() {
    let skel = Skeleton::quadruped();
    let x = forward_kinematics(&skel, &vec![Quat::IDENTITY; skel.len()], [0.0; 3]).unwrap();
    for j in 0..skel.len() {
        let mut expected = [0.0; 3];
        let mut k = j;
        while let Some(p) = skel.parent(k) {
            expected = add3(expected, skel.offsets()[k]);
            k = p;
        }
        assert!(max_position_error(&[x[j]], &[expected]) < 1e-15, "joint {j}");
    }
}

#[test]
fn quarter_turn_root_moves_child_onto_y() {
    let skel = chain(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let x = forward_kinematics(&skel, &[Quat::new(h, 0.0, 0.0, h), Quat::IDENTITY], [0.0; 3]).unwrap();
    assert!(max_position_error(&x, &[[0.0; 3], [0.0, 1.0, 0.0]]) < 1e-12);

    let q = inverse_kinematics(&skel, &x).unwrap();
    assert!((q[0].w - h).abs() < 1e-12 && (q[0].z - h).abs() < 1e-12);
    assert!(q[0].x.abs() < 1e-12 && q[0].y.abs() < 1e-12);
    assert_eq!(q[1], Quat::IDENTITY);
}

#[test]
fn identity_positions_give_identity_rotations() {
    let skel = Skeleton::quadruped();
    let x = forward_kinematics(&skel, &vec![Quat::IDENTITY; skel.len()], [0.3, 0.7, -0.2]).unwrap();
    for q in inverse_kinematics(&skel, &x).unwrap() {
        assert!((q.w - 1.0).abs() < 1e-12 && q.x.abs() < 1e-12 && q.y.abs() < 1e-12 && q.z.abs() < 1e-12);
    }
}

#[test]
fn ik_reproduces_positions_of_random_poses() {
    let skel = Skeleton::quadruped();
    let mut rng = SeedStream::new(11).rng("ik-roundtrip");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q: Vec<Quat> = (0..skel.len()).map(|_| random_unit_quat(&mut rng)).collect();
        let root = [rng::standard_normal(&mut rng), rng::standard_normal(&mut rng), rng::standard_normal(&mut rng)];
        let x = forward_kinematics(&skel, &q, root).unwrap();
        let solved = inverse_kinematics(&skel, &x).unwrap();
        for r in &solved {
            assert!((r.norm() - 1.0).abs() < 1e-12 && r.w >= 0.0);
        }
        let back = forward_kinematics(&skel, &solved, root).unwrap();
        worst = worst.max(max_position_error(&back, &x));
    }
    assert!(worst < 1e-6, "worst FK(IK(x)) deviation {worst}");
}

#[test]
fn single_child_joints_are_swing_only() {
    // Observed bone direction obtained by a pure twist about the bone axis
    // needs no rotation at all.
    let skel = chain(&[[0.0; 3], [0.0, -1.0, 0.0], [0.0, -1.0, 0.0]]);
    let twist = Quat::from_axis_angle([0.0, 1.0, 0.0], 0.7);
    let x = forward_kinematics(&skel, &[twist, Quat::IDENTITY, Quat::IDENTITY], [0.0; 3]).unwrap();
    let q = inverse_kinematics(&skel, &x).unwrap();
    assert!((q[0].w - 1.0).abs() < 1e-12);
}

#[test]
fn kinematics_reject_invalid_input() {
    let skel = chain(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    let err = forward_kinematics(&skel, &[Quat::new(0.9, 0.0, 0.0, 0.0), Quat::IDENTITY], [0.0; 3]).unwrap_err();
    assert!(matches!(err, Error::Invariant { joint: Some(0), .. }));
    let ok = forward_kinematics(&skel, &[Quat::new(1.0005, 0.0, 0.0, 0.0), Quat::IDENTITY], [0.0; 3]);
    assert!(ok.is_ok());

    let err = inverse_kinematics(&skel, &[[0.0; 3], [1.01, 0.0, 0.0]]).unwrap_err();
    assert!(format!("{err}").contains("bone length"));
    let err = inverse_kinematics(&skel, &[[0.0; 3], [0.0; 3]]).unwrap_err();
    assert!(format!("{err}").contains("zero-length"));
    assert!(inverse_kinematics(&skel, &[[0.0; 3], [1.0005, 0.0, 0.0]]).is_ok());
}

#[test]
fn velocities_of_static_and_linear_motion() {
    let still = vec![vec![[0.5, 1.0, -2.0]; 3]; 4];
    assert!(compute_velocities(&still).unwrap().iter().flatten().all(|v| *v == [0.0; 3]));

    let moving: Vec<Vec<[f64; 3]>> = (1..=5).map(|t| vec![[t as f64, 0.0, 0.0]]).collect();
    let v = compute_velocities(&moving).unwrap();
    assert_eq!(v[0][0], [0.0; 3]);
    assert!(v[1..].iter().all(|f| f[0] == [1.0, 0.0, 0.0]));

    assert!(compute_velocities(&moving[..1]).is_err());
}

proptest! {
    #[test]
    fn velocities_telescope(points in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..30)) {
        let x: Vec<Vec<[f64; 3]>> = points.iter().map(|p| vec![*p]).collect();
        let v = compute_velocities(&x).unwrap();
        let mut sum = [0.0; 3];
        for f in &v[1..] {
            sum = add3(sum, f[0]);
        }
        let span = sub3(*points.last().unwrap(), points[0]);
        // exact up to the rounding of the running sum
        for k in 0..3 {
            prop_assert!((sum[k] - span[k]).abs() <= 1e-12 * (1.0 + span[k].abs() + points.len() as f64 * 100.0));
        }
    }
}

fn sample_motion() -> Motion {
    let params = synth::category_params("horse").unwrap();
    synth_generate(&params, &Skeleton::quadruped(), 12, 30.0, 3).unwrap()
}

#[test]
fn feature_round_trip() {
    let m = sample_motion();
    let f = motion_to_features(&m);
    assert_eq!(f.shape(), &[12, 147]);
    let (back, report) = features_to_motion(&f, m.skeleton(), m.category(), m.fps()).unwrap();
    assert_eq!(report.zero_quaternions, 0);
    assert_eq!(back.len(), m.len());
    for (a, b) in back.frames().iter().zip(m.frames()) {
        assert_eq!(a.velocities, b.velocities);
        for (p, q) in a.rotations.iter().zip(&b.rotations) {
            let d = p.to_array().iter().zip(q.to_array()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(d < 1e-15);
        }
    }
}

#[test]
fn decoded_features_are_repaired() {
    let skel = chain(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    let rows = vec![
        2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 9.0, 9.0, 9.0, 1.0, 1.0, 1.0, //
        -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0,
    ];
    let f = Tensor::new(vec![2, 14], rows).unwrap();
    let (m, report) = features_to_motion(&f, &skel, "toy", 30.0).unwrap();
    assert_eq!(m.frames()[0].rotations[0], Quat::IDENTITY);
    assert_eq!(m.frames()[1].rotations[0], Quat::IDENTITY);
    assert_eq!(report.zero_quaternions, 2);
    assert_eq!(m.frames()[0].velocities[0], [0.0; 3]);
    assert_eq!(m.frames()[1].velocities[0], [0.5, 0.0, 0.0]);

    let bad = Tensor::new(vec![2, 13], vec![0.0; 26]).unwrap();
    assert!(matches!(features_to_motion(&bad, &skel, "toy", 30.0), Err(Error::Shape { .. })));
}

#[test]
fn motion_invariants_are_enforced_with_location() {
    let skel = chain(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    let frame = |q: Quat, v: [f64; 3]| Frame {
        rotations: vec![Quat::IDENTITY, q],
        velocities: vec![v, [0.0; 3]],
    };
    let ok = vec![frame(Quat::IDENTITY, [0.0; 3]), frame(Quat::IDENTITY, [1.0, 0.0, 0.0])];
    assert!(Motion::new(skel.clone(), "a", 30.0, ok).is_ok());

    let short = vec![frame(Quat::IDENTITY, [0.0; 3])];
    assert!(Motion::new(skel.clone(), "a", 30.0, short).is_err());

    let not_unit = vec![frame(Quat::IDENTITY, [0.0; 3]), frame(Quat::new(0.9, 0.0, 0.0, 0.0), [0.0; 3])];
    let err = Motion::new(skel.clone(), "a", 30.0, not_unit).unwrap_err();
    assert!(matches!(err, Error::Invariant { frame: Some(1), joint: Some(1), .. }), "{err}");

    let flipped = vec![frame(Quat::IDENTITY, [0.0; 3]), frame(Quat::new(-1.0, 0.0, 0.0, 0.0), [0.0; 3])];
    assert!(Motion::new(skel.clone(), "a", 30.0, flipped).is_err());

    let moving_start = vec![frame(Quat::IDENTITY, [0.1, 0.0, 0.0]), frame(Quat::IDENTITY, [0.0; 3])];
    let err = Motion::new(skel.clone(), "a", 30.0, moving_start).unwrap_err();
    assert!(matches!(err, Error::Invariant { frame: Some(0), joint: Some(0), .. }));

    let ok = vec![frame(Quat::IDENTITY, [0.0; 3]), frame(Quat::IDENTITY, [0.0; 3])];
    assert!(Motion::new(skel, "a", 0.0, ok).is_err());
}

#[test]
fn zero_amplitude_gait_is_static() {
    let mut params = synth::category_params("cat").unwrap();
    params.amplitude = [0.0; synth::SLOTS];
    let m = synth_generate(&params, &Skeleton::quadruped(), 20, 30.0, 9).unwrap();
    assert!(m.frames().iter().flat_map(|f| &f.velocities).all(|v| *v == [0.0; 3]));
    assert!(m.frames().windows(2).all(|w| w[0].rotations == w[1].rotations));
}

#[test]
fn resting_offsets_shift_mean_joint_angle() {
    let base = synth::category_params("horse").unwrap();
    let mut shifted = base.clone();
    shifted.rest_offset[3] += 0.3;
    let skel = Skeleton::quadruped();
    let joint = quadruped::LEG_BASES[2];
    let mean_angle = |p: &CategoryParams| {
        let m = synth_generate(p, &skel, 300, 30.0, 4).unwrap();
        m.frames().iter().map(|f| f.rotations[joint].angle_about_z()).sum::<f64>() / m.len() as f64
    };
    let diff = mean_angle(&shifted) - mean_angle(&base);
    assert!((diff - 0.3).abs() < 1e-9, "mean angle difference {diff}");
}

#[test]
fn synthesis_is_deterministic_and_valid() {
    let params = synth::category_params("cow").unwrap();
    let skel = Skeleton::quadruped();
    let a = synth_generate(&params, &skel, 40, 30.0, 77).unwrap();
    let b = synth_generate(&params, &skel, 40, 30.0, 77).unwrap();
    let c = synth_generate(&params, &skel, 40, 30.0, 78).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);

    // stored rotations and velocities agree with the kinematic chain
    let x = a.positions().unwrap();
    let root = a.root_trajectory([0.0; 3]);
    for t in 1..a.len() {
        for j in 0..skel.len() {
            let v = sub3(x[t][j], x[t - 1][j]);
            assert!(norm3(sub3(v, a.frames()[t].velocities[j])) < 1e-12);
        }
        assert_eq!(x[t][0], root[t]);
    }
    let solved = inverse_kinematics(&skel, &x[5]).unwrap();
    let back = forward_kinematics(&skel, &solved, x[5][0]).unwrap();
    assert!(max_position_error(&back, &x[5]) < 1e-9);
}

#[test]
fn every_shipped_category_synthesizes() {
    let labels = synth::category_labels();
    assert_eq!(labels.len(), 21);
    let skel = Skeleton::quadruped();
    for label in labels {
        let params = synth::category_params(label).unwrap();
        params.validate().unwrap();
        synth_generate(&params, &skel, 8, 30.0, 1).unwrap();
    }
    assert!(matches!(synth::category_params("unicorn"), Err(Error::UnknownCategory(_))));
    let mut bad = synth::category_params("dog").unwrap();
    bad.frequency = 0.0;
    assert!(synth_generate(&bad, &skel, 8, 30.0, 1).is_err());
    bad.frequency = 1.0;
    bad.amplitude[2] = -0.1;
    assert!(synth_generate(&bad, &skel, 8, 30.0, 1).is_err());
}

#[test]
fn three_category_corpus_layout() {
    let corpus = Corpus::synthesize(&CorpusSpec::three_category(5)).unwrap();
    assert_eq!(corpus.len(), 60);
    assert_eq!(corpus.categories(), vec!["cat", "cow", "horse"]);
    let train = corpus.by_category(Split::Train);
    let val = corpus.by_category(Split::Validation);
    for c in corpus.categories() {
        assert_eq!(train[&c].len(), 15);
        assert_eq!(val[&c].len(), 5);
    }
    assert_eq!(corpus, Corpus::synthesize(&CorpusSpec::three_category(5)).unwrap());
}

#[test]
fn synthetic_embeddings_place_okapi_next_to_horse() {
    let labels = synth::category_labels();
    let okapi = synth::synthetic_embedding("okapi", 64).unwrap();
    let nearest = labels
        .iter()
        .filter(|l| **l != "okapi")
        .map(|l| (habitmotion_core::math::euclidean(&okapi, &synth::synthetic_embedding(l, 64).unwrap()), *l))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    assert_eq!(nearest.1, "horse");
}
