//! Parametric quadruped gaits standing in for captured animal motion.
//!
//! Each category is a row of gait parameters: frequency, limb phase pattern,
//! joint swing amplitudes and a resting posture. The resting posture carries
//! most of the between-category difference; frequencies overlap on purpose.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::clip::Motion;
use super::kinematics::forward_kinematics;
use super::quat::Quat;
use super::skeleton::{quadruped, Skeleton};
use crate::error::{Error, Result};
use crate::math::{self, PI, TAU};
use crate::rng::{self, SeedStream};

/// Articulations driven by the generator, in parameter-array order.
pub const SLOTS: usize = 8;
pub const SLOT_NAMES: [&str; SLOTS] = [
    "front_upper",
    "front_middle",
    "front_lower",
    "hind_upper",
    "hind_middle",
    "hind_lower",
    "spine",
    "neck",
];

/// Extra phase lag of the middle and lower leg joints behind the upper one.
const JOINT_LAG: [f64; 3] = [0.0, -1.1, -0.5];
/// Approximate leg length, used to turn swing amplitude into stride length.
const LEG_LENGTH: f64 = 0.66;
const STANDING_HEIGHT: f64 = 0.68;

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryParams {
    pub label: String,
    /// Gait cycles per second.
    pub frequency: f64,
    /// Front left, front right, hind left, hind right.
    pub limb_phase: [f64; 4],
    pub amplitude: [f64; SLOTS],
    pub rest_offset: [f64; SLOTS],
    pub stride_scale: f64,
}

impl CategoryParams {
    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::invalid("category label is empty"));
        }
        if !(self.frequency > 0.0) || !self.frequency.is_finite() {
            return Err(Error::invalid(format!("{}: frequency must be > 0", self.label)));
        }
        if self.amplitude.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::invalid(format!("{}: amplitudes must be >= 0", self.label)));
        }
        let finite = self.limb_phase.iter().chain(&self.rest_offset).all(|v| v.is_finite());
        if !finite || !(self.stride_scale >= 0.0) {
            return Err(Error::invalid(format!("{}: non-finite gait parameter", self.label)));
        }
        Ok(())
    }
}

/// Walk: lateral sequence. Trot: diagonal pairs. Bound: front pair, then hind pair.
const WALK: [f64; 4] = [0.0, PI, 1.5 * PI, 0.5 * PI];
const TROT: [f64; 4] = [0.0, PI, PI, 0.0];
const PACE: [f64; 4] = [0.0, PI, 0.0, PI];
const BOUND: [f64; 4] = [0.0, 0.15, PI, PI + 0.15];

/// Descriptive traits behind the synthetic text embeddings:
/// size, leg length, speed, agility, predator, hooves, neck length, bulk.
pub type Traits = [f64; 8];

struct Row {
    label: &'static str,
    frequency: f64,
    phase: [f64; 4],
    amplitude: [f64; SLOTS],
    rest: [f64; SLOTS],
    stride: f64,
    traits: Traits,
}

// Posture families. Leg angles rotate about the lateral axis; positive swings
// the distal end forward.
const UPRIGHT: [f64; SLOTS] = [0.05, -0.12, 0.14, -0.06, 0.22, -0.26, 0.0, 0.40];
const COW_HOCKED: [f64; SLOTS] = [-0.10, 0.20, -0.12, 0.16, -0.30, 0.22, 0.02, -0.18];
const CROUCHED: [f64; SLOTS] = [0.32, -0.62, 0.40, 0.48, -0.82, 0.44, -0.06, -0.04];
const SPRUNG: [f64; SLOTS] = [0.16, -0.34, 0.22, 0.26, -0.48, 0.28, -0.02, 0.16];
const PILLAR: [f64; SLOTS] = [0.0, 0.03, -0.02, 0.0, 0.04, -0.03, 0.03, 0.02];
const PLANTIGRADE: [f64; SLOTS] = [0.12, -0.10, 0.34, 0.22, -0.20, 0.40, 0.08, -0.10];

const LONG_SWING: [f64; SLOTS] = [0.34, 0.30, 0.24, 0.34, 0.30, 0.24, 0.03, 0.06];
const SHORT_SWING: [f64; SLOTS] = [0.24, 0.20, 0.16, 0.24, 0.20, 0.16, 0.02, 0.04];
const SUPPLE_SWING: [f64; SLOTS] = [0.38, 0.40, 0.30, 0.38, 0.40, 0.30, 0.06, 0.05];
const STIFF_SWING: [f64; SLOTS] = [0.18, 0.10, 0.08, 0.18, 0.10, 0.08, 0.02, 0.03];

fn tweak(base: [f64; SLOTS], delta: [f64; SLOTS]) -> [f64; SLOTS] {
    core::array::from_fn(|i| base[i] + delta[i])
}

fn table() -> Vec<Row> {
    let row = |label, frequency, phase, amplitude, rest, stride, traits| Row {
        label,
        frequency,
        phase,
        amplitude,
        rest,
        stride,
        traits,
    };
    alloc::vec![
        row("horse", 1.7, WALK, LONG_SWING, UPRIGHT, 1.0, [0.7, 0.8, 0.8, 0.5, 0.0, 1.0, 0.7, 0.6]),
        row("okapi", 1.6, WALK, LONG_SWING, tweak(UPRIGHT, [0.0, -0.02, 0.0, 0.0, 0.03, 0.0, 0.02, 0.05]), 0.95, [0.65, 0.8, 0.7, 0.45, 0.0, 1.0, 0.75, 0.55]),
        row("zebra", 1.8, WALK, LONG_SWING, tweak(UPRIGHT, [0.02, 0.0, 0.0, 0.0, 0.0, 0.02, 0.0, -0.05]), 1.0, [0.6, 0.75, 0.85, 0.55, 0.0, 1.0, 0.6, 0.5]),
        row("donkey", 1.9, WALK, SHORT_SWING, tweak(UPRIGHT, [0.0, 0.04, 0.0, 0.0, -0.04, 0.0, 0.0, -0.12]), 0.85, [0.45, 0.6, 0.5, 0.4, 0.0, 1.0, 0.5, 0.45]),
        row("deer", 1.8, BOUND, SUPPLE_SWING, tweak(SPRUNG, [-0.08, 0.10, -0.05, -0.05, 0.10, 0.0, 0.02, 0.22]), 1.1, [0.45, 0.85, 0.9, 0.9, 0.0, 1.0, 0.6, 0.3]),
        row("goat", 1.9, TROT, SHORT_SWING, tweak(SPRUNG, [-0.06, 0.12, -0.08, -0.10, 0.16, -0.06, 0.0, 0.12]), 0.8, [0.3, 0.5, 0.6, 0.95, 0.0, 1.0, 0.4, 0.3]),
        row("sheep", 1.8, TROT, SHORT_SWING, tweak(COW_HOCKED, [0.06, -0.08, 0.04, -0.04, 0.10, -0.08, -0.02, 0.10]), 0.8, [0.3, 0.45, 0.45, 0.5, 0.0, 1.0, 0.3, 0.45]),
        row("camel", 1.4, PACE, LONG_SWING, tweak(UPRIGHT, [0.0, 0.06, 0.0, 0.0, -0.06, 0.04, 0.04, 0.60]), 1.05, [0.85, 0.95, 0.55, 0.3, 0.0, 0.8, 0.95, 0.7]),
        row("cow", 1.5, WALK, SHORT_SWING, COW_HOCKED, 0.8, [0.8, 0.55, 0.35, 0.2, 0.0, 1.0, 0.45, 0.9]),
        row("buffalo", 1.5, WALK, SHORT_SWING, tweak(COW_HOCKED, [0.02, 0.0, 0.02, 0.02, -0.04, 0.0, 0.04, -0.08]), 0.85, [0.85, 0.55, 0.45, 0.3, 0.0, 1.0, 0.4, 0.95]),
        row("pig", 2.0, TROT, STIFF_SWING, tweak(COW_HOCKED, [0.10, -0.10, 0.06, -0.06, 0.12, -0.10, -0.04, -0.10]), 0.7, [0.4, 0.25, 0.4, 0.35, 0.2, 1.0, 0.15, 0.8]),
        row("hippo", 1.3, WALK, STIFF_SWING, tweak(PILLAR, [0.04, -0.02, 0.04, 0.06, -0.04, 0.04, -0.03, -0.08]), 0.7, [0.95, 0.3, 0.35, 0.2, 0.3, 0.6, 0.2, 1.0]),
        row("rhino", 1.4, WALK, STIFF_SWING, tweak(PILLAR, [0.02, 0.0, 0.0, 0.04, 0.0, 0.0, 0.0, -0.12]), 0.8, [0.95, 0.45, 0.55, 0.25, 0.1, 0.7, 0.25, 1.0]),
        row("elephant", 1.2, WALK, STIFF_SWING, PILLAR, 0.9, [1.0, 0.7, 0.4, 0.2, 0.0, 0.6, 0.3, 1.0]),
        row("bear", 1.5, PACE, SHORT_SWING, PLANTIGRADE, 0.85, [0.8, 0.45, 0.5, 0.5, 0.8, 0.0, 0.35, 0.85]),
        row("dog", 2.1, TROT, SUPPLE_SWING, SPRUNG, 1.0, [0.35, 0.55, 0.75, 0.8, 0.6, 0.0, 0.4, 0.4]),
        row("wolf", 2.0, TROT, SUPPLE_SWING, tweak(SPRUNG, [0.02, -0.04, 0.02, 0.04, -0.06, 0.02, 0.0, -0.12]), 1.05, [0.45, 0.65, 0.8, 0.8, 0.9, 0.0, 0.4, 0.45]),
        row("fox", 2.2, TROT, SUPPLE_SWING, tweak(SPRUNG, [0.08, -0.14, 0.08, 0.10, -0.16, 0.06, -0.02, -0.08]), 0.95, [0.25, 0.45, 0.75, 0.9, 0.8, 0.0, 0.35, 0.25]),
        row("cat", 1.9, WALK, SUPPLE_SWING, CROUCHED, 0.9, [0.15, 0.4, 0.6, 1.0, 0.8, 0.0, 0.3, 0.2]),
        row("leopard", 1.8, WALK, SUPPLE_SWING, tweak(CROUCHED, [-0.06, 0.10, -0.06, -0.08, 0.12, -0.06, 0.02, 0.0]), 1.0, [0.55, 0.6, 0.95, 0.95, 1.0, 0.0, 0.4, 0.5]),
        row("tiger", 1.6, WALK, SUPPLE_SWING, tweak(CROUCHED, [-0.10, 0.16, -0.10, -0.12, 0.20, -0.08, 0.03, -0.02]), 1.0, [0.8, 0.6, 0.8, 0.8, 1.0, 0.0, 0.4, 0.75]),
    ]
}

/// Labels of the shipped category table, in table order.
pub fn category_labels() -> Vec<&'static str> {
    table().into_iter().map(|r| r.label).collect()
}

/// Gait parameters of a shipped category.
pub fn category_params(label: &str) -> Result<CategoryParams> {
    table()
        .into_iter()
        .find(|r| r.label == label)
        .map(|r| CategoryParams {
            label: r.label.to_string(),
            frequency: r.frequency,
            limb_phase: r.phase,
            amplitude: r.amplitude,
            rest_offset: r.rest,
            stride_scale: r.stride,
        })
        .ok_or_else(|| Error::UnknownCategory(label.to_string()))
}

/// Trait vector of a shipped category.
pub fn category_traits(label: &str) -> Result<Traits> {
    table()
        .into_iter()
        .find(|r| r.label == label)
        .map(|r| r.traits)
        .ok_or_else(|| Error::UnknownCategory(label.to_string()))
}

/// Per-sequence variation drawn from the seed.
struct Variation {
    phase: f64,
    frequency: f64,
    amplitude: f64,
    heading: f64,
    turn: f64,
    posture: [f64; SLOTS],
}

impl Variation {
    fn draw(seed: u64) -> Self {
        let mut rng = SeedStream::new(seed).rng("synth.variation");
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng::uniform(&mut rng);
        let phase = u(0.0, TAU);
        let frequency = u(0.9, 1.1);
        let amplitude = u(0.85, 1.15);
        let heading = u(-0.4, 0.4);
        let turn = u(-0.3, 0.3);
        let posture = core::array::from_fn(|_| u(-0.03, 0.03));
        Self {
            phase,
            frequency,
            amplitude,
            heading,
            turn,
            posture,
        }
    }
}

/// Local joint angle (radians) of `slot` at frame `t`.
fn slot_angle(p: &CategoryParams, var: &Variation, slot: usize, phase: f64, t: f64, fps: f64) -> f64 {
    let omega = TAU * p.frequency * var.frequency / fps;
    p.rest_offset[slot] + var.posture[slot] + p.amplitude[slot] * var.amplitude * math::sin(omega * t + phase + var.phase)
}

/// Generates `frames` frames of the category's gait. A pure function of its
/// arguments; the skeleton must be the 21-joint quadruped template.
pub fn synth_generate(params: &CategoryParams, skeleton: &Skeleton, frames: usize, fps: f64, seed: u64) -> Result<Motion> {
    params.validate()?;
    if frames < 2 {
        return Err(Error::invalid(format!("need at least 2 frames, got {frames}")));
    }
    if skeleton.len() != quadruped::JOINTS || skeleton.parent_indices() != Skeleton::quadruped().parent_indices() {
        return Err(Error::Skeleton("synthetic gaits need the 21-joint quadruped template".into()));
    }
    let var = Variation::draw(seed);
    let lateral = [0.0, 0.0, 1.0];
    let up = [0.0, 1.0, 0.0];

    let swing = 0.5 * (params.amplitude[0] + params.amplitude[3]) * var.amplitude;
    let stride = 2.0 * LEG_LENGTH * math::sin(swing) * params.stride_scale;
    let speed = stride * params.frequency * var.frequency / fps;
    let omega = TAU * params.frequency * var.frequency / fps;

    let mut rotations = Vec::with_capacity(frames);
    let mut positions = Vec::with_capacity(frames);
    let mut root = [0.0, STANDING_HEIGHT, 0.0];
    let mut heading = var.heading;
    for frame in 0..frames {
        let t = frame as f64;
        if frame > 0 {
            heading += var.turn * speed;
            root[0] += speed * math::cos(heading);
            root[2] -= speed * math::sin(heading);
        }
        let bob = 0.04 * swing * math::sin(2.0 * omega * t + var.phase);
        let mut q = alloc::vec![Quat::IDENTITY; quadruped::JOINTS];
        q[quadruped::PELVIS] = Quat::from_axis_angle(up, heading);
        q[quadruped::SPINE] = Quat::from_axis_angle(lateral, slot_angle(params, &var, 6, 0.0, t, fps));
        q[quadruped::NECK] = Quat::from_axis_angle(lateral, slot_angle(params, &var, 7, 0.5 * PI, t, fps));
        for (limb, &base) in quadruped::LEG_BASES.iter().enumerate() {
            let first_slot = if limb < 2 { 0 } else { 3 };
            for (k, lag) in JOINT_LAG.iter().enumerate() {
                let angle = slot_angle(params, &var, first_slot + k, params.limb_phase[limb] + lag, t, fps);
                q[base + k] = Quat::from_axis_angle(lateral, angle).canonical();
            }
        }
        for r in q.iter_mut() {
            *r = r.canonical();
        }
        let pos = forward_kinematics(skeleton, &q, [root[0], root[1] + bob, root[2]])?;
        rotations.push(q);
        positions.push(pos);
    }
    Motion::from_rotations_and_positions(skeleton.clone(), params.label.clone(), fps, rotations, &positions)
}

/// Synthetic raw text embedding of a shipped category: a fixed random
/// linear image of its trait vector plus a small label-seeded perturbation.
pub fn synthetic_embedding(label: &str, dim: usize) -> Result<Vec<f64>> {
    let traits = category_traits(label)?;
    let mut basis = SeedStream::new(0x5eed_e4be).rng("synth.embedding.basis");
    let matrix: Vec<f64> = (0..dim * traits.len()).map(|_| rng::standard_normal(&mut basis)).collect();
    let mut jitter = SeedStream::new(0x5eed_e4be).rng(&format!("synth.embedding.{label}"));
    Ok((0..dim)
        .map(|i| {
            let row = &matrix[i * traits.len()..(i + 1) * traits.len()];
            let v: f64 = row.iter().zip(&traits).map(|(a, b)| a * b).sum();
            v / math::sqrt(traits.len() as f64) + 0.02 * rng::standard_normal(&mut jitter)
        })
        .collect())
}
