use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::kinematics::{compute_velocities, forward_kinematics};
use super::quat::Quat;
use super::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::math::add3;
use crate::nn::Tensor;

/// Tolerance on the unit norm of stored quaternions.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub rotations: Vec<Quat>,
    pub velocities: Vec<[f64; 3]>,
}

/// A validated motion clip: per-frame local rotations and joint velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    skeleton: Skeleton,
    category: String,
    fps: f64,
    frames: Vec<Frame>,
}

fn violation(frame: usize, joint: Option<usize>, detail: String) -> Error {
    Error::Invariant {
        frame: Some(frame),
        joint,
        detail,
    }
}

impl Motion {
    pub fn new(skeleton: Skeleton, category: impl Into<String>, fps: f64, frames: Vec<Frame>) -> Result<Self> {
        let category = category.into();
        if category.is_empty() {
            return Err(Error::invalid("empty category label"));
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if frames.len() < 2 {
            return Err(Error::Invariant {
                frame: None,
                joint: None,
                detail: format!("motion needs at least 2 frames, got {}", frames.len()),
            });
        }
        let n = skeleton.len();
        for (t, f) in frames.iter().enumerate() {
            if f.rotations.len() != n || f.velocities.len() != n {
                return Err(violation(
                    t,
                    None,
                    format!(
                        "{} rotations and {} velocities for {n} joints",
                        f.rotations.len(),
                        f.velocities.len()
                    ),
                ));
            }
            for (j, q) in f.rotations.iter().enumerate() {
                let norm = q.norm();
                if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
                    return Err(violation(t, Some(j), format!("quaternion norm {norm} is not 1")));
                }
                if q.w < 0.0 {
                    return Err(violation(t, Some(j), format!("quaternion w = {} is negative", q.w)));
                }
            }
            for (j, v) in f.velocities.iter().enumerate() {
                if v.iter().any(|c| !c.is_finite()) {
                    return Err(violation(t, Some(j), "non-finite velocity".into()));
                }
                if t == 0 && *v != [0.0; 3] {
                    return Err(violation(t, Some(j), "first-frame velocity must be zero".into()));
                }
            }
        }
        Ok(Self {
            skeleton,
            category,
            fps,
            frames,
        })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = category.into();
        self
    }

    /// Root trajectory: the root starts at `start` and moves by its velocity.
    pub fn root_trajectory(&self, start: [f64; 3]) -> Vec<[f64; 3]> {
        let mut pos = start;
        self.frames
            .iter()
            .map(|f| {
                pos = add3(pos, f.velocities[0]);
                pos
            })
            .collect()
    }

    /// Global joint positions per frame, root starting at the origin.
    pub fn positions(&self) -> Result<Vec<Vec<[f64; 3]>>> {
        self.root_trajectory([0.0; 3])
            .into_iter()
            .zip(&self.frames)
            .enumerate()
            .map(|(t, (root, f))| {
                forward_kinematics(&self.skeleton, &f.rotations, root).map_err(|e| match e {
                    Error::Invariant { joint, detail, .. } => violation(t, joint, detail),
                    other => other,
                })
            })
            .collect()
    }

    /// Builds a motion from rotations and global positions, with velocities
    /// taken as position differences.
    pub fn from_rotations_and_positions(
        skeleton: Skeleton,
        category: impl Into<String>,
        fps: f64,
        rotations: Vec<Vec<Quat>>,
        positions: &[Vec<[f64; 3]>],
    ) -> Result<Self> {
        if rotations.len() != positions.len() {
            return Err(Error::invalid("rotation and position frame counts differ"));
        }
        let velocities = compute_velocities(positions)?;
        let frames = rotations
            .into_iter()
            .zip(velocities)
            .map(|(rotations, velocities)| Frame { rotations, velocities })
            .collect();
        Motion::new(skeleton, category, fps, frames)
    }

    /// `[T, 7N]` features: rotations (w, x, y, z per joint) then velocities.
    pub fn to_features(&self) -> Tensor {
        let n = self.skeleton.len();
        let mut data = Vec::with_capacity(self.frames.len() * 7 * n);
        for f in &self.frames {
            for q in &f.rotations {
                data.extend_from_slice(&q.to_array());
            }
            for v in &f.velocities {
                data.extend_from_slice(v);
            }
        }
        Tensor::new(alloc::vec![self.frames.len(), 7 * n], data).expect("feature shape matches data")
    }
}

/// Count of repaired entries when turning decoded features into a motion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeReport {
    pub zero_quaternions: usize,
}

pub fn motion_to_features(motion: &Motion) -> Tensor {
    motion.to_features()
}

/// Inverse of [`motion_to_features`] for `[T, 7N]` features, renormalizing
/// rotations into the `w >= 0` hemisphere and zeroing the first velocity.
/// Zero quaternions become the identity and are counted in the report.
pub fn features_to_motion(
    features: &Tensor,
    skeleton: &Skeleton,
    category: &str,
    fps: f64,
) -> Result<(Motion, DecodeReport)> {
    let n = skeleton.len();
    let width = 7 * n;
    if features.shape().len() != 2 || features.shape()[1] != width {
        return Err(Error::shape(
            "features_to_motion",
            format!("expected [T, {width}], got {:?}", features.shape()),
        ));
    }
    if let Some(bad) = features.data().iter().position(|v| !v.is_finite()) {
        return Err(violation(bad / width, Some((bad % width) / 7), "non-finite feature".into()));
    }
    let mut report = DecodeReport::default();
    let frames = features
        .data()
        .chunks(width)
        .enumerate()
        .map(|(t, row)| {
            let rotations = row[..4 * n]
                .chunks(4)
                .map(|c| {
                    Quat::new(c[0], c[1], c[2], c[3]).normalized().unwrap_or_else(|| {
                        report.zero_quaternions += 1;
                        Quat::IDENTITY
                    })
                })
                .collect();
            let velocities = row[4 * n..]
                .chunks(3)
                .map(|c| if t == 0 { [0.0; 3] } else { [c[0], c[1], c[2]] })
                .collect();
            Frame { rotations, velocities }
        })
        .collect();
    if report.zero_quaternions > 0 {
        log::warn!("{} zero quaternions replaced by identity", report.zero_quaternions);
    }
    Ok((Motion::new(skeleton.clone(), category, fps, frames)?, report))
}
