use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::quat::Quat;
use super::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::math::{add3, cross3, norm3, scale3, sub3};

/// Accepted deviation from unit norm in forward kinematics.
pub const FK_NORM_TOLERANCE: f64 = 1e-3;
/// Accepted relative bone-length deviation in inverse kinematics.
pub const IK_LENGTH_TOLERANCE: f64 = 1e-3;

/// Global joint positions from local rotations and the root position.
pub fn forward_kinematics(skeleton: &Skeleton, rotations: &[Quat], root_position: [f64; 3]) -> Result<Vec<[f64; 3]>> {
    let n = skeleton.len();
    if rotations.len() != n {
        return Err(Error::Invariant {
            frame: None,
            joint: None,
            detail: format!("{} rotations for {n} joints", rotations.len()),
        });
    }
    for (j, q) in rotations.iter().enumerate() {
        let norm = q.norm();
        if !(norm >= 1.0 - FK_NORM_TOLERANCE && norm <= 1.0 + FK_NORM_TOLERANCE) {
            return Err(Error::Invariant {
                frame: None,
                joint: Some(j),
                detail: format!("quaternion norm {norm} outside [1-1e-3, 1+1e-3]"),
            });
        }
    }
    let mut global = vec![Quat::IDENTITY; n];
    let mut positions = vec![[0.0; 3]; n];
    for j in 0..n {
        match skeleton.parent(j) {
            None => {
                global[j] = rotations[j];
                positions[j] = root_position;
            }
            Some(p) => {
                global[j] = global[p].mul(rotations[j]);
                positions[j] = add3(positions[p], global[p].rotate(skeleton.offsets()[j]));
            }
        }
    }
    Ok(positions)
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    scale3(v, 1.0 / norm3(v))
}

/// Rotation whose columns map the orthonormal frame built from `(a1, a2)` onto
/// the one built from `(b1, b2)`.
fn align_pairs(a1: [f64; 3], a2: [f64; 3], b1: [f64; 3], b2: [f64; 3]) -> Quat {
    let frame = |u: [f64; 3], w: [f64; 3]| {
        let e1 = unit(u);
        let e2 = unit(cross3(e1, w));
        [e1, e2, cross3(e1, e2)]
    };
    let fa = frame(a1, a2);
    let fb = frame(b1, b2);
    let mut m = [[0.0; 3]; 3];
    for k in 0..3 {
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell += fb[k][r] * fa[k][c];
            }
        }
    }
    Quat::from_matrix(m)
}

/// Local rotations reproducing global joint positions.
///
/// Joints with one child get the minimal rotation that turns the rest bone
/// direction onto the observed one (zero twist). Joints with several children
/// are fixed by their first two non-collinear child bones. Leaves keep the
/// identity.
pub fn inverse_kinematics(skeleton: &Skeleton, positions: &[[f64; 3]]) -> Result<Vec<Quat>> {
    let n = skeleton.len();
    if positions.len() != n {
        return Err(Error::Invariant {
            frame: None,
            joint: None,
            detail: format!("{} positions for {n} joints", positions.len()),
        });
    }
    for j in 1..n {
        let p = skeleton.parent(j).expect("non-root joint has a parent");
        let observed = norm3(sub3(positions[j], positions[p]));
        if !observed.is_finite() {
            return Err(Error::Invariant {
                frame: None,
                joint: Some(j),
                detail: "non-finite position".into(),
            });
        }
        if observed == 0.0 {
            return Err(Error::Invariant {
                frame: None,
                joint: Some(j),
                detail: "zero-length observed bone".into(),
            });
        }
        let rest = skeleton.bone_length(j);
        if (observed - rest).abs() > IK_LENGTH_TOLERANCE * rest {
            return Err(Error::Invariant {
                frame: None,
                joint: Some(j),
                detail: format!("bone length {observed} differs from skeleton length {rest}"),
            });
        }
    }

    let mut local = vec![Quat::IDENTITY; n];
    let mut global = vec![Quat::IDENTITY; n];
    for j in 0..n {
        let parent_global = skeleton.parent(j).map_or(Quat::IDENTITY, |p| global[p]);
        let to_parent = parent_global.conjugate();
        let children = skeleton.children(j);
        // (rest direction, observed direction in the parent frame) per child bone
        let dirs: Vec<([f64; 3], [f64; 3])> = children
            .iter()
            .map(|&c| {
                let rest = unit(skeleton.offsets()[c]);
                let seen = unit(to_parent.rotate(sub3(positions[c], positions[j])));
                (rest, seen)
            })
            .collect();
        let q = match dirs.first() {
            None => Quat::IDENTITY,
            Some(&(r1, u1)) => {
                let second = dirs[1..].iter().find(|(r, _)| norm3(cross3(r1, *r)) > 1e-6);
                match second {
                    Some(&(r2, u2)) => align_pairs(r1, r2, u1, u2),
                    None => Quat::between(r1, u1),
                }
            }
        };
        local[j] = q.canonical();
        global[j] = parent_global.mul(local[j]);
    }
    Ok(local)
}

/// Per-frame position differences; the first frame's velocity is zero.
pub fn compute_velocities(positions: &[Vec<[f64; 3]>]) -> Result<Vec<Vec<[f64; 3]>>> {
    if positions.len() < 2 {
        return Err(Error::invalid(format!(
            "velocities need at least 2 frames, got {}",
            positions.len()
        )));
    }
    let joints = positions[0].len();
    if positions.iter().any(|f| f.len() != joints) {
        return Err(Error::invalid("frames have differing joint counts"));
    }
    let mut out = Vec::with_capacity(positions.len());
    out.push(vec![[0.0; 3]; joints]);
    for w in positions.windows(2) {
        out.push(w[1].iter().zip(&w[0]).map(|(a, b)| sub3(*a, *b)).collect());
    }
    Ok(out)
}
