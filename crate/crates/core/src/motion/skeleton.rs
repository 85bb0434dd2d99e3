use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::norm3;

/// Joint hierarchy in topological order. Joint 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<[f64; 3]>,
    children: Vec<Vec<usize>>,
}

impl Skeleton {
    /// `parents` uses `-1` for the root, as in the motion file format.
    pub fn new(names: Vec<String>, parents: &[i64], offsets: Vec<[f64; 3]>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::Skeleton("no joints".into()));
        }
        if parents.len() != n || offsets.len() != n {
            return Err(Error::Skeleton(format!(
                "{n} names, {} parents, {} offsets",
                parents.len(),
                offsets.len()
            )));
        }
        let mut resolved = Vec::with_capacity(n);
        for (i, &p) in parents.iter().enumerate() {
            match p {
                -1 if i == 0 => resolved.push(None),
                -1 => return Err(Error::Skeleton(format!("joint {i}: more than one root"))),
                _ if i == 0 => return Err(Error::Skeleton("joint 0 must be the root".into())),
                p if p < 0 || p as usize >= i => {
                    return Err(Error::Skeleton(format!("joint {i}: non-topological parent {p}")))
                }
                p => resolved.push(Some(p as usize)),
            }
        }
        for (i, o) in offsets.iter().enumerate() {
            if o.iter().any(|c| !c.is_finite()) {
                return Err(Error::Skeleton(format!("joint {i}: non-finite offset")));
            }
            if i > 0 && !(norm3(*o) > 0.0) {
                return Err(Error::Skeleton(format!("joint {i}: zero-length offset")));
            }
        }
        let mut children = vec![Vec::new(); n];
        for (i, p) in resolved.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        Ok(Self {
            names,
            parents: resolved,
            offsets,
            children,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    /// Parents in file convention, `-1` for the root.
    pub fn parent_indices(&self) -> Vec<i64> {
        self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect()
    }

    pub fn offsets(&self) -> &[[f64; 3]] {
        &self.offsets
    }

    pub fn children(&self, joint: usize) -> &[usize] {
        &self.children[joint]
    }

    pub fn bone_length(&self, joint: usize) -> f64 {
        norm3(self.offsets[joint])
    }

    /// Width of the per-frame feature vector: 4 rotation plus 3 velocity
    /// components per joint.
    pub fn feature_width(&self) -> usize {
        7 * self.len()
    }

    /// 21-joint quadruped template: spine chain to the head, front legs off
    /// the chest, hind legs off the pelvis, four joints per leg.
    /// Axes: x forward, y up, z to the animal's left.
    pub fn quadruped() -> Self {
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut offsets = Vec::new();
        let mut push = |name: &str, parent: i64, offset: [f64; 3]| {
            names.push(name.to_string());
            parents.push(parent);
            offsets.push(offset);
        };
        push("pelvis", -1, [0.0, 0.0, 0.0]);
        push("spine", 0, [0.32, 0.04, 0.0]);
        push("chest", 1, [0.30, 0.0, 0.0]);
        push("neck", 2, [0.16, 0.18, 0.0]);
        push("head", 3, [0.14, 0.16, 0.0]);
        let legs: [(&str, i64, [f64; 3], [f64; 3]); 4] = [
            ("front_left", 2, [0.02, -0.06, 0.12], [0.30, 0.26, 0.10]),
            ("front_right", 2, [0.02, -0.06, -0.12], [0.30, 0.26, 0.10]),
            ("hind_left", 0, [-0.04, -0.04, 0.12], [0.32, 0.30, 0.12]),
            ("hind_right", 0, [-0.04, -0.04, -0.12], [0.32, 0.30, 0.12]),
        ];
        for (i, (leg, attach, root_offset, segments)) in legs.into_iter().enumerate() {
            let base = 5 + 4 * i as i64;
            push(&format!("{leg}_upper"), attach, root_offset);
            push(&format!("{leg}_middle"), base, [0.0, -segments[0], 0.0]);
            push(&format!("{leg}_lower"), base + 1, [0.0, -segments[1], 0.0]);
            push(&format!("{leg}_foot"), base + 2, [0.0, -segments[2], 0.0]);
        }
        Skeleton::new(names, &parents, offsets).expect("built-in template is valid")
    }
}

/// Joint indices of the articulated joints in [`Skeleton::quadruped`].
pub mod quadruped {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const CHEST: usize = 2;
    pub const NECK: usize = 3;
    pub const HEAD: usize = 4;
    /// First joint of each leg: front left, front right, hind left, hind right.
    pub const LEG_BASES: [usize; 4] = [5, 9, 13, 17];
    pub const JOINTS: usize = 21;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_has_21_joints_and_147_features() {
        let s = Skeleton::quadruped();
        assert_eq!(s.len(), quadruped::JOINTS);
        assert_eq!(s.feature_width(), 147);
        assert_eq!(s.children(quadruped::PELVIS), &[1, 13, 17]);
        assert_eq!(s.children(quadruped::CHEST), &[3, 5, 9]);
        assert!(s.children(quadruped::HEAD).is_empty());
    }

    #[test]
    fn rejects_bad_hierarchies() {
        let names = |n: usize| (0..n).map(|i| format!("j{i}")).collect::<Vec<_>>();
        let off = |n: usize| vec![[0.0, 1.0, 0.0]; n];
        let err = Skeleton::new(names(5), &[-1, 0, 1, 5, 3], off(5)).unwrap_err();
        assert!(format!("{err}").contains("non-topological parent"));
        assert!(Skeleton::new(names(2), &[-1, -1], off(2)).is_err());
        assert!(Skeleton::new(names(2), &[-1, 0], vec![[0.0; 3]; 2]).is_err());
        assert!(Skeleton::new(names(2), &[-1], off(2)).is_err());
    }
}
