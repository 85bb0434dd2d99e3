//! Motion JSON: skeleton, category, fps and per-frame rotations/velocities.

use std::path::Path;

use habitmotion_core::motion::{Frame, Motion, Quat, Skeleton};
use serde::{Deserialize, Serialize};

use super::{read_file, write_file, FORMAT_VERSION};
use crate::error::{AppError, CoreContext, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    names: Vec<String>,
    parents: Vec<i64>,
    offsets: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    q: Vec<[f64; 4]>,
    v: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionDoc {
    format_version: u32,
    skeleton: SkeletonDoc,
    category: String,
    fps: f64,
    frames: Vec<FrameDoc>,
}

pub fn motion_to_json(motion: &Motion) -> String {
    let sk = motion.skeleton();
    let doc = MotionDoc {
        format_version: FORMAT_VERSION,
        skeleton: SkeletonDoc {
            names: sk.names().to_vec(),
            parents: sk.parent_indices(),
            offsets: sk.offsets().to_vec(),
        },
        category: motion.category().to_string(),
        fps: motion.fps(),
        frames: motion
            .frames()
            .iter()
            .map(|f| FrameDoc {
                q: f.rotations.iter().map(|q| q.to_array()).collect(),
                v: f.velocities.clone(),
            })
            .collect(),
    };
    // serde_json prints f64 as the shortest decimal that parses back exactly.
    serde_json::to_string(&doc).expect("motion document serializes")
}

/// Parses and validates a motion document; `origin` names it in errors.
pub fn motion_from_json(text: &str, origin: &Path) -> Result<Motion> {
    let doc: MotionDoc = serde_json::from_str(text).map_err(|e| AppError::schema(origin, e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(AppError::schema(
            origin,
            format!("unsupported format_version {}", doc.format_version),
        ));
    }
    let origin = origin.display();
    let skeleton = Skeleton::new(doc.skeleton.names, &doc.skeleton.parents, doc.skeleton.offsets)
        .context(format!("{origin}"))?;
    let frames = doc
        .frames
        .into_iter()
        .map(|f| Frame {
            rotations: f.q.into_iter().map(Quat::from_array).collect(),
            velocities: f.v,
        })
        .collect();
    Motion::new(skeleton, doc.category, doc.fps, frames).context(format!("{origin}"))
}

pub fn save_motion(path: &Path, motion: &Motion) -> Result<()> {
    write_file(path, motion_to_json(motion).as_bytes())
}

pub fn load_motion(path: &Path) -> Result<Motion> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| AppError::schema(path, "not UTF-8"))?;
    motion_from_json(&text, path)
}
