use alloc::format;

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

/// Threshold of the smooth-L1 reconstruction penalty.
pub const SMOOTH_L1_THRESHOLD: f64 = 1.0;

/// Scalar graph nodes of the VQ objective.
#[derive(Clone, Copy, Debug)]
pub struct VqLoss {
    pub total: Var,
    pub reconstruction: Var,
    pub embedding: Var,
    pub commitment: Var,
}

/// VQ objective over `[.., 7N]` features and `[.., d_c]` latents.
///
/// * reconstruction: smooth-L1 on rotation channels plus `alpha` times
///   smooth-L1 on velocity channels;
/// * embedding: mean squared gap between the frozen latents and the codes;
/// * commitment: `beta` times the mean squared gap between the latents and
///   the frozen codes.
#[allow(clippy::too_many_arguments)]
pub fn vq_loss(
    g: &mut Graph,
    target: Var,
    reconstruction: Var,
    latents: Var,
    codes: Var,
    joints: usize,
    alpha: f64,
    beta: f64,
) -> Result<VqLoss> {
    if !(alpha >= 0.0) || !(beta >= 0.0) {
        return Err(Error::invalid(format!("alpha and beta must be >= 0, got {alpha}, {beta}")));
    }
    if g.shape(target) != g.shape(reconstruction) {
        return Err(Error::shape(
            "vq_loss",
            format!("target {:?} vs reconstruction {:?}", g.shape(target), g.shape(reconstruction)),
        ));
    }
    if g.value(target).last_dim() != 7 * joints {
        return Err(Error::shape("vq_loss", format!("feature width is not 7 x {joints}")));
    }
    if g.shape(latents) != g.shape(codes) {
        return Err(Error::shape(
            "vq_loss",
            format!("latents {:?} vs codes {:?}", g.shape(latents), g.shape(codes)),
        ));
    }
    let rot_t = g.slice_last(target, 0, 4 * joints)?;
    let rot_r = g.slice_last(reconstruction, 0, 4 * joints)?;
    let vel_t = g.slice_last(target, 4 * joints, 3 * joints)?;
    let vel_r = g.slice_last(reconstruction, 4 * joints, 3 * joints)?;
    let rot = g.smooth_l1(rot_r, rot_t, SMOOTH_L1_THRESHOLD)?;
    let vel = g.smooth_l1(vel_r, vel_t, SMOOTH_L1_THRESHOLD)?;
    let vel = g.scale(vel, alpha);
    let rec = g.add(rot, vel)?;

    let frozen_latents = g.stop_grad(latents);
    let gap = g.sub(frozen_latents, codes)?;
    let sq = g.square(gap);
    let embedding = g.mean(sq);

    let frozen_codes = g.stop_grad(codes);
    let gap = g.sub(latents, frozen_codes)?;
    let sq = g.square(gap);
    let commit = g.mean(sq);
    let commitment = g.scale(commit, beta);

    let total = g.add(rec, embedding)?;
    let total = g.add(total, commitment)?;
    Ok(VqLoss {
        total,
        reconstruction: rec,
        embedding,
        commitment,
    })
}
