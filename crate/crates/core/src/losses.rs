//! Training objectives: translation L2 and spatial-temporal cycle
//! consistency, joint-position L2, rotation + forward-kinematics loss,
//! contact cross-entropy, foot skating and jerk, plus the weighted total.
//!
//! Every loss is recorded on the tape, so gradients flow into whatever
//! produced its inputs (network outputs, FK joints). Functions accept either
//! per-frame vectors or whole-window `[T, d]` stacks; values are plain sums,
//! and the trainer divides by the window length so magnitudes stay
//! window-size invariant.

use alloc::vec::Vec;

use crate::autodiff::{Tape, TensorError, Var};
use crate::body_model::{fk, fk_tape, BodyShape, BodyTemplate, NUM_JOINTS};
use crate::so3::AxisAngle;

/// Weights of the combined objective, plus the balance factor inside the
/// rotation + FK term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub phi: f64,
    pub t: f64,
    pub dt: f64,
    pub contact: f64,
    pub footskate: f64,
    pub jerk: f64,
    pub fk_balance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            phi: 20.0,
            t: 5.0,
            dt: 5.0,
            contact: 0.001,
            footskate: 100.0,
            jerk: 50.0,
            fk_balance: 2.5,
        }
    }
}

/// Per-frame ground truth bundle consumed by the trainer.
#[derive(Debug, Clone)]
pub struct FrameSupervision {
    /// Canonical-frame pose target (root entry is the pelvis-relative
    /// correction).
    pub phi: [f64; 72],
    pub t: [f64; 3],
    /// Exactly `t[k] - t[k-1]` in synthesized data (zero at the first frame).
    pub dt: [f64; 3],
    /// Canonical FK joint positions for `phi`, flattened `[72]`.
    pub joints: [f64; 72],
    pub contacts: [f64; 2],
}

const BCE_CLAMP: f64 = 1e-7;

/// Squared L2 distance to a constant target (sum over all components).
pub fn l2_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var, TensorError> {
    if tape.value(pred).len() != target.len() {
        return Err(TensorError::Shape("l2 target length mismatch"));
    }
    let shape = tape.shape(pred).to_vec();
    let tgt = tape.constant(shape, target.to_vec());
    let diff = tape.sub(pred, tgt)?;
    Ok(tape.sum_squares(diff))
}

/// Spatial-temporal cycle consistency:
/// `|dt - (t - t_prev)|^2 + |dt - dt_gt|^2`.
pub fn cycle_loss(
    tape: &mut Tape,
    dt: Var,
    t: Var,
    t_prev: Var,
    dt_gt: &[f64],
) -> Result<Var, TensorError> {
    let step = tape.sub(t, t_prev)?;
    let spatial = tape.sub(dt, step)?;
    let spatial = tape.sum_squares(spatial);
    let temporal = l2_loss(tape, dt, dt_gt)?;
    tape.add(spatial, temporal)
}

/// Rotation + FK loss given already-computed FK joints:
/// `|phi - phi_gt|^2 + lambda |J - J_gt|^2`.
pub fn rotation_fk_loss(
    tape: &mut Tape,
    phi: Var,
    phi_gt: &[f64],
    fk_joints: Var,
    fk_joints_gt: &[f64],
    lambda: f64,
) -> Result<Var, TensorError> {
    let rot = l2_loss(tape, phi, phi_gt)?;
    let fk_term = l2_loss(tape, fk_joints, fk_joints_gt)?;
    let fk_scaled = tape.scale(fk_term, lambda);
    tape.add(rot, fk_scaled)
}

/// Convenience form that runs FK on both poses itself (the ground-truth side
/// through the plain path, since it carries no gradient).
pub fn rotation_fk_loss_full(
    tape: &mut Tape,
    tpl: &BodyTemplate,
    phi: Var,
    beta: Var,
    phi_gt: &[f64; 72],
    beta_plain: &BodyShape,
    lambda: f64,
) -> Result<Var, TensorError> {
    let fkv = fk_tape(tape, tpl, phi, beta)?;
    let mut gt_pose = [AxisAngle::default(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        gt_pose[j] = AxisAngle([phi_gt[3 * j], phi_gt[3 * j + 1], phi_gt[3 * j + 2]]);
    }
    let gt = fk(tpl, &gt_pose, beta_plain);
    let gt_flat: Vec<f64> = gt.joints.iter().flatten().copied().collect();
    rotation_fk_loss(tape, phi, phi_gt, fkv.joints, &gt_flat, lambda)
}

/// Binary cross-entropy over the two foot-contact probabilities
/// (post-sigmoid, clamped away from the log singularities).
pub fn contact_bce(tape: &mut Tape, q: Var, q_gt: &[f64; 2]) -> Result<Var, TensorError> {
    let qc = tape.clamp(q, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let shape = tape.shape(qc).to_vec();
    let ones = tape.constant(shape.clone(), alloc::vec![1.0; 2]);
    let gt = tape.constant(shape, q_gt.to_vec());
    let log_q = tape.log(qc)?;
    let pos = tape.mul(gt, log_q)?;
    let one_minus_q = tape.sub(ones, qc)?;
    let one_minus_gt = tape.sub(ones, gt)?;
    let log_nq = tape.log(one_minus_q)?;
    let neg_term = tape.mul(one_minus_gt, log_nq)?;
    let total = tape.add(pos, neg_term)?;
    let s = tape.sum_all(total);
    Ok(tape.scale(s, -1.0))
}

/// Foot-skating loss: a foot in contact must reverse the root's world
/// motion in the root frame:
/// `sum_j q_j |f_j(t) - f_j(t-1) + dt|^2` over the two feet.
pub fn footskate_loss(
    tape: &mut Tape,
    feet: [Var; 2],
    feet_prev: [Var; 2],
    dt: Var,
    q_gt: &[f64; 2],
) -> Result<Var, TensorError> {
    let mut total = tape.constant_scalar(0.0);
    for j in 0..2 {
        if q_gt[j] == 0.0 {
            continue;
        }
        let motion = tape.sub(feet[j], feet_prev[j])?;
        let resid = tape.add(motion, dt)?;
        let sq = tape.sum_squares(resid);
        let weighted = tape.scale(sq, q_gt[j]);
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

/// Jerk loss: squared third-order backward difference of joint positions,
/// `|j0 - 3 j1 + 3 j2 - j3|^2` summed over all joints.
pub fn jerk_loss(tape: &mut Tape, j: [Var; 4]) -> Result<Var, TensorError> {
    let m3_j1 = tape.scale(j[1], -3.0);
    let p3_j2 = tape.scale(j[2], 3.0);
    let s1 = tape.add(j[0], m3_j1)?;
    let s2 = tape.add(s1, p3_j2)?;
    let neg_j3 = tape.neg(j[3]);
    let third = tape.add(s2, neg_j3)?;
    Ok(tape.sum_squares(third))
}

/// The six per-window loss terms, pre-weighting.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub phi: Var,
    pub t: Var,
    pub dt: Var,
    pub contact: Var,
    pub footskate: Var,
    pub jerk: Var,
}

/// Weighted combination of all terms.
pub fn total_loss(tape: &mut Tape, terms: &LossTerms, w: &LossWeights) -> Result<Var, TensorError> {
    let mut acc = tape.scale(terms.phi, w.phi);
    for (v, weight) in [
        (terms.t, w.t),
        (terms.dt, w.dt),
        (terms.contact, w.contact),
        (terms.footskate, w.footskate),
        (terms.jerk, w.jerk),
    ] {
        let scaled = tape.scale(v, weight);
        acc = tape.add(acc, scaled)?;
    }
    Ok(acc)
}
