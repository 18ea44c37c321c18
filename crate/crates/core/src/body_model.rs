//! A deterministic 24-joint parametric body standing in for a full
//! statistical model: forward kinematics `f(phi, beta)`, rigidly-skinned
//! surrogate vertices, a regressor to the 17-point COCO keypoint layout,
//! IMU mount frames and the foot joints used by contact reasoning.
//!
//! The template is fully determined by a 64-bit seed plus hand-set base
//! offsets; `BodyTemplate::standard()` reproduces the shipped template
//! bit-exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, TensorError, Var};
use crate::fmath;
use crate::rng::Rng;
use crate::so3::{exp_map, exp_map_tape, RotMat};
pub use crate::so3::AxisAngle;

pub const NUM_JOINTS: usize = 24;
pub const NUM_SHAPE: usize = 10;
pub const ANCHORS_PER_JOINT: usize = 16;
pub const NUM_VERTICES: usize = NUM_JOINTS * ANCHORS_PER_JOINT;
pub const NUM_KEYPOINTS: usize = 17;
pub const NUM_MOUNTS: usize = 6;

/// Seed of the shipped template.
pub const TEMPLATE_SEED: u64 = 0x5EED_B0D1;

// Joint indices (left = +x, y up, z forward).
pub const PELVIS: usize = 0;
pub const L_HIP: usize = 1;
pub const R_HIP: usize = 2;
pub const L_KNEE: usize = 4;
pub const R_KNEE: usize = 5;
pub const L_ANKLE: usize = 7;
pub const R_ANKLE: usize = 8;
pub const L_FOOT: usize = 10;
pub const R_FOOT: usize = 11;
pub const HEAD: usize = 15;
pub const L_SHOULDER: usize = 16;
pub const R_SHOULDER: usize = 17;
pub const L_ELBOW: usize = 18;
pub const R_ELBOW: usize = 19;
pub const L_WRIST: usize = 20;
pub const R_WRIST: usize = 21;

// COCO keypoint indices.
pub const KP_NOSE: usize = 0;
pub const KP_L_SHOULDER: usize = 5;
pub const KP_R_SHOULDER: usize = 6;
pub const KP_L_HIP: usize = 11;
pub const KP_R_HIP: usize = 12;
pub const KP_L_ANKLE: usize = 15;
pub const KP_R_ANKLE: usize = 16;

/// The 9 keypoints feeding global-translation estimation: nose, eyes, ears,
/// shoulders, hips.
pub const TRANS_KEYPOINTS: [usize; 9] = [0, 1, 2, 3, 4, 5, 6, 11, 12];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BodyError {
    #[error("template invariant violated: {0}")]
    BadTemplate(&'static str),
}

/// Shape coefficients, dimensionless. Component 0 scales the torso/head
/// core, 1 scales the limbs (together they span uniform stature), 2..9 are
/// small seeded per-region perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyShape(pub [f64; NUM_SHAPE]);

impl BodyShape {
    pub fn norm(&self) -> f64 {
        fmath::sqrt(self.0.iter().map(|b| b * b).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSet {
    pub joints: [[f64; 3]; NUM_JOINTS],
    pub globals: [RotMat; NUM_JOINTS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    pub parents: [usize; NUM_JOINTS],
    pub rest_offsets: [[f64; 3]; NUM_JOINTS],
    /// `[joint][axis][shape]`; every column is parallel to the joint's rest
    /// offset, so bone lengths stay affine in each shape coefficient.
    pub shape_dirs: [[[f64; NUM_SHAPE]; 3]; NUM_JOINTS],
    pub vertex_anchors: [[[f64; 3]; ANCHORS_PER_JOINT]; NUM_JOINTS],
    pub coco_map: [(usize, [f64; 3]); NUM_KEYPOINTS],
    pub foot_joints: [usize; 2],
    pub mount_joints: [usize; NUM_MOUNTS],
    /// Per-joint bone scale weights recovered from `shape_dirs`; anchors of a
    /// joint scale by the same factor as its bone (the root, with a zero
    /// bone, does not scale).
    anchor_w: [[f64; NUM_SHAPE]; NUM_JOINTS],
}

const REST_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],     // 0 pelvis
    [0.09, -0.07, 0.0],  // 1 l_hip
    [-0.09, -0.07, 0.0], // 2 r_hip
    [0.0, 0.11, 0.0],    // 3 spine1
    [0.0, -0.40, 0.0],   // 4 l_knee
    [0.0, -0.40, 0.0],   // 5 r_knee
    [0.0, 0.12, 0.0],    // 6 spine2
    [0.0, -0.42, 0.0],   // 7 l_ankle
    [0.0, -0.42, 0.0],   // 8 r_ankle
    [0.0, 0.12, 0.0],    // 9 spine3
    [0.0, -0.025, 0.12], // 10 l_foot (toe)
    [0.0, -0.025, 0.12], // 11 r_foot (toe)
    [0.0, 0.14, 0.0],    // 12 neck
    [0.06, 0.10, 0.0],   // 13 l_collar
    [-0.06, 0.10, 0.0],  // 14 r_collar
    [0.0, 0.10, 0.0],    // 15 head
    [0.10, 0.02, 0.0],   // 16 l_shoulder
    [-0.10, 0.02, 0.0],  // 17 r_shoulder
    [0.26, 0.0, 0.0],    // 18 l_elbow
    [-0.26, 0.0, 0.0],   // 19 r_elbow
    [0.25, 0.0, 0.0],    // 20 l_wrist
    [-0.25, 0.0, 0.0],   // 21 r_wrist
    [0.08, 0.0, 0.0],    // 22 l_hand
    [-0.08, 0.0, 0.0],   // 23 r_hand
];

const PARENTS: [usize; NUM_JOINTS] = [
    0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

const LIMB_BONES: [usize; 14] = [4, 5, 7, 8, 10, 11, 16, 17, 18, 19, 20, 21, 22, 23];

/// Region assignment for the seeded shape coefficients 2..9. Each bone
/// belongs to at most one region (plus the global stature/limb axes), so
/// shape recovery stays well conditioned.
const REGIONS: [&[usize]; 8] = [
    &[L_KNEE, L_ANKLE, L_FOOT],          // 2 left leg
    &[R_KNEE, R_ANKLE, R_FOOT],          // 3 right leg
    &[L_ELBOW, L_WRIST, 22],             // 4 left arm
    &[R_ELBOW, R_WRIST, 23],             // 5 right arm
    &[3, 6, 9],                          // 6 spine
    &[12, HEAD],                         // 7 neck + head
    &[13, 14, L_SHOULDER, R_SHOULDER],   // 8 shoulder girdle
    &[L_HIP, R_HIP],                     // 9 pelvis width
];

// Per-unit shape effects mirror statistical body models: one unit moves
// bones by about 1.5 percent (centimeters at body scale). The core and
// limb axes touch disjoint bone sets and regions stay far smaller, so no
// combination of axes stacks into a large unrecoverable length change and
// the shape prior in fitting displaces bone lengths by at most ~2 percent
// even when it shrinks coefficients outright.
const TORSO_W: f64 = 0.015;
const LIMB_W: f64 = 0.015;
/// Per-region perturbations are relative (0.05 percent of the bone per
/// unit of beta), far below the 2 cm-per-unit displacement cap; kept tiny
/// so the shape prior cannot displace recovery through weakly observable
/// axes.
const REGION_REL: f64 = 0.0005;

/// Local radius of the surrogate surface around each joint's bone.
const ANCHOR_RADIUS: [f64; NUM_JOINTS] = [
    0.11, 0.08, 0.08, 0.10, 0.06, 0.06, 0.11, 0.05, 0.05, 0.10, 0.04, 0.04, 0.05, 0.06, 0.06,
    0.09, 0.05, 0.05, 0.04, 0.04, 0.035, 0.035, 0.03, 0.03,
];

impl BodyTemplate {
    /// The template shipped with the pipeline.
    pub fn standard() -> Self {
        Self::generate(TEMPLATE_SEED)
    }

    /// Fully deterministic template construction from a seed.
    pub fn generate(seed: u64) -> Self {
        let mut rng = Rng::new(seed);

        // bone scale weights
        let mut w = [[0.0; NUM_SHAPE]; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            if LIMB_BONES.contains(&j) {
                w[j][1] = LIMB_W;
            } else {
                w[j][0] = TORSO_W;
            }
        }
        for (r, joints) in REGIONS.iter().enumerate() {
            for &j in *joints {
                let mag = REGION_REL * rng.range(0.6, 1.0);
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                w[j][2 + r] = sign * mag;
            }
        }

        let mut shape_dirs = [[[0.0; NUM_SHAPE]; 3]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            for axis in 0..3 {
                for k in 0..NUM_SHAPE {
                    shape_dirs[j][axis][k] = REST_OFFSETS[j][axis] * w[j][k];
                }
            }
        }

        // surface anchors: points along the bone with radial jitter
        let mut anchors = [[[0.0; 3]; ANCHORS_PER_JOINT]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let bone = REST_OFFSETS[j];
            let len = norm(&bone);
            let radius = ANCHOR_RADIUS[j];
            for a in 0..ANCHORS_PER_JOINT {
                let t = rng.uniform();
                let base = if len > 1e-9 {
                    // along the bone from the parent end (-offset) to the joint
                    [-bone[0] * t, -bone[1] * t, -bone[2] * t]
                } else {
                    [0.0, 0.0, 0.0]
                };
                anchors[j][a] = [
                    base[0] + rng.normal_scaled(radius),
                    base[1] + rng.normal_scaled(radius),
                    base[2] + rng.normal_scaled(radius),
                ];
            }
        }

        let coco_map: [(usize, [f64; 3]); NUM_KEYPOINTS] = [
            (HEAD, [0.0, 0.05, 0.10]),    // nose
            (HEAD, [0.035, 0.07, 0.09]),  // l eye
            (HEAD, [-0.035, 0.07, 0.09]), // r eye
            (HEAD, [0.07, 0.06, 0.01]),   // l ear
            (HEAD, [-0.07, 0.06, 0.01]),  // r ear
            (L_SHOULDER, [0.0; 3]),
            (R_SHOULDER, [0.0; 3]),
            (L_ELBOW, [0.0; 3]),
            (R_ELBOW, [0.0; 3]),
            (L_WRIST, [0.0; 3]),
            (R_WRIST, [0.0; 3]),
            (L_HIP, [0.0; 3]),
            (R_HIP, [0.0; 3]),
            (L_KNEE, [0.0; 3]),
            (R_KNEE, [0.0; 3]),
            (L_ANKLE, [0.0; 3]),
            (R_ANKLE, [0.0; 3]),
        ];

        Self::from_parts(
            PARENTS,
            REST_OFFSETS,
            shape_dirs,
            anchors,
            coco_map,
            [L_ANKLE, R_ANKLE],
            [PELVIS, HEAD, L_WRIST, R_WRIST, L_ANKLE, R_ANKLE],
        )
        .expect("generated template satisfies its own invariants")
    }

    /// Assemble a template from its serialized fields, validating the tree
    /// invariants and deriving the per-joint anchor scale weights.
    pub fn from_parts(
        parents: [usize; NUM_JOINTS],
        rest_offsets: [[f64; 3]; NUM_JOINTS],
        shape_dirs: [[[f64; NUM_SHAPE]; 3]; NUM_JOINTS],
        vertex_anchors: [[[f64; 3]; ANCHORS_PER_JOINT]; NUM_JOINTS],
        coco_map: [(usize, [f64; 3]); NUM_KEYPOINTS],
        foot_joints: [usize; 2],
        mount_joints: [usize; NUM_MOUNTS],
    ) -> Result<Self, BodyError> {
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p >= j {
                return Err(BodyError::BadTemplate("parents[j] must be < j"));
            }
        }
        if rest_offsets[0] != [0.0; 3] {
            return Err(BodyError::BadTemplate("root offset must be zero"));
        }
        if coco_map.iter().any(|(j, _)| *j >= NUM_JOINTS)
            || foot_joints.iter().any(|&j| j >= NUM_JOINTS)
            || mount_joints.iter().any(|&j| j >= NUM_JOINTS)
        {
            return Err(BodyError::BadTemplate("joint index out of range"));
        }
        let mut anchor_w = [[0.0; NUM_SHAPE]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let rest = rest_offsets[j];
            let len2 = rest[0] * rest[0] + rest[1] * rest[1] + rest[2] * rest[2];
            if len2 > 1e-18 {
                for k in 0..NUM_SHAPE {
                    let dot = shape_dirs[j][0][k] * rest[0]
                        + shape_dirs[j][1][k] * rest[1]
                        + shape_dirs[j][2][k] * rest[2];
                    anchor_w[j][k] = dot / len2;
                }
            }
        }
        Ok(BodyTemplate {
            parents,
            rest_offsets,
            shape_dirs,
            vertex_anchors,
            coco_map,
            foot_joints,
            mount_joints,
            anchor_w,
        })
    }

    /// Bone offset for joint `j` under shape `beta`.
    pub fn bone_offset(&self, j: usize, beta: &BodyShape) -> [f64; 3] {
        let mut o = self.rest_offsets[j];
        for axis in 0..3 {
            for k in 0..NUM_SHAPE {
                o[axis] += self.shape_dirs[j][axis][k] * beta.0[k];
            }
        }
        o
    }

    /// Scalar factor by which joint `j`'s bone (and its anchors) scales.
    pub fn bone_scale(&self, j: usize, beta: &BodyShape) -> f64 {
        let mut s = 1.0;
        for k in 0..NUM_SHAPE {
            s += self.anchor_w[j][k] * beta.0[k];
        }
        s
    }

    /// FNV-1a over the canonical field serialization; stored in sequence
    /// file headers so data is never evaluated against a mismatched body.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        fn eat(h: &mut u64, bytes: &[u8]) {
            for &b in bytes {
                *h ^= b as u64;
                *h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        for &p in &self.parents {
            eat(&mut h, &(p as u64).to_le_bytes());
        }
        for o in &self.rest_offsets {
            o.iter().for_each(|x| eat(&mut h, &x.to_bits().to_le_bytes()));
        }
        for j in &self.shape_dirs {
            for axis in j {
                axis.iter().for_each(|x| eat(&mut h, &x.to_bits().to_le_bytes()));
            }
        }
        for j in &self.vertex_anchors {
            for a in j {
                a.iter().for_each(|x| eat(&mut h, &x.to_bits().to_le_bytes()));
            }
        }
        for (j, o) in &self.coco_map {
            eat(&mut h, &(*j as u64).to_le_bytes());
            o.iter().for_each(|x| eat(&mut h, &x.to_bits().to_le_bytes()));
        }
        for &j in self.foot_joints.iter().chain(&self.mount_joints) {
            eat(&mut h, &(j as u64).to_le_bytes());
        }
        h
    }

    /// Root height above the ground plane when standing at rest (the lowest
    /// joint touches y = 0).
    pub fn standing_root_height(&self, beta: &BodyShape) -> f64 {
        let js = fk(self, &[AxisAngle::default(); NUM_JOINTS], beta);
        let min_y = js.joints.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        -min_y
    }
}

fn norm(v: &[f64; 3]) -> f64 {
    fmath::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

/// Forward kinematics. The root joint sits at the origin; its rotation is
/// `exp_map(phi[0])`. Joint `j` is placed at
/// `parent position + parent global rotation * bone_offset(j, beta)`.
pub fn fk(tpl: &BodyTemplate, phi: &[AxisAngle; NUM_JOINTS], beta: &BodyShape) -> JointSet {
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    let mut globals = [crate::so3::IDENTITY; NUM_JOINTS];
    globals[0] = exp_map(&phi[0]);
    for j in 1..NUM_JOINTS {
        let p = tpl.parents[j];
        let local = exp_map(&phi[j]);
        globals[j] = globals[p].matmul(&local);
        let o = tpl.bone_offset(j, beta);
        let rotated = globals[p].apply(&o);
        for axis in 0..3 {
            joints[j][axis] = joints[p][axis] + rotated[axis];
        }
    }
    JointSet { joints, globals }
}

/// Surrogate surface vertices: each anchor rides rigidly on its joint's
/// global transform, scaled by the joint's bone factor.
pub fn vertices(tpl: &BodyTemplate, phi: &[AxisAngle; NUM_JOINTS], beta: &BodyShape) -> Vec<[f64; 3]> {
    let js = fk(tpl, phi, beta);
    vertices_from_joints(tpl, &js, beta)
}

/// Vertices for an already-computed joint set.
pub fn vertices_from_joints(tpl: &BodyTemplate, js: &JointSet, beta: &BodyShape) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(NUM_VERTICES);
    for j in 0..NUM_JOINTS {
        let s = tpl.bone_scale(j, beta);
        for a in 0..ANCHORS_PER_JOINT {
            let local = tpl.vertex_anchors[j][a];
            let scaled = [local[0] * s, local[1] * s, local[2] * s];
            let r = js.globals[j].apply(&scaled);
            out.push([
                js.joints[j][0] + r[0],
                js.joints[j][1] + r[1],
                js.joints[j][2] + r[2],
            ]);
        }
    }
    out
}

/// Regress the 17 COCO-layout keypoints from a posed joint set.
pub fn regress_coco(tpl: &BodyTemplate, js: &JointSet) -> [[f64; 3]; NUM_KEYPOINTS] {
    let mut out = [[0.0; 3]; NUM_KEYPOINTS];
    for (k, (j, off)) in tpl.coco_map.iter().enumerate() {
        let r = js.globals[*j].apply(off);
        for axis in 0..3 {
            out[k][axis] = js.joints[*j][axis] + r[axis];
        }
    }
    out
}

/// Global rotation and position of the six IMU mount joints, in order
/// (pelvis, head, left forearm, right forearm, left lower leg, right lower
/// leg). Mounting rotation is the identity, so the frame equals the joint's.
pub fn mount_frames(tpl: &BodyTemplate, js: &JointSet) -> [(RotMat, [f64; 3]); NUM_MOUNTS] {
    let mut out = [(crate::so3::IDENTITY, [0.0; 3]); NUM_MOUNTS];
    for (i, &j) in tpl.mount_joints.iter().enumerate() {
        out[i] = (js.globals[j], js.joints[j]);
    }
    out
}

// ---- differentiable path ------------------------------------------------------

/// Tape-recorded forward kinematics outputs.
pub struct FkVars {
    /// Per-joint position, each `[3]`.
    pub pos: [Var; NUM_JOINTS],
    /// Per-joint global rotation, each `[3,3]`.
    pub rot: [Var; NUM_JOINTS],
    /// All positions stacked `[24,3]`.
    pub joints: Var,
}

/// Forward kinematics recorded on the tape; differentiable in `phi` (`[72]`)
/// and `beta` (`[10]`).
pub fn fk_tape(
    tape: &mut Tape,
    tpl: &BodyTemplate,
    phi: Var,
    beta: Var,
) -> Result<FkVars, TensorError> {
    let zero3 = tape.constant(vec![3], vec![0.0; 3]);
    let mut pos = [zero3; NUM_JOINTS];
    let mut rot = [zero3; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let phi_j = tape.slice(phi, 3 * j, vec![3])?;
        let local = exp_map_tape(tape, phi_j)?;
        if j == 0 {
            rot[0] = local;
            continue;
        }
        let p = tpl.parents[j];
        rot[j] = tape.matmul(rot[p], local)?;
        let dirs: Vec<f64> = tpl.shape_dirs[j].iter().flatten().copied().collect();
        let dirs = tape.constant(vec![3, NUM_SHAPE], dirs);
        let delta = tape.matmul(dirs, beta)?;
        let rest = tape.constant(vec![3], tpl.rest_offsets[j].to_vec());
        let offset = tape.add(rest, delta)?;
        let rotated = tape.matmul(rot[p], offset)?;
        pos[j] = tape.add(pos[p], rotated)?;
    }
    let joints = tape.concat(&pos, vec![NUM_JOINTS, 3])?;
    Ok(FkVars { pos, rot, joints })
}

/// Tape-recorded surrogate vertices `[384,3]`.
pub fn vertices_tape(
    tape: &mut Tape,
    tpl: &BodyTemplate,
    fkv: &FkVars,
    beta: Var,
) -> Result<Var, TensorError> {
    let mut parts = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let anchors: Vec<f64> = tpl.vertex_anchors[j].iter().flatten().copied().collect();
        let anchors = tape.constant(vec![ANCHORS_PER_JOINT, 3], anchors);
        let w = tape.constant(vec![NUM_SHAPE], tpl.anchor_w[j].to_vec());
        let prod = tape.mul(w, beta)?;
        let dot = tape.sum_all(prod);
        let s = tape.add_const(dot, 1.0);
        let scaled = tape.mul(anchors, s)?;
        let rt = tape.transpose(fkv.rot[j])?;
        let rotated = tape.matmul(scaled, rt)?;
        let placed = tape.add(rotated, fkv.pos[j])?;
        parts.push(placed);
    }
    tape.concat(&parts, vec![NUM_VERTICES, 3])
}

/// Tape-recorded COCO keypoint regression `[17,3]`.
pub fn regress_coco_tape(
    tape: &mut Tape,
    tpl: &BodyTemplate,
    fkv: &FkVars,
) -> Result<Var, TensorError> {
    let mut parts = Vec::with_capacity(NUM_KEYPOINTS);
    for (j, off) in tpl.coco_map.iter() {
        if *off == [0.0; 3] {
            parts.push(fkv.pos[*j]);
        } else {
            let offv = tape.constant(vec![3], off.to_vec());
            let rotated = tape.matmul(fkv.rot[*j], offv)?;
            let placed = tape.add(fkv.pos[*j], rotated)?;
            parts.push(placed);
        }
    }
    tape.concat(&parts, vec![NUM_KEYPOINTS, 3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{max_rel_err, numeric_gradient, DEFAULT_EPS};
    use crate::rng::Rng;

    fn zero_pose() -> [AxisAngle; NUM_JOINTS] {
        [AxisAngle::default(); NUM_JOINTS]
    }

    fn random_shape(rng: &mut Rng, scale: f64) -> BodyShape {
        let mut b = [0.0; NUM_SHAPE];
        for v in &mut b {
            *v = rng.range(-scale, scale);
        }
        BodyShape(b)
    }

    #[test]
    fn template_generation_is_deterministic() {
        let a = BodyTemplate::generate(TEMPLATE_SEED);
        let b = BodyTemplate::generate(TEMPLATE_SEED);
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = BodyTemplate::generate(123);
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn zero_shape_reproduces_rest_offsets() {
        let tpl = BodyTemplate::standard();
        let beta = BodyShape::default();
        for j in 0..NUM_JOINTS {
            assert_eq!(tpl.bone_offset(j, &beta), tpl.rest_offsets[j]);
        }
    }

    #[test]
    fn fk_rest_pose_accumulates_offsets() {
        let tpl = BodyTemplate::standard();
        let js = fk(&tpl, &zero_pose(), &BodyShape::default());
        assert_eq!(js.joints[0], [0.0, 0.0, 0.0]);
        // walk the chain by hand for the left leg
        let hip = tpl.rest_offsets[L_HIP];
        let knee = tpl.rest_offsets[L_KNEE];
        let expect_knee = [hip[0] + knee[0], hip[1] + knee[1], hip[2] + knee[2]];
        assert_eq!(js.joints[L_KNEE], expect_knee);
        for g in &js.globals {
            assert_eq!(*g, crate::so3::IDENTITY);
        }
    }

    #[test]
    fn root_rotation_is_rigid() {
        let tpl = BodyTemplate::standard();
        let beta = BodyShape::default();
        let rest = fk(&tpl, &zero_pose(), &beta);
        let mut phi = zero_pose();
        phi[0] = AxisAngle([0.4, -0.2, 0.9]);
        let r = exp_map(&phi[0]);
        let posed = fk(&tpl, &phi, &beta);
        for j in 0..NUM_JOINTS {
            let expect = r.apply(&rest.joints[j]);
            for axis in 0..3 {
                assert!((posed.joints[j][axis] - expect[axis]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_link_chain_matches_hand_composition() {
        let tpl = BodyTemplate::standard();
        let beta = BodyShape::default();
        let mut phi = zero_pose();
        // bend the left knee 90 degrees about x
        phi[L_KNEE] = AxisAngle([core::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        let js = fk(&tpl, &phi, &beta);

        let hip = tpl.rest_offsets[L_HIP];
        let thigh = tpl.rest_offsets[L_KNEE];
        let shin = tpl.rest_offsets[L_ANKLE];
        let knee = [hip[0] + thigh[0], hip[1] + thigh[1], hip[2] + thigh[2]];
        let r_knee = exp_map(&phi[L_KNEE]);
        let shin_rot = r_knee.apply(&shin);
        let ankle = [knee[0] + shin_rot[0], knee[1] + shin_rot[1], knee[2] + shin_rot[2]];
        for axis in 0..3 {
            assert!((js.joints[L_ANKLE][axis] - ankle[axis]).abs() < 1e-12);
        }
        // shin now points along -z (rotating (0,-1,0) by +90 deg about x)
        assert!(js.joints[L_ANKLE][2] < -0.4);
    }

    #[test]
    fn fk_is_shape_aware() {
        let tpl = BodyTemplate::standard();
        let mut rng = Rng::new(2024);
        for _ in 0..20 {
            let b1 = random_shape(&mut rng, 2.0);
            let b2 = random_shape(&mut rng, 2.0);
            if b1 == b2 {
                continue;
            }
            let j1 = fk(&tpl, &zero_pose(), &b1);
            let j2 = fk(&tpl, &zero_pose(), &b2);
            let moved = (1..NUM_JOINTS)
                .any(|j| (0..3).any(|a| (j1.joints[j][a] - j2.joints[j][a]).abs() > 1e-9));
            assert!(moved);
        }
    }

    #[test]
    fn bone_length_is_affine_in_each_shape_component() {
        let tpl = BodyTemplate::standard();
        let mut rng = Rng::new(7);
        for _ in 0..5 {
            let base = random_shape(&mut rng, 1.0);
            for k in 0..NUM_SHAPE {
                for j in 1..NUM_JOINTS {
                    let len_at = |t: f64| {
                        let mut b = base;
                        b.0[k] += t;
                        let o = tpl.bone_offset(j, &b);
                        norm(&o)
                    };
                    let l0 = len_at(0.0);
                    let l1 = len_at(1.0);
                    let lh = len_at(0.5);
                    assert!(
                        (lh - 0.5 * (l0 + l1)).abs() < 1e-12,
                        "joint {j} beta[{k}] not affine"
                    );
                }
            }
        }
    }

    #[test]
    fn vertices_count_and_rest_positions() {
        let tpl = BodyTemplate::standard();
        let beta = BodyShape::default();
        let verts = vertices(&tpl, &zero_pose(), &beta);
        assert_eq!(verts.len(), NUM_VERTICES);
        let js = fk(&tpl, &zero_pose(), &beta);
        for j in 0..NUM_JOINTS {
            for a in 0..ANCHORS_PER_JOINT {
                let v = verts[j * ANCHORS_PER_JOINT + a];
                let local = tpl.vertex_anchors[j][a];
                for axis in 0..3 {
                    assert!((v[axis] - (js.joints[j][axis] + local[axis])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn regress_zero_offset_keypoints_equal_joints() {
        let tpl = BodyTemplate::standard();
        let js = fk(&tpl, &zero_pose(), &BodyShape::default());
        let kps = regress_coco(&tpl, &js);
        for (kp, joint) in [
            (KP_L_HIP, L_HIP),
            (KP_R_HIP, R_HIP),
            (KP_L_SHOULDER, L_SHOULDER),
            (KP_R_SHOULDER, R_SHOULDER),
            (13, L_KNEE),
            (14, R_KNEE),
            (KP_L_ANKLE, L_ANKLE),
            (KP_R_ANKLE, R_ANKLE),
        ] {
            assert_eq!(kps[kp], js.joints[joint]);
        }
    }

    #[test]
    fn ears_are_sagittally_symmetric_at_rest() {
        let tpl = BodyTemplate::standard();
        let js = fk(&tpl, &zero_pose(), &BodyShape::default());
        let kps = regress_coco(&tpl, &js);
        let (le, re) = (kps[3], kps[4]);
        assert!((le[0] + re[0]).abs() < 1e-12);
        assert!((le[1] - re[1]).abs() < 1e-12);
        assert!((le[2] - re[2]).abs() < 1e-12);
    }

    #[test]
    fn mount_frames_at_rest() {
        let tpl = BodyTemplate::standard();
        let js = fk(&tpl, &zero_pose(), &BodyShape::default());
        let mounts = mount_frames(&tpl, &js);
        for (r, _) in &mounts {
            assert_eq!(*r, crate::so3::IDENTITY);
        }
        assert_eq!(mounts[0].1, js.joints[PELVIS]);
        for (i, &j) in tpl.mount_joints.iter().enumerate() {
            assert_eq!(mounts[i].1, js.joints[j]);
        }
    }

    #[test]
    fn fk_tape_matches_plain_fk() {
        let tpl = BodyTemplate::standard();
        let mut rng = Rng::new(41);
        let phi_flat: Vec<f64> = (0..72).map(|_| rng.range(-0.8, 0.8)).collect();
        let beta = random_shape(&mut rng, 1.5);
        let mut phi = zero_pose();
        for j in 0..NUM_JOINTS {
            phi[j] = AxisAngle([phi_flat[3 * j], phi_flat[3 * j + 1], phi_flat[3 * j + 2]]);
        }
        let plain = fk(&tpl, &phi, &beta);

        let mut t = Tape::new();
        let phi_v = t.var(vec![72], phi_flat);
        let beta_v = t.var(vec![NUM_SHAPE], beta.0.to_vec());
        let fkv = fk_tape(&mut t, &tpl, phi_v, beta_v).unwrap();
        let joints = t.value(fkv.joints);
        for j in 0..NUM_JOINTS {
            for axis in 0..3 {
                assert!((joints[3 * j + axis] - plain.joints[j][axis]).abs() < 1e-12);
            }
        }
        let verts_v = vertices_tape(&mut t, &tpl, &fkv, beta_v).unwrap();
        let plain_verts = vertices(&tpl, &phi, &beta);
        let vv = t.value(verts_v);
        for (i, pv) in plain_verts.iter().enumerate() {
            for axis in 0..3 {
                assert!((vv[3 * i + axis] - pv[axis]).abs() < 1e-12);
            }
        }
        let kp_v = regress_coco_tape(&mut t, &tpl, &fkv).unwrap();
        let plain_kp = regress_coco(&tpl, &plain);
        let kv = t.value(kp_v);
        for (i, pk) in plain_kp.iter().enumerate() {
            for axis in 0..3 {
                assert!((kv[3 * i + axis] - pk[axis]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fk_gradients_match_finite_differences() {
        let tpl = BodyTemplate::standard();
        let mut rng = Rng::new(43);
        let phi: Vec<f64> = (0..72).map(|_| rng.range(-0.6, 0.6)).collect();
        let beta: Vec<f64> = (0..NUM_SHAPE).map(|_| rng.range(-1.0, 1.0)).collect();
        let weights: Vec<f64> = (0..72).map(|_| rng.range(-1.0, 1.0)).collect();

        let run = |phi_in: &[f64], beta_in: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let pv = t.var(vec![72], phi_in.to_vec());
            let bv = t.var(vec![NUM_SHAPE], beta_in.to_vec());
            let fkv = fk_tape(&mut t, &tpl, pv, bv).unwrap();
            let w = t.constant(vec![NUM_JOINTS, 3], weights.clone());
            let prod = t.mul(fkv.joints, w).unwrap();
            let loss = t.sum_all(prod);
            t.backward(loss).unwrap();
            (
                t.scalar_value(loss),
                t.grad(pv).unwrap().to_vec(),
                t.grad(bv).unwrap().to_vec(),
            )
        };
        let (_, g_phi, g_beta) = run(&phi, &beta);
        let n_phi = numeric_gradient(|xs| run(xs, &beta).0, &phi, DEFAULT_EPS);
        let n_beta = numeric_gradient(|xs| run(&phi, xs).0, &beta, DEFAULT_EPS);
        let e1 = max_rel_err(&g_phi, &n_phi);
        let e2 = max_rel_err(&g_beta, &n_beta);
        assert!(e1 < 1e-4, "phi rel err {e1}");
        assert!(e2 < 1e-4, "beta rel err {e2}");
    }

    #[test]
    fn standing_height_is_plausible_and_shape_dependent() {
        let tpl = BodyTemplate::standard();
        let h0 = tpl.standing_root_height(&BodyShape::default());
        assert!((h0 - 0.915).abs() < 1e-9, "h0 {h0}");
        let mut tall = BodyShape::default();
        tall.0[0] = 2.0;
        assert!(tpl.standing_root_height(&tall) > h0);
    }
}
