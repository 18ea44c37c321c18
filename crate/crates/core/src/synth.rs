//! Self-contained ground-truth and observation synthesis: procedural motion
//! clips with kinematically consistent foot plants, virtual stereo and IMU
//! observations with configurable noise, T-pose point clouds and
//! foot-contact labels.
//!
//! Every generator is a pure function of its parameters and seed, so
//! datasets reproduce bit-exactly.

use alloc::string::String;
use alloc::vec::Vec;

use crate::body_model::{
    fk, mount_frames, regress_coco, AxisAngle, BodyShape, BodyTemplate, JointSet, L_ANKLE, L_ELBOW,
    L_HIP, L_KNEE, L_SHOULDER, NUM_JOINTS, NUM_KEYPOINTS, NUM_MOUNTS, R_ANKLE, R_ELBOW, R_HIP,
    R_KNEE, R_SHOULDER,
};
use crate::fmath;
use crate::rng::Rng;
use crate::so3::{exp_map, log_map, RotMat};
use crate::ssm_nets::{FrameObservation, ImuFrame};
use crate::stereo_rig::{project, reconstruct_world, StereoCalib, StereoObservation, View};

pub const FPS: f64 = 60.0;
const TAU: f64 = 2.0 * core::f64::consts::PI;

/// Contact labeling thresholds: a foot is in contact when it moved less
/// than 2 mm over the last frame and sits under 5 cm above the ground.
pub const CONTACT_DISPLACEMENT_M: f64 = 0.002;
pub const CONTACT_HEIGHT_M: f64 = 0.05;

/// Gravity in the y-up world; accelerometers report specific force
/// `R^T (pdd + g)`.
pub const GRAVITY: [f64; 3] = [0.0, 9.81, 0.0];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("config error: {0}")]
    Config(String),
    #[error("too few frames: need {need}, got {got}")]
    TooFewFrames { need: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    WalkCircle,
    IdleSway,
    SquatJump,
    FigureEight,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [
        MotionKind::WalkCircle,
        MotionKind::IdleSway,
        MotionKind::SquatJump,
        MotionKind::FigureEight,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MotionKind::WalkCircle => "walk-circle",
            MotionKind::IdleSway => "idle-sway",
            MotionKind::SquatJump => "squat-jump",
            MotionKind::FigureEight => "figure-eight",
        }
    }

    pub fn parse(s: &str) -> Result<MotionKind, SynthError> {
        MotionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| SynthError::Config(alloc::format!("unknown motion kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionFrame {
    pub phi: [AxisAngle; NUM_JOINTS],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub frames: Vec<MotionFrame>,
    pub beta: BodyShape,
    pub contacts: Vec<[bool; 2]>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Fraction of foot-frames in ground contact.
    pub fn contact_ratio(&self) -> f64 {
        if self.contacts.is_empty() {
            return 0.0;
        }
        let hits: usize =
            self.contacts.iter().map(|c| c[0] as usize + c[1] as usize).sum();
        hits as f64 / (2 * self.contacts.len()) as f64
    }
}

/// Observation noise model; fully deterministic given the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Gaussian noise on world keypoints (direct mode) and detector-style
    /// root-relative keypoints, meters.
    pub keypoint_sigma_world: f64,
    /// Gaussian pixel noise on 2D detections, px.
    pub pixel_sigma: f64,
    /// Probability a keypoint's confidence is crushed to zero.
    pub conf_dropout: f64,
    /// Accelerometer noise, m/s^2.
    pub imu_acc_sigma: f64,
    /// Small-angle orientation noise, radians.
    pub imu_rot_sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn ideal(seed: u64) -> Self {
        NoiseSpec {
            keypoint_sigma_world: 0.0,
            pixel_sigma: 0.0,
            conf_dropout: 0.0,
            imu_acc_sigma: 0.0,
            imu_rot_sigma: 0.0,
            seed,
        }
    }
}

// ---- gait machinery -----------------------------------------------------------------

struct PathPoint {
    x: f64,
    z: f64,
    yaw: f64,
}

enum WalkPath {
    Circle { cx: f64, cz: f64, radius: f64, dir: f64, phase: f64 },
    Eight { samples: Vec<[f64; 2]>, cum_len: Vec<f64> },
}

impl WalkPath {
    fn at(&self, s: f64) -> PathPoint {
        match self {
            WalkPath::Circle { cx, cz, radius, dir, phase } => {
                let psi = dir * s / radius + phase;
                let x = cx + radius * fmath::sin(psi);
                let z = cz + radius * fmath::cos(psi);
                // unit tangent d(pos)/ds
                let tx = dir * fmath::cos(psi);
                let tz = -dir * fmath::sin(psi);
                PathPoint { x, z, yaw: fmath::atan2(tx, tz) }
            }
            WalkPath::Eight { samples, cum_len } => {
                let total = *cum_len.last().unwrap();
                let mut s = s % total;
                if s < 0.0 {
                    s += total;
                }
                let mut lo = 0usize;
                let mut hi = cum_len.len() - 1;
                while lo + 1 < hi {
                    let mid = (lo + hi) / 2;
                    if cum_len[mid] <= s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let seg = (s - cum_len[lo]) / (cum_len[lo + 1] - cum_len[lo]).max(1e-12);
                let (a, b) = (samples[lo], samples[(lo + 1) % samples.len()]);
                let x = a[0] + seg * (b[0] - a[0]);
                let z = a[1] + seg * (b[1] - a[1]);
                PathPoint { x, z, yaw: fmath::atan2(b[0] - a[0], b[1] - a[1]) }
            }
        }
    }
}

fn lemniscate_path(cz: f64, a: f64, b: f64, phase: f64) -> WalkPath {
    let n = 2048usize;
    let mut samples = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let u = phase + TAU * i as f64 / n as f64;
        samples.push([a * fmath::sin(u), cz + 0.5 * b * fmath::sin(2.0 * u)]);
    }
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 1..=n {
        let dx = samples[i][0] - samples[i - 1][0];
        let dz = samples[i][1] - samples[i - 1][1];
        cum.push(cum[i - 1] + fmath::sqrt(dx * dx + dz * dz));
    }
    WalkPath::Eight { samples, cum_len: cum }
}

fn norm3(v: &[f64; 3]) -> f64 {
    fmath::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

fn normalize3(v: &[f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Right-handed frame with the given (unit) y axis, z as close to the
/// forward hint as possible.
fn frame_from_y(y: &[f64; 3], forward: &[f64; 3]) -> RotMat {
    let dot = forward[0] * y[0] + forward[1] * y[1] + forward[2] * y[2];
    let mut z = [forward[0] - dot * y[0], forward[1] - dot * y[1], forward[2] - dot * y[2]];
    if norm3(&z) < 1e-6 {
        // forward parallel to y; fall back to world x
        let alt = [1.0, 0.0, 0.0];
        let d2 = alt[0] * y[0] + alt[1] * y[1] + alt[2] * y[2];
        z = [alt[0] - d2 * y[0], alt[1] - d2 * y[1], alt[2] - d2 * y[2]];
    }
    let z = normalize3(&z);
    let x = crate::so3::cross3(y, &z);
    RotMat([
        [x[0], y[0], z[0]],
        [x[1], y[1], z[1]],
        [x[2], y[2], z[2]],
    ])
}

struct LegChain {
    hip: usize,
    knee: usize,
    ankle: usize,
    l1: f64,
    l2: f64,
}

/// Two-bone analytic IK: places the ankle exactly at `target` whenever it is
/// reachable, bending the knee toward `forward`.
fn leg_ik(
    chain: &LegChain,
    hip_world: &[f64; 3],
    target: &[f64; 3],
    root_rot: &RotMat,
    forward: &[f64; 3],
    yaw_rot: &RotMat,
) -> (AxisAngle, AxisAngle, AxisAngle) {
    let (l1, l2) = (chain.l1, chain.l2);
    let mut d_vec =
        [target[0] - hip_world[0], target[1] - hip_world[1], target[2] - hip_world[2]];
    let mut d = norm3(&d_vec);
    let d_min = (l1 - l2).abs() + 1e-4;
    let d_max = 0.995 * (l1 + l2);
    if d < 1e-9 {
        d_vec = [0.0, -1.0, 0.0];
        d = 1.0;
    }
    let dir = [d_vec[0] / d, d_vec[1] / d, d_vec[2] / d];
    let d_eff = d.clamp(d_min, d_max);

    // hip interior angle between the reach direction and the thigh
    let cos_hip = ((l1 * l1 + d_eff * d_eff - l2 * l2) / (2.0 * l1 * d_eff)).clamp(-1.0, 1.0);
    let sin_hip = fmath::sqrt((1.0 - cos_hip * cos_hip).max(0.0));
    // bend the knee toward the forward direction
    let fdot = forward[0] * dir[0] + forward[1] * dir[1] + forward[2] * dir[2];
    let mut bend =
        [forward[0] - fdot * dir[0], forward[1] - fdot * dir[1], forward[2] - fdot * dir[2]];
    if norm3(&bend) < 1e-6 {
        bend = [0.0, 0.0, 1.0];
    }
    let bend = normalize3(&bend);
    let thigh_dir = [
        cos_hip * dir[0] + sin_hip * bend[0],
        cos_hip * dir[1] + sin_hip * bend[1],
        cos_hip * dir[2] + sin_hip * bend[2],
    ];
    let knee_pos = [
        hip_world[0] + l1 * thigh_dir[0],
        hip_world[1] + l1 * thigh_dir[1],
        hip_world[2] + l1 * thigh_dir[2],
    ];
    let ankle_target = [
        hip_world[0] + d_eff * dir[0],
        hip_world[1] + d_eff * dir[1],
        hip_world[2] + d_eff * dir[2],
    ];
    let shin_dir = normalize3(&[
        ankle_target[0] - knee_pos[0],
        ankle_target[1] - knee_pos[1],
        ankle_target[2] - knee_pos[2],
    ]);

    let thigh_y = [-thigh_dir[0], -thigh_dir[1], -thigh_dir[2]];
    let shin_y = [-shin_dir[0], -shin_dir[1], -shin_dir[2]];
    let r_thigh = frame_from_y(&thigh_y, forward);
    let r_shin = frame_from_y(&shin_y, forward);
    let phi_hip = log_map(&root_rot.transpose().matmul(&r_thigh));
    let phi_knee = log_map(&r_thigh.transpose().matmul(&r_shin));
    // keep the foot level, facing the body's travel direction
    let phi_ankle = log_map(&r_shin.transpose().matmul(yaw_rot));
    (phi_hip, phi_knee, phi_ankle)
}

struct BodyDims {
    l1: f64,
    l2: f64,
    hip_lat: f64,
    hip_drop: f64,
    ankle_rest: f64,
    stand_height: f64,
}

fn body_dims(tpl: &BodyTemplate, beta: &BodyShape) -> BodyDims {
    let thigh = tpl.bone_offset(L_KNEE, beta);
    let shin = tpl.bone_offset(L_ANKLE, beta);
    let hip = tpl.bone_offset(L_HIP, beta);
    let stand = tpl.standing_root_height(beta);
    let rest = fk(tpl, &[AxisAngle::default(); NUM_JOINTS], beta);
    BodyDims {
        l1: norm3(&thigh),
        l2: norm3(&shin),
        hip_lat: hip[0].abs(),
        hip_drop: -hip[1],
        ankle_rest: stand + rest.joints[L_ANKLE][1],
        stand_height: stand,
    }
}

fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Arms-down walking/standing upper body with a gait-synchronized swing.
fn upper_body(phi: &mut [AxisAngle; NUM_JOINTS], gait_phase: f64, sway: f64) {
    let swing = 0.25 * fmath::sin(TAU * gait_phase);
    // arms hang down from the T-pose via a z rotation at the shoulders
    phi[L_SHOULDER] = AxisAngle([swing, 0.0, -1.25]);
    phi[R_SHOULDER] = AxisAngle([-swing, 0.0, 1.25]);
    phi[L_ELBOW] = AxisAngle([0.15 + 0.1 * fmath::sin(TAU * gait_phase), 0.0, -0.15]);
    phi[R_ELBOW] = AxisAngle([0.15 - 0.1 * fmath::sin(TAU * gait_phase), 0.0, 0.15]);
    // gentle torso counter-sway
    phi[3] = AxisAngle([0.02 * fmath::sin(TAU * gait_phase), 0.04 * sway, 0.015 * sway]);
    phi[6] = AxisAngle([0.015 * fmath::sin(TAU * gait_phase), 0.02 * sway, 0.0]);
    phi[12] = AxisAngle([0.0, -0.03 * sway, 0.0]);
}

fn walk_like(
    tpl: &BodyTemplate,
    duration_s: f64,
    beta: &BodyShape,
    seed: u64,
    path: WalkPath,
    speed: f64,
) -> Vec<MotionFrame> {
    let mut rng = Rng::new(seed ^ 0x57A1_C0DE);
    let dims = body_dims(tpl, beta);
    let cycle_s = 0.9 + 0.1 * rng.uniform();
    let duty = 0.62;
    let stride = speed * cycle_s;
    // root height low enough that every stance pose stays reachable
    let max_horiz = 0.5 * stride * duty + 0.12;
    let reach = 0.96 * (dims.l1 + dims.l2);
    let vert = fmath::sqrt((reach * reach - max_horiz * max_horiz).max(0.04));
    let root_y_base = (dims.ankle_rest + vert + dims.hip_drop).min(dims.stand_height - 0.01);
    let bob_amp = 0.012;
    let lift = 0.05 + 0.03 * rng.uniform();

    let n = (duration_s * FPS) as usize;
    let legs = [
        (LegChain { hip: L_HIP, knee: L_KNEE, ankle: L_ANKLE, l1: dims.l1, l2: dims.l2 }, 0.0),
        (LegChain { hip: R_HIP, knee: R_KNEE, ankle: R_ANKLE, l1: dims.l1, l2: dims.l2 }, 0.5),
    ];

    // world plant position for step k of a leg: the path point under the
    // hip at mid-stance, offset laterally
    let plant = |k: i64, offset: f64, lat_sign: f64| -> [f64; 3] {
        let tau_mid = k as f64 + 0.5 * duty;
        let t_mid = ((tau_mid + offset) * cycle_s).max(0.0);
        let p = path.at(speed * t_mid);
        let lat = lat_sign * dims.hip_lat;
        [
            p.x + lat * fmath::cos(p.yaw),
            dims.ankle_rest,
            p.z - lat * fmath::sin(p.yaw),
        ]
    };

    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / FPS;
        let p = path.at(speed * t);
        let gait = t / cycle_s;
        let root_y = root_y_base + bob_amp * fmath::sin(2.0 * TAU * gait);
        let t_root = [p.x, root_y, p.z];
        let pitch = 0.03 + 0.01 * fmath::sin(2.0 * TAU * gait);
        let root_rot = RotMat::rot_y(p.yaw).matmul(&RotMat::rot_x(pitch));
        let yaw_rot = RotMat::rot_y(p.yaw);
        let forward = [fmath::sin(p.yaw), 0.0, fmath::cos(p.yaw)];

        let mut phi = [AxisAngle::default(); NUM_JOINTS];
        phi[0] = log_map(&root_rot);
        upper_body(&mut phi, gait, fmath::sin(TAU * gait));

        for (leg, offset) in &legs {
            let lat_sign = if leg.hip == L_HIP { 1.0 } else { -1.0 };
            let tau = t / cycle_s - offset;
            let k = fmath::floor(tau) as i64;
            let phase = tau - k as f64;
            let target = if phase <= duty || tau < 0.0 {
                plant(k, *offset, lat_sign)
            } else {
                let sw = (phase - duty) / (1.0 - duty);
                let from = plant(k, *offset, lat_sign);
                let to = plant(k + 1, *offset, lat_sign);
                let h = smootherstep(sw);
                let s = fmath::sin(core::f64::consts::PI * sw);
                [
                    from[0] + h * (to[0] - from[0]),
                    dims.ankle_rest + lift * s * s,
                    from[2] + h * (to[2] - from[2]),
                ]
            };
            let hip_off = tpl.bone_offset(leg.hip, beta);
            let hip_world_off = root_rot.apply(&hip_off);
            let hip_world = [
                t_root[0] + hip_world_off[0],
                t_root[1] + hip_world_off[1],
                t_root[2] + hip_world_off[2],
            ];
            let (h, kn, an) = leg_ik(leg, &hip_world, &target, &root_rot, &forward, &yaw_rot);
            phi[leg.hip] = h;
            phi[leg.knee] = kn;
            phi[leg.ankle] = an;
        }
        frames.push(MotionFrame { phi, t: t_root });
    }
    frames
}

fn idle_sway(tpl: &BodyTemplate, duration_s: f64, beta: &BodyShape, seed: u64) -> Vec<MotionFrame> {
    let mut rng = Rng::new(seed ^ 0x1D1E_5347);
    let dims = body_dims(tpl, beta);
    let yaw = core::f64::consts::PI + rng.range(-0.3, 0.3);
    let base = [rng.range(-0.3, 0.3), dims.stand_height - 0.012, rng.range(2.4, 3.4)];
    let yaw_rot = RotMat::rot_y(yaw);
    let forward = [fmath::sin(yaw), 0.0, fmath::cos(yaw)];

    // feet stay planted under the hips for the whole clip
    let lat = |sign: f64| yaw_rot.apply(&[sign * dims.hip_lat, 0.0, 0.0]);
    let plant_l = {
        let o = lat(1.0);
        [base[0] + o[0], dims.ankle_rest, base[2] + o[2]]
    };
    let plant_r = {
        let o = lat(-1.0);
        [base[0] + o[0], dims.ankle_rest, base[2] + o[2]]
    };

    let (f1, f2, f3) = (0.25, 0.33, 0.21);
    let (p1, p2) = (rng.range(0.0, TAU), rng.range(0.0, TAU));
    let n = (duration_s * FPS) as usize;
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / FPS;
        let t_root = [
            base[0] + 0.006 * fmath::sin(TAU * f1 * t + p1),
            base[1] + 0.004 * fmath::sin(TAU * f2 * t + p2),
            base[2] + 0.006 * fmath::cos(TAU * f3 * t + p1),
        ];
        let root_rot = RotMat::rot_y(yaw).matmul(&RotMat::rot_x(0.01 * fmath::sin(TAU * f2 * t)));
        let mut phi = [AxisAngle::default(); NUM_JOINTS];
        phi[0] = log_map(&root_rot);
        upper_body(&mut phi, 0.15 * t, fmath::sin(TAU * f1 * t + p2));
        for (leg, plant) in [
            (LegChain { hip: L_HIP, knee: L_KNEE, ankle: L_ANKLE, l1: dims.l1, l2: dims.l2 }, plant_l),
            (LegChain { hip: R_HIP, knee: R_KNEE, ankle: R_ANKLE, l1: dims.l1, l2: dims.l2 }, plant_r),
        ] {
            let hip_off = tpl.bone_offset(leg.hip, beta);
            let hip_world_off = root_rot.apply(&hip_off);
            let hip_world = [
                t_root[0] + hip_world_off[0],
                t_root[1] + hip_world_off[1],
                t_root[2] + hip_world_off[2],
            ];
            let (h, kn, an) = leg_ik(&leg, &hip_world, &plant, &root_rot, &forward, &RotMat::rot_y(yaw));
            phi[leg.hip] = h;
            phi[leg.knee] = kn;
            phi[leg.ankle] = an;
        }
        frames.push(MotionFrame { phi, t: t_root });
    }
    frames
}

fn squat_jump(tpl: &BodyTemplate, duration_s: f64, beta: &BodyShape, seed: u64) -> Vec<MotionFrame> {
    let mut rng = Rng::new(seed ^ 0x5A_0A77);
    let dims = body_dims(tpl, beta);
    let yaw = core::f64::consts::PI + rng.range(-0.2, 0.2);
    let base_x = rng.range(-0.3, 0.3);
    let base_z = rng.range(2.4, 3.2);
    let stand_y = dims.stand_height - 0.01;

    let v0 = 1.3; // takeoff speed, m/s
    let g = GRAVITY[1];
    let t_descend = 0.7;
    let t_push = 0.22;
    let depth = 0.5 * v0 * t_push; // push covers the squat depth
    let t_flight = 2.0 * v0 / g;
    let t_absorb = t_push;
    let t_recover = 0.6;
    let cycle = t_descend + t_push + t_flight + t_absorb + t_recover + 0.4;

    // root height over one cycle, C1 at every phase boundary
    let root_y = |tc: f64| -> (f64, bool) {
        if tc < t_descend {
            (stand_y - depth * smootherstep(tc / t_descend), false)
        } else if tc < t_descend + t_push {
            let tau = tc - t_descend;
            (stand_y - depth + 0.5 * (v0 / t_push) * tau * tau, false)
        } else if tc < t_descend + t_push + t_flight {
            let tau = tc - t_descend - t_push;
            (stand_y + v0 * tau - 0.5 * g * tau * tau, true)
        } else if tc < t_descend + t_push + t_flight + t_absorb {
            let tau = tc - t_descend - t_push - t_flight;
            // land with -v0 and decelerate to rest at the squat depth
            (stand_y - v0 * tau + 0.5 * (v0 / t_absorb) * tau * tau, false)
        } else if tc < t_descend + t_push + t_flight + t_absorb + t_recover {
            let tau = tc - t_descend - t_push - t_flight - t_absorb;
            (stand_y - depth + depth * smootherstep(tau / t_recover), false)
        } else {
            (stand_y, false)
        }
    };

    let yaw_rot = RotMat::rot_y(yaw);
    let forward = [fmath::sin(yaw), 0.0, fmath::cos(yaw)];
    let lat = |sign: f64| yaw_rot.apply(&[sign * dims.hip_lat, 0.0, 0.0]);
    let plant_of = |sign: f64| {
        let o = lat(sign);
        [base_x + o[0], dims.ankle_rest, base_z + o[2]]
    };

    let n = (duration_s * FPS) as usize;
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / FPS;
        let tc = t % cycle;
        let (y, airborne) = root_y(tc);
        let t_root = [base_x, y, base_z];
        let root_rot = yaw_rot;
        let mut phi = [AxisAngle::default(); NUM_JOINTS];
        phi[0] = log_map(&root_rot);
        upper_body(&mut phi, 0.1 * t, fmath::sin(TAU * 0.2 * t));
        for (leg, sign) in [
            (LegChain { hip: L_HIP, knee: L_KNEE, ankle: L_ANKLE, l1: dims.l1, l2: dims.l2 }, 1.0),
            (LegChain { hip: R_HIP, knee: R_KNEE, ankle: R_ANKLE, l1: dims.l1, l2: dims.l2 }, -1.0),
        ] {
            let target = if airborne {
                // tuck: feet travel with the root
                let o = lat(sign);
                [
                    base_x + o[0],
                    y - 0.80 * (dims.l1 + dims.l2),
                    base_z + o[2] - 0.05,
                ]
            } else {
                plant_of(sign)
            };
            let hip_off = tpl.bone_offset(leg.hip, beta);
            let hip_world_off = root_rot.apply(&hip_off);
            let hip_world = [
                t_root[0] + hip_world_off[0],
                t_root[1] + hip_world_off[1],
                t_root[2] + hip_world_off[2],
            ];
            let (h, kn, an) = leg_ik(&leg, &hip_world, &target, &root_rot, &forward, &yaw_rot);
            phi[leg.hip] = h;
            phi[leg.knee] = kn;
            phi[leg.ankle] = an;
        }
        frames.push(MotionFrame { phi, t: t_root });
    }
    frames
}

/// Procedural ground-truth motion. The same seed always yields the same
/// sequence, bit for bit.
pub fn generate_motion(
    kind: MotionKind,
    duration_s: f64,
    beta: &BodyShape,
    seed: u64,
    tpl: &BodyTemplate,
) -> Result<MotionSequence, SynthError> {
    if duration_s < 1.0 {
        return Err(SynthError::Config(String::from("duration must be at least 1 s")));
    }
    let mut rng = Rng::new(seed);
    let frames = match kind {
        MotionKind::WalkCircle => {
            let radius = 2.0;
            let cz = rng.range(3.3, 3.9);
            let dir = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            let phase = rng.range(0.0, TAU);
            let speed = rng.range(0.55, 0.7);
            let path = WalkPath::Circle { cx: 0.0, cz, radius, dir, phase };
            walk_like(tpl, duration_s, beta, seed, path, speed)
        }
        MotionKind::FigureEight => {
            let cz = rng.range(3.2, 3.8);
            let phase = rng.range(0.0, TAU);
            let path = lemniscate_path(cz, 1.4, 1.6, phase);
            let speed = rng.range(0.5, 0.65);
            walk_like(tpl, duration_s, beta, seed, path, speed)
        }
        MotionKind::IdleSway => idle_sway(tpl, duration_s, beta, seed),
        MotionKind::SquatJump => squat_jump(tpl, duration_s, beta, seed),
    };
    let contacts = label_contacts(tpl, &frames, beta);
    Ok(MotionSequence { fps: FPS, frames, beta: *beta, contacts })
}

/// World-frame position of both foot joints (ankles) for one frame.
pub fn foot_positions(tpl: &BodyTemplate, frame: &MotionFrame, beta: &BodyShape) -> [[f64; 3]; 2] {
    let js = fk(tpl, &frame.phi, beta);
    let mut out = [[0.0; 3]; 2];
    for (i, &j) in tpl.foot_joints.iter().enumerate() {
        for a in 0..3 {
            out[i][a] = js.joints[j][a] + frame.t[a];
        }
    }
    out
}

/// Contact labeling rule: a foot is in contact when its world displacement
/// over one frame is under 2 mm and it sits below 5 cm above the ground
/// plane. The first frame copies the second (no displacement exists yet).
pub fn label_contacts(
    tpl: &BodyTemplate,
    frames: &[MotionFrame],
    beta: &BodyShape,
) -> Vec<[bool; 2]> {
    let feet: Vec<[[f64; 3]; 2]> = frames.iter().map(|f| foot_positions(tpl, f, beta)).collect();
    let mut out = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        if t == 0 {
            out.push([false, false]);
            continue;
        }
        let mut q = [false; 2];
        for f in 0..2 {
            let disp = norm3(&[
                feet[t][f][0] - feet[t - 1][f][0],
                feet[t][f][1] - feet[t - 1][f][1],
                feet[t][f][2] - feet[t - 1][f][2],
            ]);
            q[f] = disp < CONTACT_DISPLACEMENT_M && feet[t][f][1] < CONTACT_HEIGHT_M;
        }
        out.push(q);
    }
    if out.len() >= 2 {
        out[0] = out[1];
    }
    out
}

// ---- observation synthesis -------------------------------------------------------------

/// Ground-truth world keypoints and pelvis-removed (root-relative)
/// keypoints per frame.
pub fn world_keypoints(
    tpl: &BodyTemplate,
    seq: &MotionSequence,
) -> Vec<([[f64; 3]; NUM_KEYPOINTS], [[f64; 3]; NUM_KEYPOINTS])> {
    seq.frames
        .iter()
        .map(|frame| {
            let js = fk(tpl, &frame.phi, &seq.beta);
            let kp = regress_coco(tpl, &js);
            let mut world = [[0.0; 3]; NUM_KEYPOINTS];
            let mut rel = [[0.0; 3]; NUM_KEYPOINTS];
            for k in 0..NUM_KEYPOINTS {
                for a in 0..3 {
                    world[k][a] = kp[k][a] + frame.t[a];
                    rel[k][a] = kp[k][a];
                }
            }
            (world, rel)
        })
        .collect()
}

/// Virtual stereo detections: world keypoints projected to both views with
/// pixel noise, detector-style root-relative keypoints with world noise,
/// confidences from dropout and frustum checks.
pub fn stereo_observations(
    tpl: &BodyTemplate,
    seq: &MotionSequence,
    calib: &StereoCalib,
    noise: &NoiseSpec,
) -> Vec<StereoObservation> {
    let mut rng = Rng::new(noise.seed ^ 0x0B5E_57E0);
    let kps = world_keypoints(tpl, seq);
    let mut out = Vec::with_capacity(seq.len());
    for (world, rel) in &kps {
        let mut obs = StereoObservation::default();
        for k in 0..NUM_KEYPOINTS {
            for (view, p2d, p3d, conf) in [
                (View::Left, &mut obs.p2d_l[k], &mut obs.p3d_l[k], &mut obs.conf_l[k]),
                (View::Right, &mut obs.p2d_r[k], &mut obs.p3d_r[k], &mut obs.conf_r[k]),
            ] {
                let mut visible = true;
                match project(calib, view, &world[k]) {
                    Ok(px) => {
                        let u = px[0] + rng.normal_scaled(noise.pixel_sigma);
                        let v = px[1] + rng.normal_scaled(noise.pixel_sigma);
                        *p2d = [u, v];
                        if px[0] < 0.0 || px[0] > calib.width || px[1] < 0.0 || px[1] > calib.height
                        {
                            visible = false;
                        }
                    }
                    Err(_) => {
                        *p2d = [0.0, 0.0];
                        visible = false;
                    }
                }
                for a in 0..3 {
                    p3d[a] = rel[k][a] + rng.normal_scaled(noise.keypoint_sigma_world);
                }
                let dropped = noise.conf_dropout > 0.0 && rng.uniform() < noise.conf_dropout;
                *conf = if visible && !dropped { 1.0 } else { 0.0 };
            }
        }
        out.push(obs);
    }
    out
}

/// IMU synthesis: orientations are the mount joints' global rotations (with
/// small-angle noise), accelerations the specific force `R^T (pdd + g)` with
/// the second derivative taken by central differences at the sequence rate
/// (one-sided at the endpoints).
pub fn imu_frames(
    tpl: &BodyTemplate,
    seq: &MotionSequence,
    noise: &NoiseSpec,
) -> Result<Vec<ImuFrame>, SynthError> {
    let n = seq.len();
    if n < 3 {
        return Err(SynthError::TooFewFrames { need: 3, got: n });
    }
    let mut rng = Rng::new(noise.seed ^ 0x1006_0077);
    let mounts: Vec<[(RotMat, [f64; 3]); NUM_MOUNTS]> = seq
        .frames
        .iter()
        .map(|frame| {
            let js = fk(tpl, &frame.phi, &seq.beta);
            let mut m = mount_frames(tpl, &js);
            for (_, pos) in m.iter_mut() {
                for a in 0..3 {
                    pos[a] += frame.t[a];
                }
            }
            m
        })
        .collect();

    let fps2 = seq.fps * seq.fps;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let stencil = t.clamp(1, n - 2);
        let mut rotations = [crate::so3::IDENTITY; NUM_MOUNTS];
        let mut accelerations = [[0.0; 3]; NUM_MOUNTS];
        for m in 0..NUM_MOUNTS {
            let (r_true, _) = mounts[t][m];
            let p_prev = mounts[stencil - 1][m].1;
            let p_mid = mounts[stencil][m].1;
            let p_next = mounts[stencil + 1][m].1;
            let mut specific = [0.0; 3];
            for a in 0..3 {
                let pdd = (p_next[a] - 2.0 * p_mid[a] + p_prev[a]) * fps2;
                specific[a] = pdd + GRAVITY[a];
            }
            let sensed = r_true.transpose().apply(&specific);
            for (acc, s) in accelerations[m].iter_mut().zip(sensed) {
                *acc = s + rng.normal_scaled(noise.imu_acc_sigma);
            }
            let wobble = AxisAngle([
                rng.normal_scaled(noise.imu_rot_sigma),
                rng.normal_scaled(noise.imu_rot_sigma),
                rng.normal_scaled(noise.imu_rot_sigma),
            ]);
            rotations[m] = r_true.matmul(&exp_map(&wobble));
        }
        out.push(ImuFrame { rotations, accelerations });
    }
    Ok(out)
}

/// How metric keypoints are produced for the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationMode {
    /// Full stereo path: project, add pixel noise, reconstruct.
    Stereo,
    /// Table-protocol path: ground-truth world keypoints plus Gaussian
    /// noise, skipping the camera model.
    DirectWorld,
}

/// Complete per-frame pipeline inputs for a sequence.
pub fn frame_observations(
    tpl: &BodyTemplate,
    seq: &MotionSequence,
    calib: &StereoCalib,
    noise: &NoiseSpec,
    mode: ObservationMode,
) -> Result<Vec<FrameObservation>, SynthError> {
    let imu = imu_frames(tpl, seq, noise)?;
    let mut out = Vec::with_capacity(seq.len());
    match mode {
        ObservationMode::Stereo => {
            let stereo = stereo_observations(tpl, seq, calib, noise);
            for (obs, imu) in stereo.iter().zip(imu) {
                let rec = reconstruct_world(calib, obs);
                out.push(FrameObservation { p_c: rec.p_c, p_r: rec.p_r, conf: rec.conf_c, imu });
            }
        }
        ObservationMode::DirectWorld => {
            let mut rng = Rng::new(noise.seed ^ 0xD1EC_7A0B);
            let kps = world_keypoints(tpl, seq);
            for ((world, rel), imu) in kps.iter().zip(imu) {
                let mut p_c = *world;
                let mut p_r = *rel;
                let mut conf = [1.0; NUM_KEYPOINTS];
                for k in 0..NUM_KEYPOINTS {
                    for a in 0..3 {
                        p_c[k][a] += rng.normal_scaled(noise.keypoint_sigma_world);
                        p_r[k][a] += rng.normal_scaled(noise.keypoint_sigma_world);
                    }
                    if noise.conf_dropout > 0.0 && rng.uniform() < noise.conf_dropout {
                        conf[k] = 0.0;
                    }
                }
                out.push(FrameObservation { p_c, p_r, conf, imu });
            }
        }
    }
    Ok(out)
}

/// T-pose point cloud for shape fitting: ~20k points sampled around the
/// body's surface anchors with 5 mm jitter, plus the matching observed
/// skeleton, both posed in front of the camera.
pub fn tpose_cloud(
    tpl: &BodyTemplate,
    beta: &BodyShape,
    noise: &NoiseSpec,
) -> (Vec<[f64; 3]>, [[f64; 3]; NUM_KEYPOINTS]) {
    let mut rng = Rng::new(noise.seed ^ 0x7905E);
    let rest = [AxisAngle::default(); NUM_JOINTS];
    let js = fk(tpl, &rest, beta);
    let verts = crate::body_model::vertices_from_joints(tpl, &js, beta);
    let yaw = core::f64::consts::PI;
    let rot = RotMat::rot_y(yaw);
    let t = [0.0, tpl.standing_root_height(beta), 2.5];
    let place = |p: &[f64; 3]| {
        let r = rot.apply(p);
        [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
    };
    let n = 20_000usize;
    let mut cloud = Vec::with_capacity(n);
    for _ in 0..n {
        let v = verts[(rng.next_u64() % verts.len() as u64) as usize];
        let jittered = [
            v[0] + rng.normal_scaled(0.005),
            v[1] + rng.normal_scaled(0.005),
            v[2] + rng.normal_scaled(0.005),
        ];
        cloud.push(place(&jittered));
    }
    let kp = regress_coco(tpl, &js);
    let mut skeleton = [[0.0; 3]; NUM_KEYPOINTS];
    for k in 0..NUM_KEYPOINTS {
        skeleton[k] = place(&kp[k]);
    }
    (cloud, skeleton)
}

/// Joint world positions per frame, convenience for metric computation.
pub fn joint_world_positions(
    tpl: &BodyTemplate,
    seq: &MotionSequence,
) -> Vec<[[f64; 3]; NUM_JOINTS]> {
    seq.frames
        .iter()
        .map(|frame| {
            let js: JointSet = fk(tpl, &frame.phi, &seq.beta);
            let mut out = js.joints;
            for j in out.iter_mut() {
                for a in 0..3 {
                    j[a] += frame.t[a];
                }
            }
            out
        })
        .collect()
}
