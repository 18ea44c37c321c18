//! Staged training (TransNet/IENet/KENet, then FusionNet, then RefineNet),
//! evaluation under the table-protocol noise modes, ablation switches and
//! the streaming throughput benchmark.
//!
//! Training a stage freezes everything before it: earlier networks are run
//! once in streaming mode over each clip and their outputs enter the tape as
//! constants, so stage-1 parameters stay bitwise untouched by later stages.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::body_model::{fk, fk_tape, AxisAngle, BodyShape, BodyTemplate, NUM_JOINTS, NUM_SHAPE};
use crate::losses::{
    contact_bce, cycle_loss, footskate_loss, jerk_loss, l2_loss, rotation_fk_loss, FrameSupervision,
    LossWeights,
};
use crate::mocap_metrics::{fs_metric, jerk_metric, jpe, pve, sip, te, MetricError, MetricReport};
use crate::rng::Rng;
use crate::so3::RotMat;
use crate::ssm_nets::{
    assemble_fusion_input, assemble_imu_input, assemble_kenet_input, assemble_refine_input,
    assemble_trans_input, canonical_root, forward_window, net_vars_in_order, register_net,
    sigmoid, FrameObservation, InputScales, NetError, NetKind, Pipeline, PipelineConfig, Real,
    SequenceNetParams, StreamNet, Workspace,
};
use crate::stereo_rig::StereoCalib;
use crate::synth::{frame_observations, MotionSequence, NoiseSpec, ObservationMode, SynthError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("stage order violated: {0}")]
    StageOrder(&'static str),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One switch per ablation study row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationFlags {
    pub no_shape: bool,
    pub no_pe: bool,
    pub no_refine: bool,
    pub no_jerk: bool,
    pub no_cycle: bool,
    pub no_footskate: bool,
    pub no_canonical: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub stage: u8,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,
    /// Truncated-backpropagation window, frames.
    pub window: usize,
    /// Windows accumulated per optimizer step.
    pub batch: usize,
    pub epochs: usize,
    /// Exponential learning-rate decay: the rate anneals from `lr` to
    /// `lr * lr_decay` across the epochs (1.0 disables).
    pub lr_decay: f64,
    pub seed: u64,
    pub hidden: usize,
    pub weights: LossWeights,
    pub ablation: AblationFlags,
    pub workspace: Workspace,
    pub scales: InputScales,
}

impl TrainConfig {
    pub fn stage(stage: u8, hidden: usize, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            stage,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 1.0,
            window: 120,
            batch: 4,
            epochs,
            lr_decay: 1.0,
            seed,
            hidden,
            weights: LossWeights::default(),
            ablation: AblationFlags::default(),
            workspace: Workspace::default(),
            scales: InputScales::default(),
        }
    }

}

/// Table-protocol observation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Ideal,
    Sigma5,
    Sigma15,
    VirtualStereo,
}

impl NoiseMode {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseMode::Ideal => "ideal",
            NoiseMode::Sigma5 => "sigma5",
            NoiseMode::Sigma15 => "sigma15",
            NoiseMode::VirtualStereo => "stereo",
        }
    }

    pub fn parse(s: &str) -> Option<NoiseMode> {
        [NoiseMode::Ideal, NoiseMode::Sigma5, NoiseMode::Sigma15, NoiseMode::VirtualStereo]
            .into_iter()
            .find(|m| m.name() == s)
    }

    pub fn observation_plan(&self, seed: u64) -> (NoiseSpec, ObservationMode) {
        match self {
            NoiseMode::Ideal => (NoiseSpec::ideal(seed), ObservationMode::DirectWorld),
            NoiseMode::Sigma5 => (
                NoiseSpec { keypoint_sigma_world: 0.05, ..NoiseSpec::ideal(seed) },
                ObservationMode::DirectWorld,
            ),
            NoiseMode::Sigma15 => (
                NoiseSpec { keypoint_sigma_world: 0.15, ..NoiseSpec::ideal(seed) },
                ObservationMode::DirectWorld,
            ),
            NoiseMode::VirtualStereo => (
                NoiseSpec {
                    pixel_sigma: 1.0,
                    keypoint_sigma_world: 0.02,
                    ..NoiseSpec::ideal(seed)
                },
                ObservationMode::Stereo,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub mode: NoiseMode,
    pub seed: u64,
    pub flags: AblationFlags,
}

/// The five trained networks; stages fill them in order.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    pub trans: Option<SequenceNetParams>,
    pub ienet: Option<SequenceNetParams>,
    pub kenet: Option<SequenceNetParams>,
    pub fusion: Option<SequenceNetParams>,
    pub refine: Option<SequenceNetParams>,
}

impl CheckpointSet {
    pub fn get(&self, kind: NetKind) -> Option<&SequenceNetParams> {
        match kind {
            NetKind::Trans => self.trans.as_ref(),
            NetKind::Ienet => self.ienet.as_ref(),
            NetKind::Kenet => self.kenet.as_ref(),
            NetKind::Fusion => self.fusion.as_ref(),
            NetKind::Refine => self.refine.as_ref(),
        }
    }

    pub fn set(&mut self, p: SequenceNetParams) {
        match NetKind::from_name(&p.name) {
            Some(NetKind::Trans) => self.trans = Some(p),
            Some(NetKind::Ienet) => self.ienet = Some(p),
            Some(NetKind::Kenet) => self.kenet = Some(p),
            Some(NetKind::Fusion) => self.fusion = Some(p),
            Some(NetKind::Refine) => self.refine = Some(p),
            None => {}
        }
    }
}

/// Per-step training losses, one series per network trained.
#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub series: Vec<(String, Vec<f64>)>,
}

// ---- dataset preparation ---------------------------------------------------------------

/// A clip with precomputed network inputs and supervision.
pub struct ClipData {
    pub seq: MotionSequence,
    pub obs: Vec<FrameObservation>,
    trans_in: Vec<Vec<f64>>,
    imu_in: Vec<Vec<f64>>,
    kenet_in: Vec<Vec<f64>>,
    sup: Vec<FrameSupervision>,
    /// Stage-1 joint targets (canonical, or metric-frame under the
    /// canonical-space ablation).
    j_target: Vec<[f64; 72]>,
    /// Measured pelvis rotation per frame, for canonical/world transforms.
    pelvis: Vec<RotMat>,
}

/// Assemble inputs and supervision for one clip under a config.
pub fn prepare_clip(
    tpl: &BodyTemplate,
    cfg: &TrainConfig,
    seq: MotionSequence,
    obs: Vec<FrameObservation>,
) -> Result<ClipData, TrainError> {
    let pe = !cfg.ablation.no_pe;
    let canonical = !cfg.ablation.no_canonical;
    let n = seq.len();
    let mut trans_in = Vec::with_capacity(n);
    let mut imu_in = Vec::with_capacity(n);
    let mut kenet_in = Vec::with_capacity(n);
    let mut sup = Vec::with_capacity(n);
    let mut j_target = Vec::with_capacity(n);
    let mut pelvis = Vec::with_capacity(n);
    for (t, ob) in obs.iter().enumerate() {
        trans_in.push(assemble_trans_input(&ob.p_c, &ob.conf, &cfg.workspace, pe));
        imu_in.push(assemble_imu_input(&ob.imu, &cfg.scales, pe)?);
        kenet_in.push(assemble_kenet_input(&ob.p_r, &ob.conf, &cfg.scales, pe, canonical));
        let frame = &seq.frames[t];
        let meas = ob.imu.rotations[0];
        let gt_root = [frame.phi[0].0[0], frame.phi[0].0[1], frame.phi[0].0[2]];
        let canon_root = canonical_root(&gt_root, &meas);
        let mut phi_canon = [0.0; 72];
        for j in 0..NUM_JOINTS {
            let v = if j == 0 { canon_root } else { frame.phi[j].0 };
            phi_canon[3 * j..3 * j + 3].copy_from_slice(&v);
        }
        let mut pose_canon = frame.phi;
        pose_canon[0] = AxisAngle(canon_root);
        let canon_joints = fk(tpl, &pose_canon, &seq.beta);
        let mut joints = [0.0; 72];
        for j in 0..NUM_JOINTS {
            joints[3 * j..3 * j + 3].copy_from_slice(&canon_joints.joints[j]);
        }
        let target = if canonical {
            joints
        } else {
            let metric = fk(tpl, &frame.phi, &seq.beta);
            let mut flat = [0.0; 72];
            for j in 0..NUM_JOINTS {
                flat[3 * j..3 * j + 3].copy_from_slice(&metric.joints[j]);
            }
            flat
        };
        let t_prev = if t == 0 { frame.t } else { seq.frames[t - 1].t };
        sup.push(FrameSupervision {
            phi: phi_canon,
            t: frame.t,
            dt: [
                frame.t[0] - t_prev[0],
                frame.t[1] - t_prev[1],
                frame.t[2] - t_prev[2],
            ],
            joints,
            contacts: [seq.contacts[t][0] as u8 as f64, seq.contacts[t][1] as u8 as f64],
        });
        j_target.push(target);
        pelvis.push(meas);
    }
    Ok(ClipData { seq, obs, trans_in, imu_in, kenet_in, sup, j_target, pelvis })
}

/// Synthesize observations and prepare a batch of clips in one call.
pub fn prepare_clips(
    tpl: &BodyTemplate,
    cfg: &TrainConfig,
    calib: &StereoCalib,
    seqs: Vec<MotionSequence>,
    mode: NoiseMode,
) -> Result<Vec<ClipData>, TrainError> {
    let mut out = Vec::with_capacity(seqs.len());
    for (i, seq) in seqs.into_iter().enumerate() {
        let (noise, obs_mode) = mode.observation_plan(cfg.seed ^ (0x0B5 + i as u64 * 7919));
        let obs = frame_observations(tpl, &seq, calib, &noise, obs_mode)?;
        out.push(prepare_clip(tpl, cfg, seq, obs)?);
    }
    Ok(out)
}

// ---- optimizer ------------------------------------------------------------------------

/// Adaptive-moment optimizer with bias correction and global-norm clipping.
pub struct Adam {
    pub lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, sizes: &[usize]) -> Self {
        Adam {
            lr: cfg.lr,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], clip: f64) {
        self.step += 1;
        let norm2: f64 = grads.iter().flat_map(|g| g.iter().map(|x| x * x)).sum();
        let norm = crate::fmath::sqrt(norm2);
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        let bc1 = 1.0 - libm::pow(self.b1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.b2, self.step as f64);
        for (pi, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for i in 0..p.data.len() {
                let g = grads[pi][i] * scale;
                m[i] = self.b1 * m[i] + (1.0 - self.b1) * g;
                v[i] = self.b2 * v[i] + (1.0 - self.b2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= self.lr * mh / (crate::fmath::sqrt(vh) + self.eps);
            }
        }
    }
}

// ---- window iteration helpers ------------------------------------------------------------

struct GradAccumulator {
    grads: Vec<Vec<f64>>,
    windows: usize,
}

impl GradAccumulator {
    fn new(sizes: &[usize]) -> Self {
        GradAccumulator { grads: sizes.iter().map(|&n| vec![0.0; n]).collect(), windows: 0 }
    }

    fn add_from(&mut self, tape: &Tape, vars: &[Var]) {
        for (slot, var) in vars.iter().enumerate() {
            if let Some(g) = tape.grad(*var) {
                for (dst, src) in self.grads[slot].iter_mut().zip(g) {
                    *dst += *src;
                }
            }
        }
        self.windows += 1;
    }

    fn take_mean(&mut self) -> Vec<Vec<f64>> {
        let n = self.windows.max(1) as f64;
        let out = self
            .grads
            .iter_mut()
            .map(|g| {
                let o: Vec<f64> = g.iter().map(|x| x / n).collect();
                g.iter_mut().for_each(|x| *x = 0.0);
                o
            })
            .collect();
        self.windows = 0;
        out
    }
}

fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

fn flat_rows(rows: &[Vec<f64>], from: usize, to: usize) -> Vec<f64> {
    rows[from..to].iter().flatten().copied().collect()
}

// ---- stage 1 -------------------------------------------------------------------------------

enum Stage1Target {
    Translation,
    Joints,
}

fn train_single_net(
    cfg: &TrainConfig,
    params: &mut SequenceNetParams,
    clips: &[ClipData],
    inputs_of: impl Fn(&ClipData) -> &Vec<Vec<f64>>,
    target: Stage1Target,
    losses_out: &mut Vec<f64>,
) -> Result<(), TrainError> {
    let sizes: Vec<usize> = params.params().iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(cfg, &sizes);
    let mut acc = GradAccumulator::new(&sizes);
    let mut rng = Rng::new(cfg.seed ^ 0x517A_6E01);
    let mut tape = Tape::new();
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr * libm::pow(cfg.lr_decay, epoch as f64 / cfg.epochs.max(1) as f64);
        for &ci in &shuffled_indices(clips.len(), &mut rng) {
            let clip = &clips[ci];
            let inputs = inputs_of(clip);
            let n = clip.seq.len();
            let mut state = params.zero_state();
            let mut start = 0usize;
            while start < n {
                let end = (start + cfg.window).min(n);
                let frames = end - start;
                if frames < 4 {
                    break;
                }
                tape.reset();
                let net = register_net(&mut tape, params)?;
                let x = tape.constant(
                    vec![frames, params.dims.input],
                    flat_rows(inputs, start, end),
                );
                let (out, next_state) = forward_window(&mut tape, &net, x, &state)?;
                state = next_state;
                let loss = match target {
                    Stage1Target::Translation => {
                        let t_pred = tape.slice_cols(out, 0, 3)?;
                        let dt_pred = tape.slice_cols(out, 3, 3)?;
                        let t_gt: Vec<f64> =
                            clip.sup[start..end].iter().flat_map(|s| s.t).collect();
                        let mut l = l2_loss(&mut tape, t_pred, &t_gt)?;
                        if !cfg.ablation.no_cycle && frames > 1 {
                            let dt_rows = tape.slice_rows(dt_pred, 1, frames - 1)?;
                            let t_rows = tape.slice_rows(t_pred, 1, frames - 1)?;
                            let t_prev = tape.slice_rows(t_pred, 0, frames - 1)?;
                            let dt_gt: Vec<f64> =
                                clip.sup[start + 1..end].iter().flat_map(|s| s.dt).collect();
                            let cyc = cycle_loss(&mut tape, dt_rows, t_rows, t_prev, &dt_gt)?;
                            l = tape.add(l, cyc)?;
                        } else {
                            // still anchor the velocity head
                            let dt_gt: Vec<f64> =
                                clip.sup[start..end].iter().flat_map(|s| s.dt).collect();
                            let dl = l2_loss(&mut tape, dt_pred, &dt_gt)?;
                            l = tape.add(l, dl)?;
                        }
                        l
                    }
                    Stage1Target::Joints => {
                        let j_gt: Vec<f64> =
                            clip.j_target[start..end].iter().flatten().copied().collect();
                        l2_loss(&mut tape, out, &j_gt)?
                    }
                };
                let loss = tape.scale(loss, 1.0 / frames as f64);
                losses_out.push(tape.scalar_value(loss));
                tape.backward(loss)?;
                acc.add_from(&tape, &net_vars_in_order(&net));
                if acc.windows >= cfg.batch {
                    let grads = acc.take_mean();
                    adam.apply(&mut params.params_mut(), &grads, cfg.grad_clip);
                }
                start = end;
            }
        }
    }
    if acc.windows > 0 {
        let grads = acc.take_mean();
        adam.apply(&mut params.params_mut(), &grads, cfg.grad_clip);
    }
    Ok(())
}

// ---- stage 2/3 shared fusion loss ---------------------------------------------------------

/// Per-frame constants feeding the fused losses.
struct FusedTargets<'a> {
    sup: &'a [FrameSupervision],
    pelvis: &'a [RotMat],
    beta: &'a BodyShape,
}

/// Build the combined loss over a window given tape vars holding the final
/// predictions: `phi [T,72]`, `t [T,3]`, `dt [T,3]`, `q_logits [T,2]`.
#[allow(clippy::too_many_arguments)]
fn fused_window_loss(
    tape: &mut Tape,
    tpl: &BodyTemplate,
    cfg: &TrainConfig,
    targets: &FusedTargets<'_>,
    start: usize,
    frames: usize,
    phi: Var,
    t_pred: Var,
    dt_pred: Var,
    q_logits: Var,
) -> Result<Var, TrainError> {
    let w = &cfg.weights;
    let sup = &targets.sup[start..start + frames];
    let beta_var = tape.constant(vec![NUM_SHAPE], targets.beta.0.to_vec());

    // translation terms, batched over the window
    let t_gt: Vec<f64> = sup.iter().flat_map(|s| s.t).collect();
    let loss_t = l2_loss(tape, t_pred, &t_gt)?;
    let mut loss_dt = tape.constant_scalar(0.0);
    if !cfg.ablation.no_cycle && frames > 1 {
        let dt_rows = tape.slice_rows(dt_pred, 1, frames - 1)?;
        let t_rows = tape.slice_rows(t_pred, 1, frames - 1)?;
        let t_prev = tape.slice_rows(t_pred, 0, frames - 1)?;
        let dt_gt: Vec<f64> = sup[1..].iter().flat_map(|s| s.dt).collect();
        loss_dt = cycle_loss(tape, dt_rows, t_rows, t_prev, &dt_gt)?;
    } else {
        let dt_gt: Vec<f64> = sup.iter().flat_map(|s| s.dt).collect();
        let l = l2_loss(tape, dt_pred, &dt_gt)?;
        loss_dt = tape.add(loss_dt, l)?;
    }

    // contact BCE, batched
    let q = tape.sigmoid(q_logits);
    let mut loss_q = tape.constant_scalar(0.0);
    for (i, s) in sup.iter().enumerate() {
        let row = tape.slice(q, 2 * i, vec![2])?;
        let bce = contact_bce(tape, row, &s.contacts)?;
        loss_q = tape.add(loss_q, bce)?;
    }

    // per-frame FK-coupled terms
    let mut loss_phi = tape.constant_scalar(0.0);
    let mut loss_fs = tape.constant_scalar(0.0);
    let mut loss_jk = tape.constant_scalar(0.0);
    let ankles = tpl.foot_joints;
    let mut world_hist: Vec<Var> = Vec::with_capacity(frames);
    let mut feet_hist: Vec<[Var; 2]> = Vec::with_capacity(frames);
    for i in 0..frames {
        let phi_row = tape.slice(phi, 72 * i, vec![72])?;
        let fkv = fk_tape(tape, tpl, phi_row, beta_var)?;
        let lp = rotation_fk_loss(
            tape,
            phi_row,
            &sup[i].phi,
            fkv.joints,
            &sup[i].joints,
            w.fk_balance,
        )?;
        loss_phi = tape.add(loss_phi, lp)?;

        // world-oriented joints: measured pelvis rotation times canonical FK,
        // plus the predicted translation
        let rt = targets.pelvis[start + i].transpose();
        let rt_flat: Vec<f64> = rt.to_flat().to_vec();
        let rt_const = tape.constant(vec![3, 3], rt_flat);
        let oriented = tape.matmul(fkv.joints, rt_const)?;
        let t_row = tape.slice(t_pred, 3 * i, vec![3])?;
        let world = tape.add(oriented, t_row)?;
        world_hist.push(world);
        let foot_l = tape.slice(oriented, 3 * ankles[0], vec![3])?;
        let foot_r = tape.slice(oriented, 3 * ankles[1], vec![3])?;
        feet_hist.push([foot_l, foot_r]);

        if !cfg.ablation.no_footskate && i >= 1 {
            let dt_row = tape.slice(dt_pred, 3 * i, vec![3])?;
            let fs = footskate_loss(
                tape,
                feet_hist[i],
                feet_hist[i - 1],
                dt_row,
                &sup[i].contacts,
            )?;
            loss_fs = tape.add(loss_fs, fs)?;
        }
        if !cfg.ablation.no_jerk && i >= 3 {
            let jl = jerk_loss(
                tape,
                [world_hist[i], world_hist[i - 1], world_hist[i - 2], world_hist[i - 3]],
            )?;
            loss_jk = tape.add(loss_jk, jl)?;
        }
    }

    // weighted sum, averaged over the window
    let mut total = tape.scale(loss_phi, w.phi);
    for (term, weight) in [
        (loss_t, w.t),
        (loss_dt, w.dt),
        (loss_q, w.contact),
        (loss_fs, if cfg.ablation.no_footskate { 0.0 } else { w.footskate }),
        (loss_jk, if cfg.ablation.no_jerk { 0.0 } else { w.jerk }),
    ] {
        let s = tape.scale(term, weight);
        total = tape.add(total, s)?;
    }
    Ok(tape.scale(total, 1.0 / frames as f64))
}

/// Stage-1 networks streamed over a clip: the fusion input vector plus the
/// initial translation estimates the fusion heads refine.
struct FrozenStreams {
    fusion_in: Vec<Vec<f64>>,
    t_init: Vec<[f64; 3]>,
    dt_init: Vec<[f64; 3]>,
}

fn stream_stage1(
    cfg: &TrainConfig,
    ckpts: &CheckpointSet,
    clip: &ClipData,
) -> Result<FrozenStreams, TrainError> {
    let trans = ckpts.trans.as_ref().ok_or(TrainError::StageOrder("missing trans checkpoint"))?;
    let ienet = ckpts.ienet.as_ref().ok_or(TrainError::StageOrder("missing ienet checkpoint"))?;
    let kenet = ckpts.kenet.as_ref().ok_or(TrainError::StageOrder("missing kenet checkpoint"))?;
    let mut trans_net = StreamNet::<f64>::from_params(trans);
    let mut ienet_net = StreamNet::<f64>::from_params(ienet);
    let mut kenet_net = StreamNet::<f64>::from_params(kenet);
    let pe = !cfg.ablation.no_pe;
    let beta_in: [f64; NUM_SHAPE] =
        if cfg.ablation.no_shape { [0.0; NUM_SHAPE] } else { clip.seq.beta.0 };
    let n = clip.seq.len();
    let mut fusion_in = Vec::with_capacity(n);
    let mut t_init = Vec::with_capacity(n);
    let mut dt_init = Vec::with_capacity(n);
    let mut t_out = vec![0.0; 6];
    let mut j_imu = vec![0.0; 72];
    let mut j_vis = vec![0.0; 72];
    for i in 0..n {
        trans_net.step(&clip.trans_in[i], &mut t_out)?;
        ienet_net.step(&clip.imu_in[i], &mut j_imu)?;
        kenet_net.step(&clip.kenet_in[i], &mut j_vis)?;
        let t0 = [t_out[0], t_out[1], t_out[2]];
        let dt0 = [t_out[3], t_out[4], t_out[5]];
        fusion_in.push(assemble_fusion_input(
            &j_imu,
            &j_vis,
            &clip.obs[i].conf,
            &beta_in,
            &t0,
            &dt0,
            &clip.imu_in[i],
            &cfg.workspace,
            &cfg.scales,
            pe,
        ));
        t_init.push(t0);
        dt_init.push(dt0);
    }
    Ok(FrozenStreams { fusion_in, t_init, dt_init })
}

/// FusionNet streamed over a clip (frozen): coarse outputs and the refine
/// input vector per frame.
struct FusionStreams {
    refine_in: Vec<Vec<f64>>,
    phi_c: Vec<[f64; 72]>,
    t_c: Vec<[f64; 3]>,
    dt_c: Vec<[f64; 3]>,
    q_logits_c: Vec<[f64; 2]>,
}

fn stream_fusion(
    cfg: &TrainConfig,
    ckpts: &CheckpointSet,
    clip: &ClipData,
    frozen: &FrozenStreams,
) -> Result<FusionStreams, TrainError> {
    let fusion =
        ckpts.fusion.as_ref().ok_or(TrainError::StageOrder("missing fusion checkpoint"))?;
    let mut net = StreamNet::<f64>::from_params(fusion);
    let pe = !cfg.ablation.no_pe;
    let beta_in: [f64; NUM_SHAPE] =
        if cfg.ablation.no_shape { [0.0; NUM_SHAPE] } else { clip.seq.beta.0 };
    let n = clip.seq.len();
    let mut out = vec![0.0; 80];
    let mut streams = FusionStreams {
        refine_in: Vec::with_capacity(n),
        phi_c: Vec::with_capacity(n),
        t_c: Vec::with_capacity(n),
        dt_c: Vec::with_capacity(n),
        q_logits_c: Vec::with_capacity(n),
    };
    for i in 0..n {
        net.step(&frozen.fusion_in[i], &mut out)?;
        let mut phi = [0.0; 72];
        phi.copy_from_slice(&out[..72]);
        let t = [
            frozen.t_init[i][0] + out[72],
            frozen.t_init[i][1] + out[73],
            frozen.t_init[i][2] + out[74],
        ];
        let dt = [
            frozen.dt_init[i][0] + out[75],
            frozen.dt_init[i][1] + out[76],
            frozen.dt_init[i][2] + out[77],
        ];
        let q_logits = [out[78], out[79]];
        let q = [sigmoid(q_logits[0]), sigmoid(q_logits[1])];
        streams.refine_in.push(assemble_refine_input(
            &phi,
            &t,
            &dt,
            &q,
            &beta_in,
            &cfg.workspace,
            &cfg.scales,
            pe,
        ));
        streams.phi_c.push(phi);
        streams.t_c.push(t);
        streams.dt_c.push(dt);
        streams.q_logits_c.push(q_logits);
    }
    Ok(streams)
}

// ---- staged training entry point -------------------------------------------------------------

/// Train one stage. Stage 1 fits TransNet, IENet and KENet independently;
/// stage 2 fits FusionNet with the full weighted loss against frozen
/// stage-1 streams; stage 3 fits RefineNet (residual heads) the same way.
pub fn train_stage(
    tpl: &BodyTemplate,
    cfg: &TrainConfig,
    clips: &[ClipData],
    prev: &CheckpointSet,
) -> Result<(CheckpointSet, TrainStats), TrainError> {
    let mut out = prev.clone();
    let mut stats = TrainStats::default();
    let pe = !cfg.ablation.no_pe;
    match cfg.stage {
        1 => {
            for (kind, target) in [
                (NetKind::Trans, Stage1Target::Translation),
                (NetKind::Ienet, Stage1Target::Joints),
                (NetKind::Kenet, Stage1Target::Joints),
            ] {
                let mut params = SequenceNetParams::new(
                    kind.name(),
                    kind.dims(cfg.hidden, pe),
                    cfg.seed ^ (kind as u64 + 1).wrapping_mul(0x9E37_79B9),
                );
                let mut losses = Vec::new();
                match kind {
                    NetKind::Trans => train_single_net(
                        cfg,
                        &mut params,
                        clips,
                        |c| &c.trans_in,
                        target,
                        &mut losses,
                    )?,
                    NetKind::Ienet => train_single_net(
                        cfg,
                        &mut params,
                        clips,
                        |c| &c.imu_in,
                        target,
                        &mut losses,
                    )?,
                    _ => train_single_net(
                        cfg,
                        &mut params,
                        clips,
                        |c| &c.kenet_in,
                        target,
                        &mut losses,
                    )?,
                }
                stats.series.push((String::from(kind.name()), losses));
                out.set(params);
            }
        }
        2 => {
            if out.trans.is_none() || out.ienet.is_none() || out.kenet.is_none() {
                return Err(TrainError::StageOrder("stage 2 requires stage-1 checkpoints"));
            }
            let frozen: Vec<FrozenStreams> =
                clips.iter().map(|c| stream_stage1(cfg, &out, c)).collect::<Result<_, _>>()?;
            let mut params = SequenceNetParams::new(
                NetKind::Fusion.name(),
                NetKind::Fusion.dims(cfg.hidden, pe),
                cfg.seed ^ 0xF051_0000,
            );
            let inputs: Vec<&Vec<Vec<f64>>> = frozen.iter().map(|f| &f.fusion_in).collect();
            let mut losses = Vec::new();
            train_fused(tpl, cfg, &mut params, clips, &inputs, FusedBase::Initial(&frozen), &mut losses)?;
            stats.series.push((String::from("fusion"), losses));
            out.set(params);
        }
        3 => {
            if out.fusion.is_none() {
                return Err(TrainError::StageOrder("stage 3 requires the fusion checkpoint"));
            }
            let frozen: Vec<FrozenStreams> =
                clips.iter().map(|c| stream_stage1(cfg, &out, c)).collect::<Result<_, _>>()?;
            let fusion_streams: Vec<FusionStreams> = clips
                .iter()
                .zip(&frozen)
                .map(|(c, f)| stream_fusion(cfg, &out, c, f))
                .collect::<Result<_, _>>()?;
            let mut params = SequenceNetParams::new(
                NetKind::Refine.name(),
                NetKind::Refine.dims(cfg.hidden, pe),
                cfg.seed ^ 0x5EF1_4E00,
            );
            let inputs: Vec<&Vec<Vec<f64>>> =
                fusion_streams.iter().map(|f| &f.refine_in).collect();
            let mut losses = Vec::new();
            train_fused(
                tpl,
                cfg,
                &mut params,
                clips,
                &inputs,
                FusedBase::Coarse(&fusion_streams),
                &mut losses,
            )?;
            stats.series.push((String::from("refine"), losses));
            out.set(params);
        }
        _ => return Err(TrainError::StageOrder("stage must be 1, 2 or 3")),
    }
    Ok((out, stats))
}

/// Shared trainer for FusionNet (coarse heads) and RefineNet (residual
/// heads on top of the frozen coarse stream).
enum FusedBase<'a> {
    /// FusionNet: translation heads are residuals on the stage-1 streams.
    Initial(&'a [FrozenStreams]),
    /// RefineNet: all heads are residuals on the frozen fusion stream.
    Coarse(&'a [FusionStreams]),
}

fn train_fused(
    tpl: &BodyTemplate,
    cfg: &TrainConfig,
    params: &mut SequenceNetParams,
    clips: &[ClipData],
    inputs: &[&Vec<Vec<f64>>],
    base: FusedBase<'_>,
    losses_out: &mut Vec<f64>,
) -> Result<(), TrainError> {
    let sizes: Vec<usize> = params.params().iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(cfg, &sizes);
    let mut acc = GradAccumulator::new(&sizes);
    let mut rng = Rng::new(cfg.seed ^ 0x57A6_E200 ^ cfg.stage as u64);
    let mut tape = Tape::new();
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr * libm::pow(cfg.lr_decay, epoch as f64 / cfg.epochs.max(1) as f64);
        for &ci in &shuffled_indices(clips.len(), &mut rng) {
            let clip = &clips[ci];
            let clip_inputs: &Vec<Vec<f64>> = inputs[ci];
            let n = clip.seq.len();
            let mut state = params.zero_state();
            let targets =
                FusedTargets { sup: &clip.sup, pelvis: &clip.pelvis, beta: &clip.seq.beta };
            let mut start = 0usize;
            while start < n {
                let end = (start + cfg.window).min(n);
                let frames = end - start;
                if frames < 8 {
                    break;
                }
                tape.reset();
                let net = register_net(&mut tape, params)?;
                let x = tape.constant(
                    vec![frames, params.dims.input],
                    flat_rows(clip_inputs, start, end),
                );
                let (out, next_state) = forward_window(&mut tape, &net, x, &state)?;
                state = next_state;
                let (phi, t_pred, dt_pred, q_logits) = match &base {
                    FusedBase::Coarse(streams) => {
                        // residual refinement over the frozen coarse stream
                        let s = &streams[ci];
                        let phi_c = tape.constant(
                            vec![frames, 72],
                            s.phi_c[start..end].iter().flatten().copied().collect(),
                        );
                        let t_c = tape.constant(
                            vec![frames, 3],
                            s.t_c[start..end].iter().flatten().copied().collect(),
                        );
                        let dt_c = tape.constant(
                            vec![frames, 3],
                            s.dt_c[start..end].iter().flatten().copied().collect(),
                        );
                        let q_c = tape.constant(
                            vec![frames, 2],
                            s.q_logits_c[start..end].iter().flatten().copied().collect(),
                        );
                        let phi_d = tape.slice_cols(out, 0, 72)?;
                        let t_d = tape.slice_cols(out, 72, 3)?;
                        let dt_d = tape.slice_cols(out, 75, 3)?;
                        let q_d = tape.slice_cols(out, 78, 2)?;
                        (
                            tape.add(phi_c, phi_d)?,
                            tape.add(t_c, t_d)?,
                            tape.add(dt_c, dt_d)?,
                            tape.add(q_c, q_d)?,
                        )
                    }
                    FusedBase::Initial(streams) => {
                        let s = &streams[ci];
                        let t0 = tape.constant(
                            vec![frames, 3],
                            s.t_init[start..end].iter().flatten().copied().collect(),
                        );
                        let dt0 = tape.constant(
                            vec![frames, 3],
                            s.dt_init[start..end].iter().flatten().copied().collect(),
                        );
                        let t_d = tape.slice_cols(out, 72, 3)?;
                        let dt_d = tape.slice_cols(out, 75, 3)?;
                        (
                            tape.slice_cols(out, 0, 72)?,
                            tape.add(t0, t_d)?,
                            tape.add(dt0, dt_d)?,
                            tape.slice_cols(out, 78, 2)?,
                        )
                    }
                };
                let loss = fused_window_loss(
                    &mut tape, tpl, cfg, &targets, start, frames, phi, t_pred, dt_pred, q_logits,
                )?;
                losses_out.push(tape.scalar_value(loss));
                tape.backward(loss)?;
                acc.add_from(&tape, &net_vars_in_order(&net));
                if acc.windows >= cfg.batch {
                    let grads = acc.take_mean();
                    adam.apply(&mut params.params_mut(), &grads, cfg.grad_clip);
                }
                start = end;
            }
        }
    }
    if acc.windows > 0 {
        let grads = acc.take_mean();
        adam.apply(&mut params.params_mut(), &grads, cfg.grad_clip);
    }
    Ok(())
}

// ---- evaluation -------------------------------------------------------------------------------

/// Per-clip streaming inference and scoring. `clip_index` seeds the clip's
/// observation noise, so scoring clips one at a time (or in parallel)
/// reproduces the batch path exactly. Returns the six metric values plus
/// their aggregation weights (frame counts, jerk stencils, contact events).
pub fn evaluate_clip(
    tpl: &BodyTemplate,
    ckpts: &CheckpointSet,
    cfg: &EvalConfig,
    clip_index: usize,
    seq: &MotionSequence,
    calib: &StereoCalib,
) -> Result<(MetricReport, [f64; 6]), TrainError> {
    let trans = ckpts.trans.as_ref().ok_or(TrainError::StageOrder("missing trans checkpoint"))?;
    let ienet = ckpts.ienet.as_ref().ok_or(TrainError::StageOrder("missing ienet checkpoint"))?;
    let kenet = ckpts.kenet.as_ref().ok_or(TrainError::StageOrder("missing kenet checkpoint"))?;
    let fusion =
        ckpts.fusion.as_ref().ok_or(TrainError::StageOrder("missing fusion checkpoint"))?;
    let refine = if cfg.flags.no_refine {
        None
    } else if let Some(r) = ckpts.refine.as_ref() {
        Some(r)
    } else {
        return Err(TrainError::StageOrder("missing refine checkpoint (not bypassed)"));
    };

    let pcfg = PipelineConfig {
        workspace: Workspace::default(),
        scales: InputScales::default(),
        pe: !cfg.flags.no_pe,
        canonical: !cfg.flags.no_canonical,
        use_shape_input: !cfg.flags.no_shape,
    };

    {
        let ci = clip_index;
        let (noise, mode) = cfg.mode.observation_plan(cfg.seed ^ (0xE7A1 + ci as u64 * 104729));
        let obs = frame_observations(tpl, seq, calib, &noise, mode)?;
        let mut pipe =
            Pipeline::<f64>::new(pcfg, seq.beta.0, trans, ienet, kenet, fusion, refine);
        pipe.reset();

        let n = seq.len();
        let mut pred_phi = Vec::with_capacity(n);
        let mut pred_t = Vec::with_capacity(n);
        let mut pred_contact_feet = Vec::with_capacity(n);
        let mut pred_world = Vec::with_capacity(n);
        let mut pred_joints = Vec::with_capacity(n);
        let mut pred_verts = Vec::with_capacity(n);
        for ob in &obs {
            let (est, _) = pipe.step(ob)?;
            let mut pose = [AxisAngle::default(); NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                pose[j] = AxisAngle([est.phi[3 * j], est.phi[3 * j + 1], est.phi[3 * j + 2]]);
            }
            let js = fk(tpl, &pose, &seq.beta);
            let mut world = Vec::with_capacity(NUM_JOINTS);
            for j in 0..NUM_JOINTS {
                world.push([
                    js.joints[j][0] + est.t[0],
                    js.joints[j][1] + est.t[1],
                    js.joints[j][2] + est.t[2],
                ]);
            }
            pred_contact_feet.push([
                world[tpl.foot_joints[0]],
                world[tpl.foot_joints[1]],
            ]);
            pred_world.push(world);
            pred_joints.push(js.joints);
            pred_verts.push(crate::body_model::vertices_from_joints(tpl, &js, &seq.beta));
            pred_phi.push(pose);
            pred_t.push(est.t);
        }

        let gt_phi: Vec<[AxisAngle; NUM_JOINTS]> = seq.frames.iter().map(|f| f.phi).collect();
        let gt_t: Vec<[f64; 3]> = seq.frames.iter().map(|f| f.t).collect();
        let gt_joints: Vec<[[f64; 3]; NUM_JOINTS]> = seq
            .frames
            .iter()
            .map(|f| fk(tpl, &f.phi, &seq.beta).joints)
            .collect();
        let gt_verts: Vec<Vec<[f64; 3]>> = seq
            .frames
            .iter()
            .map(|f| {
                let js = fk(tpl, &f.phi, &seq.beta);
                crate::body_model::vertices_from_joints(tpl, &js, &seq.beta)
            })
            .collect();

        let contact_count: usize = seq
            .contacts
            .iter()
            .skip(1)
            .map(|c| c[0] as usize + c[1] as usize)
            .sum();
        let (fs_v, fs_had) = fs_metric(&pred_contact_feet, &seq.contacts);
        let report = MetricReport {
            jpe_mm: jpe(&pred_joints, &gt_joints)?,
            pve_mm: pve(&pred_verts, &gt_verts)?,
            sip_deg: sip(tpl, &pred_phi, &gt_phi, &seq.beta)?,
            te_cm: te(&pred_t, &gt_t)?,
            jerk_km_s3: jerk_metric(&pred_world, seq.fps)?,
            fs_mm: fs_v,
            fs_had_contacts: fs_had,
        };
        let weights = [
            n as f64,
            n as f64,
            n as f64,
            n as f64,
            n.saturating_sub(3) as f64,
            if fs_had { contact_count as f64 } else { 0.0 },
        ];
        Ok((report, weights))
    }
}

/// Streaming inference over clips under a noise protocol, aggregated into
/// the six metrics (weighted by frame counts, jerk stencils and contact
/// events respectively).
pub fn evaluate(
    tpl: &BodyTemplate,
    ckpts: &CheckpointSet,
    cfg: &EvalConfig,
    clips: &[MotionSequence],
    calib: &StereoCalib,
) -> Result<MetricReport, TrainError> {
    let mut agg = MetricAggregate::default();
    for (ci, seq) in clips.iter().enumerate() {
        let (report, weights) = evaluate_clip(tpl, ckpts, cfg, ci, seq, calib)?;
        agg.push(&report, &weights);
    }
    Ok(agg.report())
}

/// Weighted merge of per-clip metric reports; public so callers that score
/// clips out of order (or in parallel) can reproduce [`evaluate`] exactly.
#[derive(Default)]
pub struct MetricAggregate {
    sums: [f64; 6],
    weights: [f64; 6],
}

impl MetricAggregate {
    pub fn push(&mut self, report: &MetricReport, weights: &[f64; 6]) {
        let values = [
            report.jpe_mm,
            report.pve_mm,
            report.sip_deg,
            report.te_cm,
            report.jerk_km_s3,
            report.fs_mm,
        ];
        for i in 0..6 {
            self.sums[i] += values[i] * weights[i];
            self.weights[i] += weights[i];
        }
    }

    pub fn report(&self) -> MetricReport {
        let get = |i: usize| if self.weights[i] > 0.0 { self.sums[i] / self.weights[i] } else { 0.0 };
        MetricReport {
            jpe_mm: get(0),
            pve_mm: get(1),
            sip_deg: get(2),
            te_cm: get(3),
            jerk_km_s3: get(4),
            fs_mm: get(5),
            fs_had_contacts: self.weights[5] > 0.0,
        }
    }
}


// ---- throughput benchmark ------------------------------------------------------------------

/// Steady-state frames per second of the assembled per-frame pipeline.
/// Wall-clock time comes from the injected nanosecond clock, so the core
/// stays independent of platform timers.
pub fn bench_inference<S: Real>(
    pipe: &mut Pipeline<S>,
    obs: &[FrameObservation],
    warmup: usize,
    measure: usize,
    now_ns: &mut dyn FnMut() -> u64,
) -> Result<f64, TrainError> {
    assert!(!obs.is_empty());
    pipe.reset();
    for i in 0..warmup {
        let _ = pipe.step(&obs[i % obs.len()])?;
    }
    let start = now_ns();
    for i in 0..measure {
        let _ = pipe.step(&obs[(warmup + i) % obs.len()])?;
    }
    let elapsed = now_ns().saturating_sub(start).max(1);
    Ok(measure as f64 / (elapsed as f64 * 1e-9))
}
