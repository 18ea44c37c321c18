//! The learnable stack: a streaming state-space sequence block with a gated
//! MLP, and the five networks built from it — TransNet, IENet, KENet,
//! FusionNet and RefineNet — plus every input assembly.
//!
//! Each network exists in two equivalent forms: a tape-recorded sequence
//! forward used for training, and an allocation-free streaming step (generic
//! over `f32`/`f64`) used for inference. Both paths evaluate the same
//! expressions in the same order, so whole-sequence and frame-by-frame
//! evaluation agree to well under 1e-9.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{positional_encode, minmax_normalize, Tape, Tensor, TensorError, Var};
use crate::body_model::{NUM_JOINTS, NUM_KEYPOINTS, NUM_MOUNTS, NUM_SHAPE, TRANS_KEYPOINTS};
use crate::fmath;
use crate::rng::Rng;
use crate::so3::{exp_map, log_map, to6d, RotMat};

pub const PE_WIDTH: usize = 4;
/// Hidden width of the full-scale profile.
pub const HIDDEN_DEFAULT: usize = 256;
/// Hidden width of the desk-scale test/bench profile.
pub const HIDDEN_TEST: usize = 64;
pub const NUM_BLOCKS: usize = 2;

const PHI_DIM: usize = NUM_JOINTS * 3;

/// Floor on the per-channel decay rate exp(log_a); keeps the transition
/// factor strictly below 1 even where exp(-exp(log_a)) would round up.
const MIN_DECAY: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetError {
    #[error("pelvis IMU rotation is not orthonormal")]
    BadImuFrame,
    #[error("input length {got} does not match network input width {want}")]
    InputDim { want: usize, got: usize },
}

// ---- scalar abstraction -------------------------------------------------------

/// Minimal float abstraction so the streaming path runs in either precision.
pub trait Real:
    Copy
    + PartialOrd
    + core::ops::Add<Output = Self>
    + core::ops::Sub<Output = Self>
    + core::ops::Mul<Output = Self>
    + core::ops::Div<Output = Self>
    + core::ops::Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
}

impl Real for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        fmath::exp(self)
    }
}

impl Real for f32 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        fmath::exp_f32(self)
    }
}

fn sigmoid_s<S: Real>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn sigmoid(x: f64) -> f64 {
    sigmoid_s(x)
}

// ---- parameters ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `[out, in]` row-major.
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearParams {
    fn xavier(out: usize, inp: usize, rng: &mut Rng) -> Self {
        let limit = fmath::sqrt(6.0 / (out + inp) as f64);
        let data: Vec<f64> = (0..out * inp).map(|_| rng.range(-limit, limit)).collect();
        LinearParams {
            w: Tensor::new(vec![out, inp], data).unwrap().with_grad(),
            b: Tensor::zeros(vec![out]).with_grad(),
        }
    }

    fn zeroed(out: usize, inp: usize) -> Self {
        LinearParams {
            w: Tensor::zeros(vec![out, inp]).with_grad(),
            b: Tensor::zeros(vec![out]).with_grad(),
        }
    }
}

/// One streaming block: a diagonal linear recurrence
/// `h' = a (.) h + b (.) u` with `a = exp(-exp(log_a))` in (0,1) for
/// unconditional stability, followed by a silu-gated two-layer MLP on
/// `c (.) h' + d (.) u` with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmBlockParams {
    pub log_a: Tensor,
    pub input_mix: Tensor,
    pub state_mix: Tensor,
    pub skip_mix: Tensor,
    pub gate: LinearParams,
    pub up: LinearParams,
    pub down: LinearParams,
}

impl SsmBlockParams {
    fn new(hidden: usize, rng: &mut Rng) -> Self {
        // decay spread between a ~ 0.5 and a ~ 0.99
        let log_a: Vec<f64> = (0..hidden).map(|_| rng.range(-4.6, -0.366)).collect();
        let input_mix: Vec<f64> = log_a
            .iter()
            .map(|&la| {
                let a = fmath::exp(-fmath::exp(la));
                fmath::sqrt(1.0 - a * a)
            })
            .collect();
        let state_mix: Vec<f64> = (0..hidden).map(|_| rng.range(-1.0, 1.0)).collect();
        SsmBlockParams {
            log_a: Tensor::new(vec![hidden], log_a).unwrap().with_grad(),
            input_mix: Tensor::new(vec![hidden], input_mix).unwrap().with_grad(),
            state_mix: Tensor::new(vec![hidden], state_mix).unwrap().with_grad(),
            skip_mix: Tensor::new(vec![hidden], vec![1.0; hidden]).unwrap().with_grad(),
            gate: LinearParams::xavier(2 * hidden, hidden, rng),
            up: LinearParams::xavier(2 * hidden, hidden, rng),
            down: LinearParams::xavier(hidden, 2 * hidden, rng),
        }
    }

    /// Per-channel transition factors, always inside (0, 1).
    pub fn transition(&self) -> Vec<f64> {
        self.log_a.data.iter().map(|&la| fmath::exp(-fmath::exp(la).max(MIN_DECAY))).collect()
    }
}

/// Input projection, stacked blocks, linear output head. Heads start at
/// zero so untrained networks are deterministic (outputs exactly zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceNetParams {
    pub name: String,
    pub dims: NetDims,
    pub input: LinearParams,
    pub blocks: Vec<SsmBlockParams>,
    pub head: LinearParams,
}

impl SequenceNetParams {
    pub fn new(name: &str, dims: NetDims, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let input = LinearParams::xavier(dims.hidden, dims.input, &mut rng);
        let blocks = (0..dims.blocks).map(|_| SsmBlockParams::new(dims.hidden, &mut rng)).collect();
        let head = LinearParams::zeroed(dims.output, dims.hidden);
        SequenceNetParams { name: String::from(name), dims, input, blocks, head }
    }

    /// All parameter tensors in canonical (checkpoint) order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.input.w, &self.input.b];
        for b in &self.blocks {
            out.extend([
                &b.log_a, &b.input_mix, &b.state_mix, &b.skip_mix, &b.gate.w, &b.gate.b,
                &b.up.w, &b.up.b, &b.down.w, &b.down.b,
            ]);
        }
        out.extend([&self.head.w, &self.head.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.input.w, &mut self.input.b];
        for b in &mut self.blocks {
            out.push(&mut b.log_a);
            out.push(&mut b.input_mix);
            out.push(&mut b.state_mix);
            out.push(&mut b.skip_mix);
            out.push(&mut b.gate.w);
            out.push(&mut b.gate.b);
            out.push(&mut b.up.w);
            out.push(&mut b.up.b);
            out.push(&mut b.down.w);
            out.push(&mut b.down.b);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn zero_state(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.dims.hidden]; self.dims.blocks]
    }
}

// ---- network roles --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Trans,
    Ienet,
    Kenet,
    Fusion,
    Refine,
}

impl NetKind {
    pub const ALL: [NetKind; 5] =
        [NetKind::Trans, NetKind::Ienet, NetKind::Kenet, NetKind::Fusion, NetKind::Refine];

    pub fn name(&self) -> &'static str {
        match self {
            NetKind::Trans => "trans",
            NetKind::Ienet => "ienet",
            NetKind::Kenet => "kenet",
            NetKind::Fusion => "fusion",
            NetKind::Refine => "refine",
        }
    }

    pub fn from_name(name: &str) -> Option<NetKind> {
        NetKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Input/output widths for a hidden size and encoding mode. Disabling
    /// positional encoding replaces each 8-feature encoding with the raw
    /// scaled scalar, shrinking the inputs accordingly.
    pub fn dims(&self, hidden: usize, pe: bool) -> NetDims {
        let f = if pe { 2 * PE_WIDTH } else { 1 };
        let imu_in = NUM_MOUNTS * 3 * f + NUM_MOUNTS * 6;
        let (input, output) = match self {
            NetKind::Trans => (9 * (3 * f + 1), 6),
            NetKind::Ienet => (imu_in, PHI_DIM),
            NetKind::Kenet => (NUM_KEYPOINTS * (3 * f + 1), PHI_DIM),
            NetKind::Fusion => {
                (PHI_DIM * f + PHI_DIM * f + NUM_KEYPOINTS + NUM_SHAPE + 3 * f + 3 * f + imu_in, 80)
            }
            NetKind::Refine => (PHI_DIM + 3 * f + 3 * f + 2 + NUM_SHAPE, 80),
        };
        NetDims { input, hidden, blocks: NUM_BLOCKS, output }
    }
}

// ---- input assembly --------------------------------------------------------------

/// Axis-aligned bounds of the capture volume; network translation inputs are
/// scaled into [0,1] by this box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace { min: [-3.0, -0.5, 0.3], max: [3.0, 2.2, 7.5] }
    }
}

/// Fixed scaling ranges applied before positional encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputScales {
    /// Accelerations are scaled by 1/acc_range then mapped from [-1,1] to [0,1].
    pub acc_range: f64,
    /// Canonical joint coordinates live in +/- this many meters.
    pub joint_range: f64,
    /// Per-frame translation deltas live in +/- this many meters.
    pub dt_range: f64,
}

impl Default for InputScales {
    fn default() -> Self {
        InputScales { acc_range: 30.0, joint_range: 1.5, dt_range: 0.1 }
    }
}

/// One frame of raw IMU readings: sensor-to-world orientations and
/// sensor-frame specific forces, ordered like the body's mount joints.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuFrame {
    pub rotations: [RotMat; NUM_MOUNTS],
    pub accelerations: [[f64; 3]; NUM_MOUNTS],
}

/// Everything the pipeline ingests for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub p_c: [[f64; 3]; NUM_KEYPOINTS],
    pub p_r: [[f64; 3]; NUM_KEYPOINTS],
    pub conf: [f64; NUM_KEYPOINTS],
    pub imu: ImuFrame,
}

fn unit_scale(x: f64, lo: f64, hi: f64) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Scale into [0,1] and positionally encode (or pass raw when `pe` is off).
fn encode_scaled(out: &mut Vec<f64>, vals: &[f64], lo: &[f64], hi: &[f64], pe: bool) {
    debug_assert_eq!(vals.len() % lo.len(), 0);
    let scaled: Vec<f64> = vals
        .iter()
        .enumerate()
        .map(|(i, &v)| unit_scale(v, lo[i % lo.len()], hi[i % hi.len()]))
        .collect();
    if pe {
        out.extend(positional_encode(&scaled, PE_WIDTH));
    } else {
        out.extend(scaled);
    }
}

/// TransNet input: the 9 trunk/head keypoints, world coordinates scaled to
/// [0,1] by the workspace box, positionally encoded (width 4) and
/// interleaved with their fused confidences.
pub fn assemble_trans_input(
    p_c: &[[f64; 3]; NUM_KEYPOINTS],
    conf: &[f64; NUM_KEYPOINTS],
    ws: &Workspace,
    pe: bool,
) -> Vec<f64> {
    let f = if pe { 2 * PE_WIDTH } else { 1 };
    let mut out = Vec::with_capacity(9 * (3 * f + 1));
    for &k in TRANS_KEYPOINTS.iter() {
        encode_scaled(&mut out, &p_c[k], &ws.min, &ws.max, pe);
        out.push(conf[k]);
    }
    out
}

/// IENet input: all six readings rotated into the pelvis sensor frame
/// (its own entry becomes the identity), accelerations scaled and encoded,
/// rotations as 6D vectors.
pub fn assemble_imu_input(
    frame: &ImuFrame,
    scales: &InputScales,
    pe: bool,
) -> Result<Vec<f64>, NetError> {
    let pelvis = &frame.rotations[0];
    if pelvis.orthonormality_defect() > 1e-3 {
        return Err(NetError::BadImuFrame);
    }
    let inv = pelvis.transpose();
    let f = if pe { 2 * PE_WIDTH } else { 1 };
    let mut out = Vec::with_capacity(NUM_MOUNTS * 3 * f + NUM_MOUNTS * 6);
    let r = scales.acc_range;
    for i in 0..NUM_MOUNTS {
        let world = frame.rotations[i].apply(&frame.accelerations[i]);
        let root = inv.apply(&world);
        encode_scaled(&mut out, &root, &[-r, -r, -r], &[r, r, r], pe);
    }
    for i in 0..NUM_MOUNTS {
        let rel = inv.matmul(&frame.rotations[i]);
        out.extend(to6d(&rel).0);
    }
    Ok(out)
}

/// KENet input: root-relative keypoints normalized per frame to [0,1] by
/// their own min/max (the canonical-space design), positionally encoded,
/// interleaved with confidences. With `canonical` off the raw coordinates
/// are scaled by the fixed joint range instead.
pub fn assemble_kenet_input(
    p_r: &[[f64; 3]; NUM_KEYPOINTS],
    conf: &[f64; NUM_KEYPOINTS],
    scales: &InputScales,
    pe: bool,
    canonical: bool,
) -> Vec<f64> {
    let f = if pe { 2 * PE_WIDTH } else { 1 };
    let mut out = Vec::with_capacity(NUM_KEYPOINTS * (3 * f + 1));
    if canonical {
        let (norm, _) = minmax_normalize(p_r);
        for k in 0..NUM_KEYPOINTS {
            if pe {
                out.extend(positional_encode(&norm[k], PE_WIDTH));
            } else {
                out.extend(norm[k]);
            }
            out.push(conf[k]);
        }
    } else {
        let r = scales.joint_range;
        for k in 0..NUM_KEYPOINTS {
            encode_scaled(&mut out, &p_r[k], &[-r, -r, -r], &[r, r, r], pe);
            out.push(conf[k]);
        }
    }
    out
}

/// FusionNet input: encoded canonical joints from both modalities, fused
/// confidences, body shape, encoded initial translation and velocity, and
/// the assembled IMU vector.
#[allow(clippy::too_many_arguments)]
pub fn assemble_fusion_input(
    j_imu: &[f64],
    j_vis: &[f64],
    conf: &[f64; NUM_KEYPOINTS],
    beta: &[f64; NUM_SHAPE],
    t: &[f64; 3],
    dt: &[f64; 3],
    imu_input: &[f64],
    ws: &Workspace,
    scales: &InputScales,
    pe: bool,
) -> Vec<f64> {
    let jr = scales.joint_range;
    let dr = scales.dt_range;
    let mut out = Vec::new();
    encode_scaled(&mut out, j_imu, &[-jr], &[jr], pe);
    encode_scaled(&mut out, j_vis, &[-jr], &[jr], pe);
    out.extend_from_slice(conf);
    out.extend_from_slice(beta);
    encode_scaled(&mut out, t, &ws.min, &ws.max, pe);
    encode_scaled(&mut out, dt, &[-dr], &[dr], pe);
    out.extend_from_slice(imu_input);
    out
}

/// RefineNet input: the coarse fused estimate plus the body shape.
pub fn assemble_refine_input(
    phi: &[f64],
    t: &[f64; 3],
    dt: &[f64; 3],
    q: &[f64; 2],
    beta: &[f64; NUM_SHAPE],
    ws: &Workspace,
    scales: &InputScales,
    pe: bool,
) -> Vec<f64> {
    let dr = scales.dt_range;
    let mut out = Vec::with_capacity(PHI_DIM + 2 * 3 * 8 + 2 + NUM_SHAPE);
    out.extend_from_slice(phi);
    encode_scaled(&mut out, t, &ws.min, &ws.max, pe);
    encode_scaled(&mut out, dt, &[-dr], &[dr], pe);
    out.extend_from_slice(q);
    out.extend_from_slice(beta);
    out
}

// ---- tape (training) forward -------------------------------------------------------

pub struct TapeBlock {
    pub log_a: Var,
    pub input_mix: Var,
    pub state_mix: Var,
    pub skip_mix: Var,
    pub gate_w: Var,
    pub gate_b: Var,
    pub up_w: Var,
    pub up_b: Var,
    pub down_w: Var,
    pub down_b: Var,
    a: Var,
    gate_wt: Var,
    up_wt: Var,
    down_wt: Var,
}

pub struct TapeNet {
    pub input_w: Var,
    pub input_b: Var,
    pub blocks: Vec<TapeBlock>,
    pub head_w: Var,
    pub head_b: Var,
    input_wt: Var,
    head_wt: Var,
    hidden: usize,
}

/// Register a network's parameters as tape leaves (gradients flow into
/// them) and precompute the derived per-channel transitions.
pub fn register_net(tape: &mut Tape, p: &SequenceNetParams) -> Result<TapeNet, TensorError> {
    let input_w = tape.leaf(&p.input.w);
    let input_b = tape.leaf(&p.input.b);
    let input_wt = tape.transpose(input_w)?;
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let log_a = tape.leaf(&b.log_a);
        let e = tape.exp(log_a);
        let e = tape.clamp(e, MIN_DECAY, f64::INFINITY);
        let ne = tape.neg(e);
        let a = tape.exp(ne);
        let gate_w = tape.leaf(&b.gate.w);
        let up_w = tape.leaf(&b.up.w);
        let down_w = tape.leaf(&b.down.w);
        blocks.push(TapeBlock {
            log_a,
            input_mix: tape.leaf(&b.input_mix),
            state_mix: tape.leaf(&b.state_mix),
            skip_mix: tape.leaf(&b.skip_mix),
            gate_w,
            gate_b: tape.leaf(&b.gate.b),
            up_w,
            up_b: tape.leaf(&b.up.b),
            down_w,
            down_b: tape.leaf(&b.down.b),
            a,
            gate_wt: tape.transpose(gate_w)?,
            up_wt: tape.transpose(up_w)?,
            down_wt: tape.transpose(down_w)?,
        });
    }
    let head_w = tape.leaf(&p.head.w);
    let head_b = tape.leaf(&p.head.b);
    let head_wt = tape.transpose(head_w)?;
    Ok(TapeNet {
        input_w,
        input_b,
        blocks,
        head_w,
        head_b,
        input_wt,
        head_wt,
        hidden: p.dims.hidden,
    })
}

/// Parameter vars in the same canonical order as
/// [`SequenceNetParams::params_mut`], for gradient extraction.
pub fn net_vars_in_order(net: &TapeNet) -> Vec<Var> {
    let mut out = vec![net.input_w, net.input_b];
    for b in &net.blocks {
        out.extend([
            b.log_a, b.input_mix, b.state_mix, b.skip_mix, b.gate_w, b.gate_b, b.up_w, b.up_b,
            b.down_w, b.down_b,
        ]);
    }
    out.extend([net.head_w, net.head_b]);
    out
}

/// Whole-window forward: `x` is `[T, input]`, returns `[T, output]` and the
/// final recurrent state per block (detached), which seeds the next window
/// of truncated backpropagation through time.
pub fn forward_window(
    tape: &mut Tape,
    net: &TapeNet,
    x: Var,
    state0: &[Vec<f64>],
) -> Result<(Var, Vec<Vec<f64>>), TensorError> {
    let frames = tape.shape(x)[0];
    let h_dim = net.hidden;
    let proj = tape.matmul(x, net.input_wt)?;
    let mut u = tape.add(proj, net.input_b)?;
    let mut final_states = Vec::with_capacity(net.blocks.len());
    for (l, blk) in net.blocks.iter().enumerate() {
        let mut h = tape.constant(vec![h_dim], state0[l].clone());
        let mut mixed = Vec::with_capacity(frames);
        for t in 0..frames {
            let u_t = tape.slice(u, t * h_dim, vec![h_dim])?;
            let ah = tape.mul(blk.a, h)?;
            let bu = tape.mul(blk.input_mix, u_t)?;
            let h_next = tape.add(ah, bu)?;
            let ch = tape.mul(blk.state_mix, h_next)?;
            let du = tape.mul(blk.skip_mix, u_t)?;
            let m_t = tape.add(ch, du)?;
            mixed.push(m_t);
            h = h_next;
        }
        final_states.push(tape.value(h).to_vec());
        let m = tape.concat(&mixed, vec![frames, h_dim])?;
        let gate_lin = tape.matmul(m, blk.gate_wt)?;
        let gate_aff = tape.add(gate_lin, blk.gate_b)?;
        let g = tape.silu(gate_aff);
        let up_lin = tape.matmul(m, blk.up_wt)?;
        let up_aff = tape.add(up_lin, blk.up_b)?;
        let hid = tape.mul(g, up_aff)?;
        let down_lin = tape.matmul(hid, blk.down_wt)?;
        let down_aff = tape.add(down_lin, blk.down_b)?;
        u = tape.add(down_aff, u)?;
    }
    let head_lin = tape.matmul(u, net.head_wt)?;
    let out = tape.add(head_lin, net.head_b)?;
    Ok((out, final_states))
}

// ---- streaming (inference) forward ---------------------------------------------------

struct StreamBlock<S> {
    a: Vec<S>,
    input_mix: Vec<S>,
    state_mix: Vec<S>,
    skip_mix: Vec<S>,
    gate_w: Vec<S>,
    gate_b: Vec<S>,
    up_w: Vec<S>,
    up_b: Vec<S>,
    down_w: Vec<S>,
    down_b: Vec<S>,
    state: Vec<S>,
}

/// Allocation-free streaming evaluator; O(hidden) state per block.
pub struct StreamNet<S: Real> {
    pub dims: NetDims,
    input_w: Vec<S>,
    input_b: Vec<S>,
    blocks: Vec<StreamBlock<S>>,
    head_w: Vec<S>,
    head_b: Vec<S>,
    buf_u: Vec<S>,
    buf_h: Vec<S>,
    buf_m: Vec<S>,
    buf_g: Vec<S>,
    buf_up: Vec<S>,
}

fn cast<S: Real>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&x| S::from_f64(x)).collect()
}

impl<S: Real> StreamNet<S> {
    pub fn from_params(p: &SequenceNetParams) -> Self {
        let h = p.dims.hidden;
        let blocks = p
            .blocks
            .iter()
            .map(|b| StreamBlock {
                a: cast(&b.transition()),
                input_mix: cast(&b.input_mix.data),
                state_mix: cast(&b.state_mix.data),
                skip_mix: cast(&b.skip_mix.data),
                gate_w: cast(&b.gate.w.data),
                gate_b: cast(&b.gate.b.data),
                up_w: cast(&b.up.w.data),
                up_b: cast(&b.up.b.data),
                down_w: cast(&b.down.w.data),
                down_b: cast(&b.down.b.data),
                state: vec![S::zero(); h],
            })
            .collect();
        StreamNet {
            dims: p.dims,
            input_w: cast(&p.input.w.data),
            input_b: cast(&p.input.b.data),
            blocks,
            head_w: cast(&p.head.w.data),
            head_b: cast(&p.head.b.data),
            buf_u: vec![S::zero(); h],
            buf_h: vec![S::zero(); h],
            buf_m: vec![S::zero(); h],
            buf_g: vec![S::zero(); 2 * h],
            buf_up: vec![S::zero(); 2 * h],
        }
    }

    pub fn reset_state(&mut self) {
        for b in &mut self.blocks {
            b.state.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    pub fn set_state(&mut self, state: &[Vec<f64>]) {
        for (b, s) in self.blocks.iter_mut().zip(state) {
            b.state = cast(s);
        }
    }

    /// One frame in, one frame out.
    pub fn step(&mut self, x: &[S], out: &mut [S]) -> Result<(), NetError> {
        if x.len() != self.dims.input {
            return Err(NetError::InputDim { want: self.dims.input, got: x.len() });
        }
        let h = self.dims.hidden;
        matvec(&self.input_w, x, &mut self.buf_u);
        for (v, b) in self.buf_u.iter_mut().zip(&self.input_b) {
            *v = *v + *b;
        }
        for blk in &mut self.blocks {
            for i in 0..h {
                self.buf_h[i] = blk.a[i] * blk.state[i] + blk.input_mix[i] * self.buf_u[i];
            }
            blk.state.copy_from_slice(&self.buf_h);
            for i in 0..h {
                self.buf_m[i] = blk.state_mix[i] * self.buf_h[i] + blk.skip_mix[i] * self.buf_u[i];
            }
            matvec(&blk.gate_w, &self.buf_m, &mut self.buf_g);
            matvec(&blk.up_w, &self.buf_m, &mut self.buf_up);
            for i in 0..2 * h {
                let pre = self.buf_g[i] + blk.gate_b[i];
                let g = pre * sigmoid_s(pre);
                self.buf_g[i] = g * (self.buf_up[i] + blk.up_b[i]);
            }
            matvec(&blk.down_w, &self.buf_g, &mut self.buf_h);
            for i in 0..h {
                self.buf_u[i] = (self.buf_h[i] + blk.down_b[i]) + self.buf_u[i];
            }
        }
        matvec(&self.head_w, &self.buf_u, out);
        for (v, b) in out.iter_mut().zip(&self.head_b) {
            *v = *v + *b;
        }
        Ok(())
    }
}

fn matvec<S: Real>(w: &[S], x: &[S], out: &mut [S]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = S::zero();
        for (wv, xv) in row.iter().zip(x) {
            s = s + *wv * *xv;
        }
        *o = s;
    }
}

// ---- the assembled per-frame pipeline -----------------------------------------------

/// Final per-frame network output. `phi` is the composed pose: the root
/// entry already folds in the measured pelvis orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub phi: [f64; PHI_DIM],
    pub t: [f64; 3],
    pub dt: [f64; 3],
    pub q: [f64; 2],
}

/// Intermediate per-frame signals, exposed for staged training and
/// ablation evaluation.
#[derive(Debug, Clone)]
pub struct StepIntermediates {
    pub t_init: [f64; 3],
    pub dt_init: [f64; 3],
    pub j_imu: Vec<f64>,
    pub j_vis: Vec<f64>,
    /// FusionNet outputs before refinement (q already through sigmoid).
    pub fused: PoseEstimate,
    pub fusion_q_logits: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub workspace: Workspace,
    pub scales: InputScales,
    pub pe: bool,
    pub canonical: bool,
    /// When false the networks see beta = 0 (shape-unaware ablation).
    pub use_shape_input: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workspace: Workspace::default(),
            scales: InputScales::default(),
            pe: true,
            canonical: true,
            use_shape_input: true,
        }
    }
}

/// Streaming end-to-end estimator: assembly + TransNet/IENet/KENet +
/// FusionNet (+ optional RefineNet as a residual).
pub struct Pipeline<S: Real> {
    pub cfg: PipelineConfig,
    beta: [f64; NUM_SHAPE],
    trans: StreamNet<S>,
    ienet: StreamNet<S>,
    kenet: StreamNet<S>,
    fusion: StreamNet<S>,
    refine: Option<StreamNet<S>>,
    scratch_in: Vec<S>,
    scratch_out: Vec<S>,
}

impl<S: Real> Pipeline<S> {
    pub fn new(
        cfg: PipelineConfig,
        beta: [f64; NUM_SHAPE],
        trans: &SequenceNetParams,
        ienet: &SequenceNetParams,
        kenet: &SequenceNetParams,
        fusion: &SequenceNetParams,
        refine: Option<&SequenceNetParams>,
    ) -> Self {
        Pipeline {
            cfg,
            beta,
            trans: StreamNet::from_params(trans),
            ienet: StreamNet::from_params(ienet),
            kenet: StreamNet::from_params(kenet),
            fusion: StreamNet::from_params(fusion),
            refine: refine.map(StreamNet::from_params),
            scratch_in: Vec::new(),
            scratch_out: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.trans.reset_state();
        self.ienet.reset_state();
        self.kenet.reset_state();
        self.fusion.reset_state();
        if let Some(r) = &mut self.refine {
            r.reset_state();
        }
    }

    fn run_net(
        scratch_in: &mut Vec<S>,
        scratch_out: &mut Vec<S>,
        net: &mut StreamNet<S>,
        input: &[f64],
    ) -> Result<Vec<f64>, NetError> {
        scratch_in.clear();
        scratch_in.extend(input.iter().map(|&x| S::from_f64(x)));
        scratch_out.clear();
        scratch_out.resize(net.dims.output, S::zero());
        net.step(scratch_in, scratch_out)?;
        Ok(scratch_out.iter().map(|v| v.to_f64()).collect())
    }

    /// Full forward pass for one frame.
    pub fn step(
        &mut self,
        obs: &FrameObservation,
    ) -> Result<(PoseEstimate, StepIntermediates), NetError> {
        let cfg = &self.cfg;
        let beta_in: [f64; NUM_SHAPE] =
            if cfg.use_shape_input { self.beta } else { [0.0; NUM_SHAPE] };

        let trans_in = assemble_trans_input(&obs.p_c, &obs.conf, &cfg.workspace, cfg.pe);
        let trans_out =
            Self::run_net(&mut self.scratch_in, &mut self.scratch_out, &mut self.trans, &trans_in)?;
        let t_init = [trans_out[0], trans_out[1], trans_out[2]];
        let dt_init = [trans_out[3], trans_out[4], trans_out[5]];

        let imu_in = assemble_imu_input(&obs.imu, &cfg.scales, cfg.pe)?;
        let j_imu =
            Self::run_net(&mut self.scratch_in, &mut self.scratch_out, &mut self.ienet, &imu_in)?;

        let kenet_in =
            assemble_kenet_input(&obs.p_r, &obs.conf, &cfg.scales, cfg.pe, cfg.canonical);
        let j_vis =
            Self::run_net(&mut self.scratch_in, &mut self.scratch_out, &mut self.kenet, &kenet_in)?;

        let fusion_in = assemble_fusion_input(
            &j_imu,
            &j_vis,
            &obs.conf,
            &beta_in,
            &t_init,
            &dt_init,
            &imu_in,
            &cfg.workspace,
            &cfg.scales,
            cfg.pe,
        );
        let fusion_out = Self::run_net(
            &mut self.scratch_in,
            &mut self.scratch_out,
            &mut self.fusion,
            &fusion_in,
        )?;
        let mut phi = [0.0; PHI_DIM];
        phi.copy_from_slice(&fusion_out[..PHI_DIM]);
        // the fusion translation heads refine the initial estimates
        let t_c = [
            t_init[0] + fusion_out[72],
            t_init[1] + fusion_out[73],
            t_init[2] + fusion_out[74],
        ];
        let dt_c = [
            dt_init[0] + fusion_out[75],
            dt_init[1] + fusion_out[76],
            dt_init[2] + fusion_out[77],
        ];
        let q_logits_c = [fusion_out[78], fusion_out[79]];
        let q_c = [sigmoid(q_logits_c[0]), sigmoid(q_logits_c[1])];
        let fused = PoseEstimate {
            phi: compose_root(&phi, &obs.imu.rotations[0]),
            t: t_c,
            dt: dt_c,
            q: q_c,
        };

        let (final_phi_net, t_f, dt_f, q_logits_f) = if let Some(refine) = &mut self.refine {
            let refine_in = assemble_refine_input(
                &phi,
                &t_c,
                &dt_c,
                &q_c,
                &beta_in,
                &cfg.workspace,
                &cfg.scales,
                cfg.pe,
            );
            let r =
                Self::run_net(&mut self.scratch_in, &mut self.scratch_out, refine, &refine_in)?;
            let mut phi_f = [0.0; PHI_DIM];
            for i in 0..PHI_DIM {
                phi_f[i] = phi[i] + r[i];
            }
            (
                phi_f,
                [t_c[0] + r[72], t_c[1] + r[73], t_c[2] + r[74]],
                [dt_c[0] + r[75], dt_c[1] + r[76], dt_c[2] + r[77]],
                [q_logits_c[0] + r[78], q_logits_c[1] + r[79]],
            )
        } else {
            (phi, t_c, dt_c, q_logits_c)
        };

        let estimate = PoseEstimate {
            phi: compose_root(&final_phi_net, &obs.imu.rotations[0]),
            t: t_f,
            dt: dt_f,
            q: [sigmoid(q_logits_f[0]), sigmoid(q_logits_f[1])],
        };
        let inter = StepIntermediates { t_init, dt_init, j_imu, j_vis, fused, fusion_q_logits: q_logits_c };
        Ok((estimate, inter))
    }
}

/// The networks predict pose in the pelvis-IMU-relative canonical frame;
/// the global root orientation is recovered by composing the measured
/// pelvis rotation with the predicted canonical correction.
pub fn compose_root(phi_net: &[f64; PHI_DIM], pelvis: &RotMat) -> [f64; PHI_DIM] {
    let mut out = *phi_net;
    let corr = exp_map(&crate::so3::AxisAngle([phi_net[0], phi_net[1], phi_net[2]]));
    let composed = pelvis.matmul(&corr);
    let aa = log_map(&composed);
    out[0] = aa.0[0];
    out[1] = aa.0[1];
    out[2] = aa.0[2];
    out
}

/// Inverse of [`compose_root`] on the ground-truth side: the canonical root
/// correction the networks are supervised toward.
pub fn canonical_root(phi_gt_root: &[f64; 3], pelvis_measured: &RotMat) -> [f64; 3] {
    let gt = exp_map(&crate::so3::AxisAngle(*phi_gt_root));
    let rel = pelvis_measured.transpose().matmul(&gt);
    log_map(&rel).0
}
