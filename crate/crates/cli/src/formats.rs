//! Text and binary file formats. Text files carry floats in Rust's shortest
//! round-trip notation, so write-then-read reproduces every value bit for
//! bit; checkpoints stay binary for size.

use std::fs;
use std::io::Write;
use std::path::Path;

use poser_core::body_model::{
    BodyTemplate, ANCHORS_PER_JOINT, NUM_JOINTS, NUM_KEYPOINTS, NUM_MOUNTS, NUM_SHAPE,
};
use poser_core::losses::LossWeights;
use poser_core::so3::RotMat;
use poser_core::ssm_nets::{ImuFrame, NetDims, NetKind, SequenceNetParams};
use poser_core::stereo_rig::{StereoCalib, StereoObservation};
use poser_core::synth::{MotionFrame, MotionSequence};
use poser_core::train_eval::{AblationFlags, TrainConfig};

use crate::{runtime_err, usage_err, CliError, CliResult};

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| usage_err(format!("cannot read {}: {e}", path.display())))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut f = fs::File::create(path)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(bytes)
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))
}

fn parse_f64(tok: &str, what: &str) -> CliResult<f64> {
    tok.parse::<f64>().map_err(|_| usage_err(format!("bad float `{tok}` in {what}")))
}

fn parse_usize(tok: &str, what: &str) -> CliResult<usize> {
    tok.parse::<usize>().map_err(|_| usage_err(format!("bad integer `{tok}` in {what}")))
}

/// FNV-1a of a file's bytes; manifests record these for reproducibility.
pub fn file_hash(path: &Path) -> CliResult<u64> {
    let bytes = fs::read(path)
        .map_err(|e| usage_err(format!("cannot read {}: {e}", path.display())))?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    Ok(h)
}

// ---- calibration ---------------------------------------------------------------

pub fn write_calib(calib: &StereoCalib) -> String {
    format!(
        "fx {}\nfy {}\ncx {}\ncy {}\nbaseline {}\nwidth {}\nheight {}\n",
        calib.fx, calib.fy, calib.cx, calib.cy, calib.baseline, calib.width, calib.height
    )
}

pub fn parse_calib(text: &str) -> CliResult<StereoCalib> {
    let mut c = StereoCalib::default_rig();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, val) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| usage_err(format!("bad calibration line `{line}`")))?;
        let v = parse_f64(val.trim(), "calibration")?;
        match key {
            "fx" => c.fx = v,
            "fy" => c.fy = v,
            "cx" => c.cx = v,
            "cy" => c.cy = v,
            "baseline" => c.baseline = v,
            "width" => c.width = v,
            "height" => c.height = v,
            other => return Err(usage_err(format!("unknown calibration key `{other}`"))),
        }
    }
    c.validate().map_err(|e| usage_err(format!("invalid calibration: {e}")))?;
    Ok(c)
}

pub fn load_calib(path: Option<&Path>) -> CliResult<StereoCalib> {
    match path {
        Some(p) => parse_calib(&read_to_string(p)?),
        None => Ok(StereoCalib::default_rig()),
    }
}

// ---- body template ---------------------------------------------------------------

pub fn write_template(tpl: &BodyTemplate) -> String {
    let mut out = String::from("poser-template v1\n");
    out.push_str("parents");
    for p in &tpl.parents {
        out.push_str(&format!(" {p}"));
    }
    out.push('\n');
    for (j, o) in tpl.rest_offsets.iter().enumerate() {
        out.push_str(&format!("rest_offset {j} {} {} {}\n", o[0], o[1], o[2]));
    }
    for j in 0..NUM_JOINTS {
        for axis in 0..3 {
            out.push_str(&format!("shape_dir {j} {axis}"));
            for k in 0..NUM_SHAPE {
                out.push_str(&format!(" {}", tpl.shape_dirs[j][axis][k]));
            }
            out.push('\n');
        }
    }
    for j in 0..NUM_JOINTS {
        for a in 0..ANCHORS_PER_JOINT {
            let v = tpl.vertex_anchors[j][a];
            out.push_str(&format!("anchor {j} {a} {} {} {}\n", v[0], v[1], v[2]));
        }
    }
    for (k, (j, o)) in tpl.coco_map.iter().enumerate() {
        out.push_str(&format!("coco {k} {j} {} {} {}\n", o[0], o[1], o[2]));
    }
    out.push_str(&format!("foot_joints {} {}\n", tpl.foot_joints[0], tpl.foot_joints[1]));
    out.push_str("mount_joints");
    for m in &tpl.mount_joints {
        out.push_str(&format!(" {m}"));
    }
    out.push('\n');
    out
}

pub fn parse_template(text: &str) -> CliResult<BodyTemplate> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "poser-template v1" {
        return Err(usage_err("not a poser-template v1 file"));
    }
    let mut parents = [0usize; NUM_JOINTS];
    let mut rest = [[0.0; 3]; NUM_JOINTS];
    let mut dirs = [[[0.0; NUM_SHAPE]; 3]; NUM_JOINTS];
    let mut anchors = [[[0.0; 3]; ANCHORS_PER_JOINT]; NUM_JOINTS];
    let mut coco = [(0usize, [0.0; 3]); NUM_KEYPOINTS];
    let mut foot = [0usize; 2];
    let mut mounts = [0usize; NUM_MOUNTS];
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "parents" => {
                if toks.len() != 1 + NUM_JOINTS {
                    return Err(usage_err("parents line must list 24 indices"));
                }
                for (j, t) in toks[1..].iter().enumerate() {
                    parents[j] = parse_usize(t, "parents")?;
                }
            }
            "rest_offset" => {
                let j = parse_usize(toks[1], "rest_offset")?;
                for a in 0..3 {
                    rest[j][a] = parse_f64(toks[2 + a], "rest_offset")?;
                }
            }
            "shape_dir" => {
                let j = parse_usize(toks[1], "shape_dir")?;
                let axis = parse_usize(toks[2], "shape_dir")?;
                for k in 0..NUM_SHAPE {
                    dirs[j][axis][k] = parse_f64(toks[3 + k], "shape_dir")?;
                }
            }
            "anchor" => {
                let j = parse_usize(toks[1], "anchor")?;
                let a = parse_usize(toks[2], "anchor")?;
                for x in 0..3 {
                    anchors[j][a][x] = parse_f64(toks[3 + x], "anchor")?;
                }
            }
            "coco" => {
                let k = parse_usize(toks[1], "coco")?;
                coco[k].0 = parse_usize(toks[2], "coco")?;
                for x in 0..3 {
                    coco[k].1[x] = parse_f64(toks[3 + x], "coco")?;
                }
            }
            "foot_joints" => {
                foot[0] = parse_usize(toks[1], "foot_joints")?;
                foot[1] = parse_usize(toks[2], "foot_joints")?;
            }
            "mount_joints" => {
                for (i, t) in toks[1..].iter().take(NUM_MOUNTS).enumerate() {
                    mounts[i] = parse_usize(t, "mount_joints")?;
                }
            }
            other => return Err(usage_err(format!("unknown template key `{other}`"))),
        }
    }
    BodyTemplate::from_parts(parents, rest, dirs, anchors, coco, foot, mounts)
        .map_err(|e| usage_err(format!("invalid template: {e}")))
}

pub fn load_template(path: Option<&Path>) -> CliResult<BodyTemplate> {
    match path {
        Some(p) => parse_template(&read_to_string(p)?),
        None => Ok(BodyTemplate::standard()),
    }
}

// ---- sequence files ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SeqFrame {
    pub phi: [f64; 72],
    pub t: [f64; 3],
    pub q: [bool; 2],
    pub obs: Option<(StereoObservation, ImuFrame)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    pub fps: f64,
    pub beta: [f64; NUM_SHAPE],
    pub template_checksum: u64,
    pub frames: Vec<SeqFrame>,
}

impl SequenceFile {
    pub fn from_motion(
        seq: &MotionSequence,
        checksum: u64,
        obs: Option<(&[StereoObservation], &[ImuFrame])>,
    ) -> Self {
        let frames = seq
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut phi = [0.0; 72];
                for j in 0..NUM_JOINTS {
                    phi[3 * j..3 * j + 3].copy_from_slice(&f.phi[j].0);
                }
                SeqFrame {
                    phi,
                    t: f.t,
                    q: seq.contacts[i],
                    obs: obs.map(|(s, m)| (s[i].clone(), m[i].clone())),
                }
            })
            .collect();
        SequenceFile { fps: seq.fps, beta: seq.beta.0, template_checksum: checksum, frames }
    }

    pub fn to_motion(&self) -> MotionSequence {
        let frames: Vec<MotionFrame> = self
            .frames
            .iter()
            .map(|f| {
                let mut phi = [poser_core::so3::AxisAngle::default(); NUM_JOINTS];
                for j in 0..NUM_JOINTS {
                    phi[j] =
                        poser_core::so3::AxisAngle([f.phi[3 * j], f.phi[3 * j + 1], f.phi[3 * j + 2]]);
                }
                MotionFrame { phi, t: f.t }
            })
            .collect();
        MotionSequence {
            fps: self.fps,
            frames,
            beta: poser_core::body_model::BodyShape(self.beta),
            contacts: self.frames.iter().map(|f| f.q).collect(),
        }
    }

    pub fn has_observations(&self) -> bool {
        self.frames.first().map(|f| f.obs.is_some()).unwrap_or(false)
    }
}

pub fn write_sequence(file: &SequenceFile) -> String {
    let mut out = String::from("poser-seq v1\n");
    out.push_str(&format!("fps {}\n", file.fps));
    out.push_str(&format!("frames {}\n", file.frames.len()));
    out.push_str("beta");
    for b in &file.beta {
        out.push_str(&format!(" {b}"));
    }
    out.push('\n');
    out.push_str(&format!("template_checksum 0x{:016x}\n", file.template_checksum));
    out.push_str(&format!("observations {}\n", file.has_observations() as u8));
    for f in &file.frames {
        out.push_str("frame");
        for v in &f.phi {
            out.push_str(&format!(" {v}"));
        }
        for v in &f.t {
            out.push_str(&format!(" {v}"));
        }
        out.push_str(&format!(" {} {}", f.q[0] as u8, f.q[1] as u8));
        if let Some((s, imu)) = &f.obs {
            for k in 0..NUM_KEYPOINTS {
                for v in [
                    s.p2d_l[k][0],
                    s.p2d_l[k][1],
                    s.p2d_r[k][0],
                    s.p2d_r[k][1],
                    s.p3d_l[k][0],
                    s.p3d_l[k][1],
                    s.p3d_l[k][2],
                    s.p3d_r[k][0],
                    s.p3d_r[k][1],
                    s.p3d_r[k][2],
                    s.conf_l[k],
                    s.conf_r[k],
                ] {
                    out.push_str(&format!(" {v}"));
                }
            }
            for m in 0..NUM_MOUNTS {
                for v in imu.rotations[m].to_flat() {
                    out.push_str(&format!(" {v}"));
                }
                for v in imu.accelerations[m] {
                    out.push_str(&format!(" {v}"));
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_sequence(text: &str) -> CliResult<SequenceFile> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "poser-seq v1" {
        return Err(usage_err("not a poser-seq v1 file"));
    }
    let mut fps = 60.0;
    let mut declared_frames = 0usize;
    let mut beta = [0.0; NUM_SHAPE];
    let mut checksum = 0u64;
    let mut has_obs = false;
    let mut frames = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "fps" => fps = parse_f64(toks[1], "fps")?,
            "frames" => declared_frames = parse_usize(toks[1], "frames")?,
            "beta" => {
                if toks.len() != 1 + NUM_SHAPE {
                    return Err(usage_err("beta line must list 10 floats"));
                }
                for (i, t) in toks[1..].iter().enumerate() {
                    beta[i] = parse_f64(t, "beta")?;
                }
            }
            "template_checksum" => {
                let hex = toks[1].trim_start_matches("0x");
                checksum = u64::from_str_radix(hex, 16)
                    .map_err(|_| usage_err("bad template checksum"))?;
            }
            "observations" => has_obs = toks[1] == "1",
            "frame" => {
                let vals = &toks[1..];
                let base = 72 + 3 + 2;
                let expect = if has_obs { base + NUM_KEYPOINTS * 12 + NUM_MOUNTS * 12 } else { base };
                if vals.len() != expect {
                    return Err(usage_err(format!(
                        "frame line has {} values, expected {expect}",
                        vals.len()
                    )));
                }
                let mut phi = [0.0; 72];
                for (i, t) in vals[..72].iter().enumerate() {
                    phi[i] = parse_f64(t, "frame phi")?;
                }
                let t3 = [
                    parse_f64(vals[72], "frame t")?,
                    parse_f64(vals[73], "frame t")?,
                    parse_f64(vals[74], "frame t")?,
                ];
                let q = [vals[75] == "1", vals[76] == "1"];
                let obs = if has_obs {
                    let mut s = StereoObservation::default();
                    let mut i = 77;
                    let mut next = |what: &str| -> CliResult<f64> {
                        let v = parse_f64(vals[i], what)?;
                        i += 1;
                        Ok(v)
                    };
                    for k in 0..NUM_KEYPOINTS {
                        s.p2d_l[k] = [next("p2d")?, next("p2d")?];
                        s.p2d_r[k] = [next("p2d")?, next("p2d")?];
                        s.p3d_l[k] = [next("p3d")?, next("p3d")?, next("p3d")?];
                        s.p3d_r[k] = [next("p3d")?, next("p3d")?, next("p3d")?];
                        s.conf_l[k] = next("conf")?;
                        s.conf_r[k] = next("conf")?;
                    }
                    let mut rotations = [poser_core::so3::IDENTITY; NUM_MOUNTS];
                    let mut accelerations = [[0.0; 3]; NUM_MOUNTS];
                    for m in 0..NUM_MOUNTS {
                        let mut flat = [0.0; 9];
                        for v in flat.iter_mut() {
                            *v = next("imu rot")?;
                        }
                        rotations[m] = RotMat::from_flat(&flat);
                        for a in 0..3 {
                            accelerations[m][a] = next("imu acc")?;
                        }
                    }
                    Some((s, ImuFrame { rotations, accelerations }))
                } else {
                    None
                };
                frames.push(SeqFrame { phi, t: t3, q, obs });
            }
            other => return Err(usage_err(format!("unknown sequence key `{other}`"))),
        }
    }
    if frames.len() != declared_frames {
        return Err(usage_err(format!(
            "frame count mismatch: header says {declared_frames}, found {}",
            frames.len()
        )));
    }
    Ok(SequenceFile { fps, beta, template_checksum: checksum, frames })
}

// ---- checkpoints ----------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"POSENET1";

pub fn write_checkpoint(p: &SequenceNetParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    let name = p.name.as_bytes();
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name);
    for d in [p.dims.input, p.dims.hidden, p.dims.blocks, p.dims.output] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let count: usize = p.params().iter().map(|t| t.numel()).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for t in p.params() {
        for v in &t.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> CliResult<SequenceNetParams> {
    let take = |off: usize, n: usize| -> CliResult<&[u8]> {
        bytes
            .get(off..off + n)
            .ok_or_else(|| usage_err("checkpoint file truncated"))
    };
    if take(0, 8)? != CKPT_MAGIC {
        return Err(usage_err("not a poser checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
    if version != 1 {
        return Err(usage_err(format!("unsupported checkpoint version {version}")));
    }
    let name_len = u32::from_le_bytes(take(12, 4)?.try_into().unwrap()) as usize;
    let name = core::str::from_utf8(take(16, name_len)?)
        .map_err(|_| usage_err("checkpoint name is not utf-8"))?
        .to_string();
    let mut off = 16 + name_len;
    let mut dims = [0u32; 4];
    for d in dims.iter_mut() {
        *d = u32::from_le_bytes(take(off, 4)?.try_into().unwrap());
        off += 4;
    }
    let count = u64::from_le_bytes(take(off, 8)?.try_into().unwrap()) as usize;
    off += 8;
    let dims = NetDims {
        input: dims[0] as usize,
        hidden: dims[1] as usize,
        blocks: dims[2] as usize,
        output: dims[3] as usize,
    };
    if NetKind::from_name(&name).is_none() {
        return Err(usage_err(format!("unknown network name `{name}` in checkpoint")));
    }
    let mut params = SequenceNetParams::new(&name, dims, 0);
    let expect: usize = params.params().iter().map(|t| t.numel()).sum();
    if expect != count {
        return Err(usage_err(format!(
            "checkpoint parameter count {count} does not match dims (expected {expect})"
        )));
    }
    for t in params.params_mut() {
        for v in t.data.iter_mut() {
            let bits = u64::from_le_bytes(take(off, 8)?.try_into().unwrap());
            *v = f64::from_bits(bits);
            off += 8;
        }
    }
    Ok(params)
}

/// What a checkpoint directory needs besides the five network files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub hidden: usize,
    pub flags: AblationFlags,
}

pub fn write_meta(meta: &CheckpointMeta) -> String {
    let f = &meta.flags;
    format!(
        "hidden {}\nno_shape {}\nno_pe {}\nno_refine {}\nno_jerk {}\nno_cycle {}\nno_footskate {}\nno_canonical {}\n",
        meta.hidden,
        f.no_shape as u8,
        f.no_pe as u8,
        f.no_refine as u8,
        f.no_jerk as u8,
        f.no_cycle as u8,
        f.no_footskate as u8,
        f.no_canonical as u8
    )
}

pub fn parse_meta(text: &str) -> CliResult<CheckpointMeta> {
    let mut meta = CheckpointMeta { hidden: 64, flags: AblationFlags::default() };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| usage_err(format!("bad meta line `{line}`")))?;
        let v = v.trim();
        let flag = v == "1";
        match k {
            "hidden" => meta.hidden = parse_usize(v, "meta hidden")?,
            "no_shape" => meta.flags.no_shape = flag,
            "no_pe" => meta.flags.no_pe = flag,
            "no_refine" => meta.flags.no_refine = flag,
            "no_jerk" => meta.flags.no_jerk = flag,
            "no_cycle" => meta.flags.no_cycle = flag,
            "no_footskate" => meta.flags.no_footskate = flag,
            "no_canonical" => meta.flags.no_canonical = flag,
            other => return Err(usage_err(format!("unknown meta key `{other}`"))),
        }
    }
    Ok(meta)
}

// ---- training config --------------------------------------------------------------------

/// Parse a text key-value training config over the stage defaults.
pub fn parse_train_config(text: &str, stage: u8, seed_override: Option<u64>) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::stage(stage, 64, 4, 42);
    let mut w = LossWeights::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| usage_err(format!("bad config line `{line}`")))?;
        let v = v.trim();
        match k {
            "stage" => {
                // stage may come from the command line instead
                if stage == 0 {
                    cfg.stage = parse_usize(v, "stage")? as u8;
                }
            }
            "hidden" => cfg.hidden = parse_usize(v, "hidden")?,
            "epochs" => cfg.epochs = parse_usize(v, "epochs")?,
            "window" => cfg.window = parse_usize(v, "window")?,
            "batch" => cfg.batch = parse_usize(v, "batch")?,
            "seed" => cfg.seed = parse_usize(v, "seed")? as u64,
            "lr" => cfg.lr = parse_f64(v, "lr")?,
            "lr_decay" => cfg.lr_decay = parse_f64(v, "lr_decay")?,
            "grad_clip" => cfg.grad_clip = parse_f64(v, "grad_clip")?,
            "weight_phi" => w.phi = parse_f64(v, "weight_phi")?,
            "weight_t" => w.t = parse_f64(v, "weight_t")?,
            "weight_dt" => w.dt = parse_f64(v, "weight_dt")?,
            "weight_contact" => w.contact = parse_f64(v, "weight_contact")?,
            "weight_footskate" => w.footskate = parse_f64(v, "weight_footskate")?,
            "weight_jerk" => w.jerk = parse_f64(v, "weight_jerk")?,
            "fk_balance" => w.fk_balance = parse_f64(v, "fk_balance")?,
            "ablation" => {
                for flag in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match flag {
                        "no_shape" => cfg.ablation.no_shape = true,
                        "no_pe" => cfg.ablation.no_pe = true,
                        "no_refine" => cfg.ablation.no_refine = true,
                        "no_jerk" => cfg.ablation.no_jerk = true,
                        "no_cycle" => cfg.ablation.no_cycle = true,
                        "no_footskate" => cfg.ablation.no_footskate = true,
                        "no_canonical" => cfg.ablation.no_canonical = true,
                        other => {
                            return Err(usage_err(format!("unknown ablation flag `{other}`")))
                        }
                    }
                }
            }
            other => return Err(usage_err(format!("unknown config key `{other}`"))),
        }
    }
    cfg.weights = w;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

// ---- shape record, metric report, manifest ------------------------------------------------

pub fn write_shape_record(
    beta: &[f64; NUM_SHAPE],
    rotation: &RotMat,
    translation: &[f64; 3],
    final_energy: f64,
    iterations: usize,
) -> String {
    let mut out = String::from("poser-shape v1\n");
    out.push_str("beta");
    for b in beta {
        out.push_str(&format!(" {b}"));
    }
    out.push('\n');
    out.push_str("rotation");
    for v in rotation.to_flat() {
        out.push_str(&format!(" {v}"));
    }
    out.push('\n');
    out.push_str(&format!(
        "translation {} {} {}\n",
        translation[0], translation[1], translation[2]
    ));
    out.push_str(&format!("final_energy {final_energy}\n"));
    out.push_str(&format!("iterations {iterations}\n"));
    out
}

pub fn write_report(r: &poser_core::mocap_metrics::MetricReport) -> String {
    format!(
        "jpe_mm {}\npve_mm {}\nsip_deg {}\nte_cm {}\njerk_km_s3 {}\nfs_mm {}\nfs_had_contacts {}\n",
        r.jpe_mm, r.pve_mm, r.sip_deg, r.te_cm, r.jerk_km_s3, r.fs_mm, r.fs_had_contacts as u8
    )
}

pub fn parse_report(text: &str) -> CliResult<poser_core::mocap_metrics::MetricReport> {
    let mut r = poser_core::mocap_metrics::MetricReport::default();
    for line in text.lines() {
        let Some((k, v)) = line.trim().split_once(char::is_whitespace) else { continue };
        let v = v.trim();
        match k {
            "jpe_mm" => r.jpe_mm = parse_f64(v, "report")?,
            "pve_mm" => r.pve_mm = parse_f64(v, "report")?,
            "sip_deg" => r.sip_deg = parse_f64(v, "report")?,
            "te_cm" => r.te_cm = parse_f64(v, "report")?,
            "jerk_km_s3" => r.jerk_km_s3 = parse_f64(v, "report")?,
            "fs_mm" => r.fs_mm = parse_f64(v, "report")?,
            "fs_had_contacts" => r.fs_had_contacts = v == "1",
            _ => {}
        }
    }
    Ok(r)
}

/// Everything needed to re-run a command bit-identically. No timestamps:
/// manifests themselves must be byte-reproducible.
pub struct RunManifest {
    pub command: String,
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest { command: command.to_string(), entries: Vec::new() }
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::from("poser-manifest v1\n");
        out.push_str(&format!("command {}\n", self.command));
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} {v}\n"));
        }
        out
    }
}

pub fn map_train_err(e: poser_core::train_eval::TrainError) -> CliError {
    runtime_err(format!("{e}"))
}
