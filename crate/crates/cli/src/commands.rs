//! Implementations behind the `poser` subcommands. Every command with the
//! same inputs and seeds produces byte-identical outputs; manifests record
//! the hashes needed to re-run a result.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use poser_core::body_model::{BodyShape, BodyTemplate, NUM_SHAPE, TEMPLATE_SEED};
use poser_core::rng::Rng;
use poser_core::shape_fit::{self, FitOptions, FitProblem, FitWeights};
use poser_core::ssm_nets::{
    FrameObservation, NetKind, Pipeline, PipelineConfig, SequenceNetParams,
};
use poser_core::stereo_rig::{reconstruct_world, StereoCalib};
use poser_core::synth::{
    frame_observations, generate_motion, imu_frames, stereo_observations, MotionKind,
    NoiseSpec, ObservationMode,
};
use poser_core::train_eval::{
    bench_inference, evaluate, train_stage, CheckpointSet, EvalConfig, NoiseMode,
};

use crate::formats::{
    self, load_calib, load_template, map_train_err, parse_checkpoint, parse_meta,
    parse_sequence, parse_train_config, read_to_string, write_atomic, write_checkpoint,
    write_meta, write_report, write_sequence, write_shape_record, write_template,
    CheckpointMeta, RunManifest, SequenceFile,
};
use crate::{runtime_err, usage_err, CliResult};

/// POSER_SEED overrides any --seed argument.
pub fn effective_seed(arg_seed: u64) -> u64 {
    match std::env::var("POSER_SEED") {
        Ok(v) => v.parse().unwrap_or(arg_seed),
        Err(_) => arg_seed,
    }
}

/// POSER_THREADS caps worker threads for clip-parallel evaluation.
pub fn effective_threads() -> usize {
    std::env::var("POSER_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(1).max(1)
}

pub fn parse_beta(spec: Option<&str>, beta_seed: Option<u64>) -> CliResult<BodyShape> {
    if let Some(csv) = spec {
        let vals: Vec<f64> = csv
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage_err("--beta expects 10 comma-separated floats"))?;
        if vals.len() != NUM_SHAPE {
            return Err(usage_err("--beta expects exactly 10 values"));
        }
        let mut b = [0.0; NUM_SHAPE];
        b.copy_from_slice(&vals);
        return Ok(BodyShape(b));
    }
    if let Some(seed) = beta_seed {
        return Ok(sample_beta(seed, 1.5));
    }
    Ok(BodyShape::default())
}

/// Uniform sample from the shape ball of the given radius.
pub fn sample_beta(seed: u64, radius: f64) -> BodyShape {
    let mut rng = Rng::new(seed ^ 0xBE7A_5EED);
    let mut b = [0.0; NUM_SHAPE];
    loop {
        let mut n2 = 0.0;
        for v in &mut b {
            *v = rng.range(-1.0, 1.0);
            n2 += *v * *v;
        }
        if n2 <= 1.0 && n2 > 1e-6 {
            let scale = radius * rng.uniform();
            let n = n2.sqrt();
            for v in &mut b {
                *v *= scale / n;
            }
            return BodyShape(b);
        }
    }
}

// ---- synth -----------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    kind: &str,
    duration: f64,
    seed: u64,
    beta: BodyShape,
    noise: NoiseSpec,
    calib_path: Option<&Path>,
    template_path: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let kind = MotionKind::parse(kind).map_err(|e| usage_err(e.to_string()))?;
    let tpl = load_template(template_path)?;
    let calib = load_calib(calib_path)?;
    let seed = effective_seed(seed);
    let seq = generate_motion(kind, duration, &beta, seed, &tpl)
        .map_err(|e| usage_err(e.to_string()))?;
    let stereo = stereo_observations(&tpl, &seq, &calib, &noise);
    let imu = imu_frames(&tpl, &seq, &noise).map_err(|e| runtime_err(e.to_string()))?;
    let file = SequenceFile::from_motion(&seq, tpl.checksum(), Some((&stereo, &imu)));
    write_atomic(out, write_sequence(&file).as_bytes())?;
    println!(
        "wrote {}: {} frames at {} fps, contact ratio {:.3}",
        out.display(),
        seq.len(),
        seq.fps,
        seq.contact_ratio()
    );
    Ok(())
}

// ---- synth-tpose ------------------------------------------------------------------

/// Export the shape-fitting inputs: a surface point cloud around the
/// subject standing in T-pose, plus a short still sequence with stereo/IMU
/// observation blocks whose first frame serves as the T-pose detection.
pub fn cmd_synth_tpose(
    seed: u64,
    beta: BodyShape,
    noise: NoiseSpec,
    calib_path: Option<&Path>,
    template_path: Option<&Path>,
    out: &Path,
    cloud_out: Option<&Path>,
) -> CliResult<()> {
    let tpl = load_template(template_path)?;
    let calib = load_calib(calib_path)?;
    let seed = effective_seed(seed);
    let noise = NoiseSpec { seed: noise.seed ^ seed, ..noise };

    // still T-pose clip, facing the camera
    let yaw = core::f64::consts::PI;
    let root = poser_core::so3::RotMat::rot_y(yaw);
    let mut phi = [poser_core::so3::AxisAngle::default(); poser_core::body_model::NUM_JOINTS];
    phi[0] = poser_core::so3::log_map(&root);
    let t = [0.0, tpl.standing_root_height(&beta), 2.5];
    let frames = vec![poser_core::synth::MotionFrame { phi, t }; 60];
    let contacts = poser_core::synth::label_contacts(&tpl, &frames, &beta);
    let seq = poser_core::synth::MotionSequence { fps: poser_core::synth::FPS, frames, beta, contacts };

    let stereo = stereo_observations(&tpl, &seq, &calib, &noise);
    let imu = imu_frames(&tpl, &seq, &noise).map_err(|e| runtime_err(e.to_string()))?;
    let file = SequenceFile::from_motion(&seq, tpl.checksum(), Some((&stereo, &imu)));
    write_atomic(out, write_sequence(&file).as_bytes())?;

    if let Some(cloud_path) = cloud_out {
        let (cloud, _) = poser_core::synth::tpose_cloud(&tpl, &beta, &noise);
        let mut text = String::new();
        for p in &cloud {
            text.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
        }
        write_atomic(cloud_path, text.as_bytes())?;
        println!("wrote {} ({} points)", cloud_path.display(), cloud.len());
    }
    println!("wrote {} ({} still frames)", out.display(), file.frames.len());
    Ok(())
}

// ---- gen-template -----------------------------------------------------------------

pub fn cmd_gen_template(seed: Option<String>, out: &Path) -> CliResult<()> {
    let seed = match seed {
        Some(s) => {
            let s = s.trim();
            if let Some(hex) = s.strip_prefix("0x") {
                u64::from_str_radix(hex, 16).map_err(|_| usage_err("bad --seed hex value"))?
            } else {
                s.parse::<u64>().map_err(|_| usage_err("bad --seed value"))?
            }
        }
        None => TEMPLATE_SEED,
    };
    let tpl = BodyTemplate::generate(seed);
    write_atomic(out, write_template(&tpl).as_bytes())?;
    println!("wrote {} (checksum 0x{:016x})", out.display(), tpl.checksum());
    Ok(())
}

// ---- fit-shape --------------------------------------------------------------------

pub fn parse_xyz_cloud(text: &str) -> CliResult<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(usage_err(format!("cloud line {} needs x y z", i + 1)));
        }
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = toks[a]
                .parse::<f64>()
                .map_err(|_| usage_err(format!("bad float on cloud line {}", i + 1)))?;
        }
        out.push(p);
    }
    Ok(out)
}

pub fn cmd_fit_shape(
    sequence: &Path,
    cloud_path: Option<&Path>,
    calib_path: Option<&Path>,
    template_path: Option<&Path>,
    iterations: usize,
    out: &Path,
) -> CliResult<()> {
    let tpl = load_template(template_path)?;
    let calib = load_calib(calib_path)?;
    let file = parse_sequence(&read_to_string(sequence)?)?;
    if file.template_checksum != tpl.checksum() {
        return Err(usage_err("sequence was synthesized against a different body template"));
    }
    let first = file
        .frames
        .first()
        .ok_or_else(|| usage_err("sequence has no frames"))?;
    let Some((stereo, _)) = &first.obs else {
        return Err(usage_err("sequence carries no observations (need a T-pose detection)"));
    };
    let skeleton = reconstruct_world(&calib, stereo).p_c;

    let cloud = match cloud_path {
        Some(p) => {
            let raw = parse_xyz_cloud(&read_to_string(p)?);
            let raw = raw?;
            shape_fit::voxel_downsample(&raw, 4000).map_err(|e| runtime_err(e.to_string()))?
        }
        None => Vec::new(),
    };
    let cloud_given = !cloud.is_empty();
    let problem = FitProblem::new(cloud, skeleton, FitWeights::default());
    let opts = FitOptions { iterations, ..FitOptions::default() };
    let result =
        shape_fit::solve(&tpl, &problem, &opts).map_err(|e| runtime_err(format!("{e}")))?;
    let final_energy = result.trace.last().copied().unwrap_or(f64::NAN);
    write_atomic(
        out,
        write_shape_record(
            &result.beta.0,
            &result.rotation,
            &result.translation,
            final_energy,
            result.trace.len(),
        )
        .as_bytes(),
    )?;
    println!(
        "fit {} iterations, final energy {:.6e}, chamfer {}",
        result.trace.len(),
        final_energy,
        if cloud_given { "on" } else { "off (skeleton only)" }
    );
    println!("beta {:?}", result.beta.0);
    Ok(())
}

// ---- checkpoint directory helpers ----------------------------------------------------

pub fn save_checkpoints(dir: &Path, ckpts: &CheckpointSet, meta: &CheckpointMeta) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", dir.display())))?;
    for kind in NetKind::ALL {
        if let Some(p) = ckpts.get(kind) {
            write_atomic(&dir.join(format!("{}.ckpt", kind.name())), &write_checkpoint(p))?;
        }
    }
    write_atomic(&dir.join("meta.txt"), write_meta(meta).as_bytes())
}

pub fn load_checkpoints(dir: &Path) -> CliResult<(CheckpointSet, CheckpointMeta)> {
    let meta_path = dir.join("meta.txt");
    let meta = if meta_path.exists() {
        parse_meta(&read_to_string(&meta_path)?)?
    } else {
        CheckpointMeta { hidden: 64, flags: Default::default() }
    };
    let mut set = CheckpointSet::default();
    for kind in NetKind::ALL {
        let path = dir.join(format!("{}.ckpt", kind.name()));
        if path.exists() {
            let bytes = fs::read(&path)
                .map_err(|e| usage_err(format!("cannot read {}: {e}", path.display())))?;
            let params = parse_checkpoint(&bytes)?;
            if params.name != kind.name() {
                return Err(usage_err(format!(
                    "{} holds a checkpoint named {}",
                    path.display(),
                    params.name
                )));
            }
            set.set(params);
        }
    }
    Ok((set, meta))
}

/// Data directory listing, sorted by file name for determinism.
pub fn list_sequences(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir)
        .map_err(|e| usage_err(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| runtime_err(e.to_string()))?;
        let path = entry.path();
        if path.extension().map(|e| e == "seq").unwrap_or(false) {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(usage_err(format!("no .seq files in {}", dir.display())));
    }
    Ok(out)
}

fn load_dataset(
    paths: &[PathBuf],
    tpl: &BodyTemplate,
    calib: &StereoCalib,
    need_obs: bool,
) -> CliResult<Vec<(SequenceFile, Vec<FrameObservation>)>> {
    let checksum = tpl.checksum();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let file = parse_sequence(&read_to_string(p)?)?;
        if file.template_checksum != checksum {
            return Err(usage_err(format!(
                "{} was synthesized against a different body template",
                p.display()
            )));
        }
        let mut obs = Vec::with_capacity(file.frames.len());
        if need_obs {
            if !file.has_observations() {
                return Err(usage_err(format!("{} carries no observations", p.display())));
            }
            for f in &file.frames {
                let (stereo, imu) = f.obs.as_ref().unwrap();
                let rec = reconstruct_world(calib, stereo);
                obs.push(FrameObservation {
                    p_c: rec.p_c,
                    p_r: rec.p_r,
                    conf: rec.conf_c,
                    imu: imu.clone(),
                });
            }
        }
        out.push((file, obs));
    }
    Ok(out)
}

// ---- train -----------------------------------------------------------------------------

pub fn cmd_train(
    config_path: &Path,
    data_dir: &Path,
    out_dir: &Path,
    stage_arg: Option<String>,
    template_path: Option<&Path>,
    calib_path: Option<&Path>,
) -> CliResult<()> {
    let tpl = load_template(template_path)?;
    let calib = load_calib(calib_path)?;
    let config_text = read_to_string(config_path)?;
    let seed_override = std::env::var("POSER_SEED").ok().and_then(|v| v.parse().ok());

    let stages: Vec<u8> = match stage_arg.as_deref() {
        None | Some("all") => vec![1, 2, 3],
        Some(s) => {
            let n: u8 = s.parse().map_err(|_| usage_err("--stage must be 1, 2, 3 or all"))?;
            if !(1..=3).contains(&n) {
                return Err(usage_err("--stage must be 1, 2, 3 or all"));
            }
            vec![n]
        }
    };

    let paths = list_sequences(data_dir)?;
    let dataset = load_dataset(&paths, &tpl, &calib, true)?;

    let (mut ckpts, _) = if out_dir.exists() {
        load_checkpoints(out_dir)?
    } else {
        (CheckpointSet::default(), CheckpointMeta { hidden: 64, flags: Default::default() })
    };

    let mut manifest = RunManifest::new("train");
    manifest.push("config", config_path.display());
    manifest.push("config_hash", format!("0x{:016x}", formats::file_hash(config_path)?));
    for p in &paths {
        manifest.push("data_hash", format!("{} 0x{:016x}", p.display(), formats::file_hash(p)?));
    }

    let mut cfg = parse_train_config(&config_text, stages[0], seed_override)?;
    manifest.push("seed", cfg.seed);
    let meta = CheckpointMeta { hidden: cfg.hidden, flags: cfg.ablation };

    // prepared clips are identical across stages for a fixed config
    let clips = {
        let pairs: Vec<(poser_core::synth::MotionSequence, Vec<FrameObservation>)> =
            dataset.iter().map(|(f, o)| (f.to_motion(), o.clone())).collect();
        let mut out = Vec::with_capacity(pairs.len());
        for (seq, obs) in pairs {
            out.push(
                poser_core::train_eval::prepare_clip(&tpl, &cfg, seq, obs)
                    .map_err(map_train_err)?,
            );
        }
        out
    };

    for &stage in &stages {
        cfg.stage = stage;
        let (next, stats) = train_stage(&tpl, &cfg, &clips, &ckpts).map_err(map_train_err)?;
        ckpts = next;
        for (name, losses) in &stats.series {
            let first = losses.first().copied().unwrap_or(f64::NAN);
            let last = losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "stage {stage} {name}: {} steps, loss {first:.4} -> {last:.4}",
                losses.len()
            );
            manifest.push(&format!("stage{stage}_{name}_final_loss"), last);
        }
    }

    save_checkpoints(out_dir, &ckpts, &meta)?;
    for kind in NetKind::ALL {
        let p = out_dir.join(format!("{}.ckpt", kind.name()));
        if p.exists() {
            manifest.push(
                "checkpoint_hash",
                format!("{} 0x{:016x}", kind.name(), formats::file_hash(&p)?),
            );
        }
    }
    write_atomic(&out_dir.join("manifest.txt"), manifest.render().as_bytes())?;
    println!("checkpoints written to {}", out_dir.display());
    Ok(())
}

// ---- eval ------------------------------------------------------------------------------

pub fn cmd_eval(
    ckpt_dir: &Path,
    data_dir: &Path,
    mode: &str,
    seed: u64,
    out: Option<&Path>,
    template_path: Option<&Path>,
    calib_path: Option<&Path>,
) -> CliResult<()> {
    let tpl = load_template(template_path)?;
    let calib = load_calib(calib_path)?;
    let mode = NoiseMode::parse(mode)
        .ok_or_else(|| usage_err("--noise must be ideal, sigma5, sigma15 or stereo"))?;
    let seed = effective_seed(seed);
    let (ckpts, meta) = load_checkpoints(ckpt_dir)?;
    let paths = list_sequences(data_dir)?;
    let dataset = load_dataset(&paths, &tpl, &calib, false)?;
    let clips: Vec<poser_core::synth::MotionSequence> =
        dataset.iter().map(|(f, _)| f.to_motion()).collect();

    let eval_cfg = EvalConfig { mode, seed, flags: meta.flags };
    let threads = effective_threads().min(clips.len().max(1));
    let report = if threads <= 1 {
        evaluate(&tpl, &ckpts, &eval_cfg, &clips, &calib).map_err(map_train_err)?
    } else {
        evaluate_parallel(&tpl, &ckpts, &eval_cfg, &clips, &calib, threads)?
    };

    let text = write_report(&report);
    print!("{text}");
    if let Some(out) = out {
        write_atomic(out, text.as_bytes())?;
        let mut manifest = RunManifest::new("eval");
        manifest.push("checkpoints", ckpt_dir.display());
        manifest.push("noise", mode.name());
        manifest.push("seed", seed);
        manifest.push("threads", threads);
        for p in &paths {
            manifest
                .push("data_hash", format!("{} 0x{:016x}", p.display(), formats::file_hash(p)?));
        }
        manifest.push("report_hash", format!("0x{:016x}", formats::file_hash(out)?));
        write_atomic(&out.with_extension("manifest.txt"), manifest.render().as_bytes())?;
    }
    Ok(())
}

/// Clip-parallel evaluation: clips are scored on worker threads through
/// the same per-clip entry point the sequential path uses, then merged with
/// the same weights, so the result matches `evaluate` up to summation order.
fn evaluate_parallel(
    tpl: &BodyTemplate,
    ckpts: &CheckpointSet,
    cfg: &EvalConfig,
    clips: &[poser_core::synth::MotionSequence],
    calib: &StereoCalib,
    threads: usize,
) -> CliResult<poser_core::mocap_metrics::MetricReport> {
    use poser_core::train_eval::{evaluate_clip, MetricAggregate};
    let chunk_size = clips.len().div_ceil(threads);
    let partials: Vec<_> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..threads {
            let lo = (w * chunk_size).min(clips.len());
            let hi = ((w + 1) * chunk_size).min(clips.len());
            if lo >= hi {
                continue;
            }
            let chunk = &clips[lo..hi];
            handles.push(scope.spawn(move || {
                let mut out = Vec::with_capacity(chunk.len());
                for (k, clip) in chunk.iter().enumerate() {
                    out.push(evaluate_clip(tpl, ckpts, cfg, lo + k, clip, calib));
                }
                out
            }));
        }
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap_or_default())
            .collect()
    });
    let mut agg = MetricAggregate::default();
    for partial in partials {
        let (report, weights) = partial.map_err(map_train_err)?;
        agg.push(&report, &weights);
    }
    Ok(agg.report())
}

// ---- infer -----------------------------------------------------------------------------

pub fn cmd_infer(
    input: &Path,
    ckpt_dir: &Path,
    out: &Path,
    template_path: Option<&Path>,
    calib_path: Option<&Path>,
) -> CliResult<()> {
    let tpl = load_template(template_path)?;
    let calib = load_calib(calib_path)?;
    let (ckpts, meta) = load_checkpoints(ckpt_dir)?;
    let file = parse_sequence(&read_to_string(input)?)?;
    if file.template_checksum != tpl.checksum() {
        return Err(usage_err("sequence was synthesized against a different body template"));
    }
    if !file.has_observations() {
        return Err(usage_err("input sequence carries no observation blocks"));
    }
    let trans = ckpts.trans.as_ref().ok_or_else(|| usage_err("missing trans checkpoint"))?;
    let ienet = ckpts.ienet.as_ref().ok_or_else(|| usage_err("missing ienet checkpoint"))?;
    let kenet = ckpts.kenet.as_ref().ok_or_else(|| usage_err("missing kenet checkpoint"))?;
    let fusion = ckpts.fusion.as_ref().ok_or_else(|| usage_err("missing fusion checkpoint"))?;
    let refine = if meta.flags.no_refine { None } else { ckpts.refine.as_ref() };

    let pcfg = PipelineConfig {
        pe: !meta.flags.no_pe,
        canonical: !meta.flags.no_canonical,
        use_shape_input: !meta.flags.no_shape,
        ..PipelineConfig::default()
    };
    let mut pipe = Pipeline::<f64>::new(pcfg, file.beta, trans, ienet, kenet, fusion, refine);
    pipe.reset();

    let mut pred = SequenceFile {
        fps: file.fps,
        beta: file.beta,
        template_checksum: file.template_checksum,
        frames: Vec::with_capacity(file.frames.len()),
    };
    for f in &file.frames {
        let (stereo, imu) = f.obs.as_ref().unwrap();
        let rec = reconstruct_world(&calib, stereo);
        let obs = FrameObservation {
            p_c: rec.p_c,
            p_r: rec.p_r,
            conf: rec.conf_c,
            imu: imu.clone(),
        };
        let (est, _) = pipe.step(&obs).map_err(|e| runtime_err(e.to_string()))?;
        pred.frames.push(crate::formats::SeqFrame {
            phi: est.phi,
            t: est.t,
            q: [est.q[0] > 0.5, est.q[1] > 0.5],
            obs: None,
        });
    }
    write_atomic(out, write_sequence(&pred).as_bytes())?;
    println!("inferred {} frames -> {}", pred.frames.len(), out.display());
    Ok(())
}

// ---- bench -----------------------------------------------------------------------------

pub fn cmd_bench(
    ckpt_dir: Option<&Path>,
    hidden: usize,
    frames: usize,
    template_path: Option<&Path>,
) -> CliResult<()> {
    let tpl = load_template(template_path)?;
    let calib = StereoCalib::default_rig();
    let (trans, ienet, kenet, fusion, refine, pcfg) = match ckpt_dir {
        Some(dir) => {
            let (ckpts, meta) = load_checkpoints(dir)?;
            let pcfg = PipelineConfig {
                pe: !meta.flags.no_pe,
                canonical: !meta.flags.no_canonical,
                use_shape_input: !meta.flags.no_shape,
                ..PipelineConfig::default()
            };
            (
                ckpts.trans.ok_or_else(|| usage_err("missing trans checkpoint"))?,
                ckpts.ienet.ok_or_else(|| usage_err("missing ienet checkpoint"))?,
                ckpts.kenet.ok_or_else(|| usage_err("missing kenet checkpoint"))?,
                ckpts.fusion.ok_or_else(|| usage_err("missing fusion checkpoint"))?,
                ckpts.refine,
                pcfg,
            )
        }
        None => (
            SequenceNetParams::new("trans", NetKind::Trans.dims(hidden, true), 11),
            SequenceNetParams::new("ienet", NetKind::Ienet.dims(hidden, true), 12),
            SequenceNetParams::new("kenet", NetKind::Kenet.dims(hidden, true), 13),
            SequenceNetParams::new("fusion", NetKind::Fusion.dims(hidden, true), 14),
            Some(SequenceNetParams::new("refine", NetKind::Refine.dims(hidden, true), 15)),
            PipelineConfig::default(),
        ),
    };
    let mut pipe = Pipeline::<f32>::new(
        pcfg,
        [0.0; NUM_SHAPE],
        &trans,
        &ienet,
        &kenet,
        &fusion,
        refine.as_ref(),
    );
    let seq = generate_motion(MotionKind::WalkCircle, 4.0, &BodyShape::default(), 77, &tpl)
        .map_err(|e| runtime_err(e.to_string()))?;
    let obs = frame_observations(&tpl, &seq, &calib, &NoiseSpec::ideal(1), ObservationMode::Stereo)
        .map_err(|e| runtime_err(e.to_string()))?;
    let start = Instant::now();
    let mut clock = move || start.elapsed().as_nanos() as u64;
    let fps = bench_inference(&mut pipe, &obs, 120, frames, &mut clock)
        .map_err(map_train_err)?;
    println!("throughput_fps {fps:.1}");
    println!("target_200fps {}", if fps > 200.0 { "PASS" } else { "FAIL" });
    Ok(())
}

