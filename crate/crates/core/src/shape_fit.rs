//! Body-shape estimation from a T-pose observation: voxel downsampling, a
//! four-term energy (skeleton alignment, Chamfer distance, pose and shape
//! priors) and an SGD-with-momentum solver over shape, pose and the rigid
//! alignment between model and camera frames.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, TensorError, Var};
use crate::body_model::{
    fk_tape, regress_coco_tape, vertices_tape, AxisAngle, BodyShape, BodyTemplate, NUM_JOINTS,
    NUM_KEYPOINTS, NUM_SHAPE,
};
use crate::fmath;
use crate::so3::{from6d, from6d_tape, to6d, RotMat};

// AxisAngle/fk re-exported into body_model's namespace via so3; keep the
// direct path for clarity.
use crate::so3 as rot;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FitError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("fit diverged (energy {0})")]
    FitDiverged(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Energy weights; the Chamfer weight is forced to zero when no cloud is
/// available (skeleton-only fitting).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWeights {
    pub skel: f64,
    pub cd: f64,
    pub phi: f64,
    pub beta: f64,
}

impl Default for FitWeights {
    fn default() -> Self {
        FitWeights { skel: 1.0, cd: 15.0, phi: 1.0, beta: 0.01 }
    }
}

/// Observed data plus weights. Construction canonicalizes the cloud order,
/// so the energy value is bitwise independent of input permutation.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub cloud: Vec<[f64; 3]>,
    pub skeleton: [[f64; 3]; NUM_KEYPOINTS],
    pub weights: FitWeights,
}

impl FitProblem {
    pub fn new(
        mut cloud: Vec<[f64; 3]>,
        skeleton: [[f64; 3]; NUM_KEYPOINTS],
        mut weights: FitWeights,
    ) -> Self {
        sort_canonical(&mut cloud);
        if cloud.is_empty() {
            weights.cd = 0.0;
        }
        FitProblem { cloud, skeleton, weights }
    }
}

/// Solver configuration. Learning rates come in three groups: one for
/// translation and pose, a faster one for the shape coefficients (whose
/// gradients are centimeters per unit and would otherwise stall), and a
/// slower one for the 6D-parameterized rotation.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub iterations: usize,
    pub lr: f64,
    pub lr_beta: f64,
    pub lr_rot: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; bounds the momentum transient when the
    /// initial alignment is far off.
    pub grad_clip: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iterations: 500,
            lr: 1e-2,
            lr_beta: 2.0,
            lr_rot: 1e-3,
            momentum: 0.9,
            grad_clip: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: BodyShape,
    pub phi: [AxisAngle; NUM_JOINTS],
    pub rotation: RotMat,
    pub translation: [f64; 3],
    /// Energy before each update, one entry per iteration.
    pub trace: Vec<f64>,
}

fn sort_canonical(cloud: &mut [[f64; 3]]) {
    cloud.sort_unstable_by(|a, b| {
        a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
    });
}

// ---- voxel downsampling ----------------------------------------------------------

/// Voxel-grid downsampling to roughly `target` points: the edge length is
/// bisected until the number of occupied voxels lands within
/// `[3 target / 4, 5 target / 4]`, then one centroid per voxel is emitted.
/// Clouds that cannot reach the band (too few distinct points) come back
/// whole, with exact duplicates collapsed.
pub fn voxel_downsample(cloud: &[[f64; 3]], target: usize) -> Result<Vec<[f64; 3]>, FitError> {
    if cloud.is_empty() {
        return Err(FitError::EmptyCloud);
    }
    let mut sorted = cloud.to_vec();
    sort_canonical(&mut sorted);
    let lo_n = target * 3 / 4;
    let hi_n = target * 5 / 4;

    let (mut min, mut max) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in &sorted {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let diag = fmath::sqrt(
        (max[0] - min[0]) * (max[0] - min[0])
            + (max[1] - min[1]) * (max[1] - min[1])
            + (max[2] - min[2]) * (max[2] - min[2]),
    );
    let tiny = 1e-7;
    let centroids_at = |edge: f64| -> Vec<[f64; 3]> {
        let mut grid: BTreeMap<(i64, i64, i64), ([f64; 3], usize)> = BTreeMap::new();
        for p in &sorted {
            let key = (
                fmath::floor((p[0] - min[0]) / edge) as i64,
                fmath::floor((p[1] - min[1]) / edge) as i64,
                fmath::floor((p[2] - min[2]) / edge) as i64,
            );
            let e = grid.entry(key).or_insert(([0.0; 3], 0));
            for a in 0..3 {
                e.0[a] += p[a];
            }
            e.1 += 1;
        }
        grid.values()
            .map(|(sum, n)| [sum[0] / *n as f64, sum[1] / *n as f64, sum[2] / *n as f64])
            .collect()
    };

    // the finest grid collapses only exact duplicates
    let finest = centroids_at(tiny);
    if finest.len() <= hi_n {
        return Ok(finest);
    }
    let (mut lo, mut hi) = (tiny, diag.max(tiny * 2.0));
    let mut best = finest;
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        let cand = centroids_at(mid);
        if cand.len() > hi_n {
            lo = mid; // too many voxels: coarsen
        } else if cand.len() < lo_n {
            hi = mid; // too few: refine
        } else {
            return Ok(cand);
        }
        best = cand;
    }
    Ok(best)
}

// ---- exact grid-accelerated nearest neighbor ---------------------------------------

/// Uniform-grid index over a fixed point set; queries are exact nearest
/// neighbors found by expanding cell shells.
pub struct GridNn {
    points: Vec<[f64; 3]>,
    cell: f64,
    origin: [f64; 3],
    cells_max: [i64; 3],
    buckets: BTreeMap<(i64, i64, i64), Vec<u32>>,
}

impl GridNn {
    pub fn build(points: &[[f64; 3]]) -> Result<Self, FitError> {
        if points.is_empty() {
            return Err(FitError::EmptyCloud);
        }
        let (mut min, mut max) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let diag2: f64 = (0..3).map(|a| (max[a] - min[a]) * (max[a] - min[a])).sum();
        let diag = fmath::sqrt(diag2);
        let cell = (diag / libm::cbrt(points.len() as f64).max(1.0)).max(1e-3);
        let mut buckets: BTreeMap<(i64, i64, i64), Vec<u32>> = BTreeMap::new();
        let key_of = |p: &[f64; 3]| {
            (
                fmath::floor((p[0] - min[0]) / cell) as i64,
                fmath::floor((p[1] - min[1]) / cell) as i64,
                fmath::floor((p[2] - min[2]) / cell) as i64,
            )
        };
        let mut cells_max = [0i64; 3];
        for (i, p) in points.iter().enumerate() {
            let key = key_of(p);
            cells_max[0] = cells_max[0].max(key.0);
            cells_max[1] = cells_max[1].max(key.1);
            cells_max[2] = cells_max[2].max(key.2);
            buckets.entry(key).or_default().push(i as u32);
        }
        Ok(GridNn { points: points.to_vec(), cell, origin: min, cells_max, buckets })
    }

    /// Index and squared distance of the exact nearest point.
    pub fn nearest(&self, q: &[f64; 3]) -> (usize, f64) {
        let cq = [
            fmath::floor((q[0] - self.origin[0]) / self.cell) as i64,
            fmath::floor((q[1] - self.origin[1]) / self.cell) as i64,
            fmath::floor((q[2] - self.origin[2]) / self.cell) as i64,
        ];
        // occupied cells live in [0, cells_max]; shells below the
        // query-to-box Chebyshev distance are empty, shells beyond the far
        // corner are too
        let mut start_ring = 0i64;
        let mut max_ring = 0i64;
        for a in 0..3 {
            start_ring = start_ring.max(-cq[a]).max(cq[a] - self.cells_max[a]);
            max_ring = max_ring.max(cq[a].abs()).max((self.cells_max[a] - cq[a]).abs());
        }
        let mut best = (usize::MAX, f64::INFINITY);
        for ring in start_ring..=max_ring {
            // every point in shells >= ring is at least (ring-1)*cell away
            if best.1.is_finite() {
                let lower = (ring - 1).max(0) as f64 * self.cell;
                if lower * lower > best.1 {
                    break;
                }
            }
            self.scan_shell(&cq, ring, q, &mut best);
        }
        debug_assert!(best.0 != usize::MAX);
        best
    }

    fn scan_shell(&self, c: &[i64; 3], ring: i64, q: &[f64; 3], best: &mut (usize, f64)) {
        let mut visit = |key: (i64, i64, i64)| {
            if let Some(ids) = self.buckets.get(&key) {
                for &i in ids {
                    let p = &self.points[i as usize];
                    let d2 = (p[0] - q[0]) * (p[0] - q[0])
                        + (p[1] - q[1]) * (p[1] - q[1])
                        + (p[2] - q[2]) * (p[2] - q[2]);
                    if d2 < best.1 {
                        *best = (i as usize, d2);
                    }
                }
            }
        };
        // iterate the shell clipped to the occupied box
        let clip =
            |a: usize| ((-ring).max(-c[a]), ring.min(self.cells_max[a] - c[a]));
        let (x0, x1) = clip(0);
        let (y0, y1) = clip(1);
        let (z0, z1) = clip(2);
        for dx in x0..=x1 {
            for dy in y0..=y1 {
                for dz in z0..=z1 {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    visit((c[0] + dx, c[1] + dy, c[2] + dz));
                }
            }
        }
    }
}

// ---- chamfer distance ----------------------------------------------------------------

/// Symmetric mean-of-minimum squared distances between two point sets.
pub fn chamfer(p: &[[f64; 3]], v: &[[f64; 3]]) -> Result<f64, FitError> {
    Ok(chamfer_with_grad(p, v)?.0)
}

/// Chamfer value plus its gradient with respect to the second set (the
/// model vertices). Nearest neighbors are fixed at evaluation, so the
/// gradient is the standard envelope form.
pub fn chamfer_with_grad(p: &[[f64; 3]], v: &[[f64; 3]]) -> Result<(f64, Vec<f64>), FitError> {
    if p.is_empty() || v.is_empty() {
        return Err(FitError::EmptyCloud);
    }
    let grid_v = GridNn::build(v)?;
    let grid_p = GridNn::build(p)?;
    let np = p.len() as f64;
    let nv = v.len() as f64;
    let mut grad = vec![0.0; v.len() * 3];
    let mut term_p = 0.0;
    for q in p {
        let (j, d2) = grid_v.nearest(q);
        term_p += d2;
        for a in 0..3 {
            grad[3 * j + a] += 2.0 * (v[j][a] - q[a]) / np;
        }
    }
    let mut term_v = 0.0;
    for (i, q) in v.iter().enumerate() {
        let (j, d2) = grid_p.nearest(q);
        term_v += d2;
        for a in 0..3 {
            grad[3 * i + a] += 2.0 * (q[a] - p[j][a]) / nv;
        }
    }
    Ok((term_p / np + term_v / nv, grad))
}

/// Record the Chamfer distance to a fixed cloud as a tape op over the
/// vertex tensor `[N,3]`.
pub fn chamfer_tape(tape: &mut Tape, verts: Var, cloud: &[[f64; 3]]) -> Result<Var, FitError> {
    let flat = tape.value(verts);
    let v: Vec<[f64; 3]> =
        flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let (value, grad) = chamfer_with_grad(cloud, &v)?;
    Ok(tape.custom_with_jacobian(verts, vec![1], vec![value], grad)?)
}

// ---- energy and solver ------------------------------------------------------------------

/// Tape-recorded composite energy:
/// `w_skel |J - M(J_hat)|^2 + w_cd chamfer(P, M(V)) + w_phi |phi|^2 + w_beta |beta|^2`.
pub fn energy_tape(
    tape: &mut Tape,
    tpl: &BodyTemplate,
    problem: &FitProblem,
    beta: Var,
    phi: Var,
    rot6: Var,
    t: Var,
) -> Result<Var, FitError> {
    let w = &problem.weights;
    let fkv = fk_tape(tape, tpl, phi, beta)?;
    let r = from6d_tape(tape, rot6)?;
    let rt = tape.transpose(r)?;

    let kp = regress_coco_tape(tape, tpl, &fkv)?;
    let kp_rot = tape.matmul(kp, rt)?;
    let kp_world = tape.add(kp_rot, t)?;
    let skel_flat: Vec<f64> = problem.skeleton.iter().flatten().copied().collect();
    let skel = tape.constant(vec![NUM_KEYPOINTS, 3], skel_flat);
    let diff = tape.sub(kp_world, skel)?;
    let e_skel = tape.sum_squares(diff);
    let mut total = tape.scale(e_skel, w.skel);

    if w.cd > 0.0 && !problem.cloud.is_empty() {
        let verts = vertices_tape(tape, tpl, &fkv, beta)?;
        let verts_rot = tape.matmul(verts, rt)?;
        let verts_world = tape.add(verts_rot, t)?;
        let e_cd = chamfer_tape(tape, verts_world, &problem.cloud)?;
        let scaled = tape.scale(e_cd, w.cd);
        total = tape.add(total, scaled)?;
    }

    let e_phi = tape.sum_squares(phi);
    let e_phi = tape.scale(e_phi, w.phi);
    total = tape.add(total, e_phi)?;
    let e_beta = tape.sum_squares(beta);
    let e_beta = tape.scale(e_beta, w.beta);
    Ok(tape.add(total, e_beta)?)
}

/// Energy value at a point (no gradients kept).
pub fn energy(
    tpl: &BodyTemplate,
    problem: &FitProblem,
    beta: &[f64; NUM_SHAPE],
    phi: &[f64; 72],
    rotation: &RotMat,
    translation: &[f64; 3],
) -> Result<f64, FitError> {
    let mut tape = Tape::new();
    let b = tape.constant(vec![NUM_SHAPE], beta.to_vec());
    let p = tape.constant(vec![72], phi.to_vec());
    let r6 = tape.constant(vec![6], to6d(rotation).0.to_vec());
    let t = tape.constant(vec![3], translation.to_vec());
    let e = energy_tape(&mut tape, tpl, problem, b, p, r6, t)?;
    Ok(tape.scalar_value(e))
}

const DIVERGENCE_ENERGY: f64 = 1e6;

/// Initial alignment: translation at the observed mid-hip; rotation taking
/// the template's shoulder axis (+x) and up direction (+y) onto the
/// observed shoulder and hip-to-shoulder axes. Aligning a full frame avoids
/// the antipodal degeneracy a single-axis alignment has when the subject
/// faces the camera.
fn initial_alignment(skeleton: &[[f64; 3]; NUM_KEYPOINTS]) -> (RotMat, [f64; 3]) {
    use crate::body_model::{KP_L_HIP, KP_L_SHOULDER, KP_R_HIP, KP_R_SHOULDER};
    let mid = |a: &[f64; 3], b: &[f64; 3]| {
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
    };
    let mid_hip = mid(&skeleton[KP_L_HIP], &skeleton[KP_R_HIP]);
    let mid_shoulder = mid(&skeleton[KP_L_SHOULDER], &skeleton[KP_R_SHOULDER]);
    let mut x = [
        skeleton[KP_L_SHOULDER][0] - skeleton[KP_R_SHOULDER][0],
        skeleton[KP_L_SHOULDER][1] - skeleton[KP_R_SHOULDER][1],
        skeleton[KP_L_SHOULDER][2] - skeleton[KP_R_SHOULDER][2],
    ];
    let nx = fmath::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    if nx < 1e-9 {
        return (rot::IDENTITY, mid_hip);
    }
    for v in x.iter_mut() {
        *v /= nx;
    }
    let up_raw = [
        mid_shoulder[0] - mid_hip[0],
        mid_shoulder[1] - mid_hip[1],
        mid_shoulder[2] - mid_hip[2],
    ];
    let d = up_raw[0] * x[0] + up_raw[1] * x[1] + up_raw[2] * x[2];
    let mut y = [up_raw[0] - d * x[0], up_raw[1] - d * x[1], up_raw[2] - d * x[2]];
    let ny = fmath::sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
    if ny < 1e-9 {
        y = [0.0, 1.0, 0.0];
    } else {
        for v in y.iter_mut() {
            *v /= ny;
        }
    }
    let z = rot::cross3(&x, &y);
    let r = RotMat([
        [x[0], y[0], z[0]],
        [x[1], y[1], z[1]],
        [x[2], y[2], z[2]],
    ]);
    (r, mid_hip)
}

/// SGD with momentum over (beta, phi, M). The rotation component descends
/// through the 6D parameterization for continuity.
pub fn solve(
    tpl: &BodyTemplate,
    problem: &FitProblem,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let (r0, t0) = initial_alignment(&problem.skeleton);
    let mut beta = vec![0.0; NUM_SHAPE];
    let mut phi = vec![0.0; 72];
    let mut r6 = to6d(&r0).0.to_vec();
    let mut t = t0.to_vec();

    let mut vel = [
        vec![0.0; NUM_SHAPE],
        vec![0.0; 72],
        vec![0.0; 6],
        vec![0.0; 3],
    ];
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut tape = Tape::new();
    for _ in 0..opts.iterations {
        tape.reset();
        let b_v = tape.var(vec![NUM_SHAPE], beta.clone());
        let p_v = tape.var(vec![72], phi.clone());
        let r_v = tape.var(vec![6], r6.clone());
        let t_v = tape.var(vec![3], t.clone());
        let e = energy_tape(&mut tape, tpl, problem, b_v, p_v, r_v, t_v)?;
        let value = tape.scalar_value(e);
        if !value.is_finite() || value > DIVERGENCE_ENERGY {
            return Err(FitError::FitDiverged(value));
        }
        trace.push(value);
        tape.backward(e).map_err(FitError::Tensor)?;
        let mut norm2 = 0.0;
        for var in [b_v, p_v, r_v, t_v] {
            if let Some(g) = tape.grad(var) {
                norm2 += g.iter().map(|x| x * x).sum::<f64>();
            }
        }
        let norm = fmath::sqrt(norm2);
        let clip_scale =
            if opts.grad_clip > 0.0 && norm > opts.grad_clip { opts.grad_clip / norm } else { 1.0 };
        for (slot, (var, lr)) in [
            (b_v, opts.lr_beta),
            (p_v, opts.lr),
            (r_v, opts.lr_rot),
            (t_v, opts.lr),
        ]
        .iter()
        .enumerate()
        {
            let grad = tape.grad(*var).expect("parameters are reachable from the energy");
            let target = match slot {
                0 => &mut beta,
                1 => &mut phi,
                2 => &mut r6,
                _ => &mut t,
            };
            for i in 0..target.len() {
                vel[slot][i] = opts.momentum * vel[slot][i] + clip_scale * grad[i];
                target[i] -= lr * vel[slot][i];
            }
        }
    }

    let rotation = from6d(&rot::Rot6D([r6[0], r6[1], r6[2], r6[3], r6[4], r6[5]]))
        .unwrap_or(rot::IDENTITY);
    let mut phi_arr = [AxisAngle::default(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        phi_arr[j] = AxisAngle([phi[3 * j], phi[3 * j + 1], phi[3 * j + 2]]);
    }
    let mut beta_arr = [0.0; NUM_SHAPE];
    beta_arr.copy_from_slice(&beta);
    Ok(FitResult {
        beta: BodyShape(beta_arr),
        phi: phi_arr,
        rotation,
        translation: [t[0], t[1], t[2]],
        trace,
    })
}
