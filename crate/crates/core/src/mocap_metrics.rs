//! The six evaluation metrics with exact unit conventions: joint position
//! error (mm), per-vertex error (mm), hip/shoulder global rotation error
//! (degrees), translation error (cm), jerk (km/s^3) and foot skating (mm).
//! All follow "less is better".

use alloc::vec::Vec;

use crate::body_model::{
    fk, AxisAngle, BodyShape, BodyTemplate, ANCHORS_PER_JOINT, L_HIP, L_SHOULDER, NUM_JOINTS,
    R_HIP, R_SHOULDER,
};
use crate::fmath;
use crate::so3::geodesic_deg;

// fk() re-exports AxisAngle through body_model's public use; keep the
// canonical path explicit for readers.
use crate::body_model as body;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("sequence length mismatch")]
    LengthMismatch,
    #[error("too few frames: need {need}, got {got}")]
    TooFewFrames { need: usize, got: usize },
}

/// Aggregated evaluation output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub jpe_mm: f64,
    pub pve_mm: f64,
    pub sip_deg: f64,
    pub te_cm: f64,
    pub jerk_km_s3: f64,
    pub fs_mm: f64,
    /// False when no ground-truth contact frame existed (fs_mm is then 0 by
    /// the empty-set rule).
    pub fs_had_contacts: bool,
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    fmath::sqrt(dx * dx + dy * dy + dz * dz)
}

/// Mean Euclidean joint error in the root coordinate (pelvis subtracted from
/// both sides), in millimeters.
pub fn jpe(
    pred: &[[[f64; 3]; NUM_JOINTS]],
    gt: &[[[f64; 3]; NUM_JOINTS]],
) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch);
    }
    if pred.is_empty() {
        return Err(MetricError::TooFewFrames { need: 1, got: 0 });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pf, gf) in pred.iter().zip(gt) {
        let (proot, groot) = (pf[0], gf[0]);
        for j in 0..NUM_JOINTS {
            let p = [pf[j][0] - proot[0], pf[j][1] - proot[1], pf[j][2] - proot[2]];
            let g = [gf[j][0] - groot[0], gf[j][1] - groot[1], gf[j][2] - groot[2]];
            sum += dist3(&p, &g);
            count += 1;
        }
    }
    Ok(sum / count as f64 * 1000.0)
}

/// Mean per-vertex error in millimeters, root-aligned by the mean of each
/// frame's pelvis anchors.
pub fn pve(pred: &[Vec<[f64; 3]>], gt: &[Vec<[f64; 3]>]) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch);
    }
    if pred.is_empty() {
        return Err(MetricError::TooFewFrames { need: 1, got: 0 });
    }
    let root_mean = |verts: &Vec<[f64; 3]>| -> [f64; 3] {
        let mut m = [0.0; 3];
        for v in verts.iter().take(ANCHORS_PER_JOINT) {
            for a in 0..3 {
                m[a] += v[a];
            }
        }
        for a in m.iter_mut() {
            *a /= ANCHORS_PER_JOINT as f64;
        }
        m
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pf, gf) in pred.iter().zip(gt) {
        if pf.len() != gf.len() {
            return Err(MetricError::LengthMismatch);
        }
        let (pr, gr) = (root_mean(pf), root_mean(gf));
        for (pv, gv) in pf.iter().zip(gf) {
            let p = [pv[0] - pr[0], pv[1] - pr[1], pv[2] - pr[2]];
            let g = [gv[0] - gr[0], gv[1] - gr[1], gv[2] - gr[2]];
            sum += dist3(&p, &g);
            count += 1;
        }
    }
    Ok(sum / count as f64 * 1000.0)
}

const SIP_JOINTS: [usize; 4] = [L_HIP, R_HIP, L_SHOULDER, R_SHOULDER];

/// Mean global rotation error of hips and shoulders, in degrees. Global
/// rotations come from forward kinematics, so a root error moves all four.
pub fn sip(
    tpl: &BodyTemplate,
    pred_phi: &[[AxisAngle; NUM_JOINTS]],
    gt_phi: &[[AxisAngle; NUM_JOINTS]],
    beta: &BodyShape,
) -> Result<f64, MetricError> {
    if pred_phi.len() != gt_phi.len() {
        return Err(MetricError::LengthMismatch);
    }
    if pred_phi.is_empty() {
        return Err(MetricError::TooFewFrames { need: 1, got: 0 });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pf, gf) in pred_phi.iter().zip(gt_phi) {
        let pj = body::fk(tpl, pf, beta);
        let gj = fk(tpl, gf, beta);
        for &j in SIP_JOINTS.iter() {
            sum += geodesic_deg(&pj.globals[j], &gj.globals[j]);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean absolute translation error in centimeters.
pub fn te(pred_t: &[[f64; 3]], gt_t: &[[f64; 3]]) -> Result<f64, MetricError> {
    if pred_t.len() != gt_t.len() {
        return Err(MetricError::LengthMismatch);
    }
    if pred_t.is_empty() {
        return Err(MetricError::TooFewFrames { need: 1, got: 0 });
    }
    let sum: f64 = pred_t.iter().zip(gt_t).map(|(p, g)| dist3(p, g)).sum();
    Ok(sum / pred_t.len() as f64 * 100.0)
}

/// Mean jerk magnitude over world-frame joint positions, in km/s^3:
/// third-order backward difference scaled by fps^3.
pub fn jerk_metric(joints_world: &[Vec<[f64; 3]>], fps: f64) -> Result<f64, MetricError> {
    if joints_world.len() < 4 {
        return Err(MetricError::TooFewFrames { need: 4, got: joints_world.len() });
    }
    let fps3 = fps * fps * fps;
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 3..joints_world.len() {
        let (f0, f1, f2, f3) = (
            &joints_world[t],
            &joints_world[t - 1],
            &joints_world[t - 2],
            &joints_world[t - 3],
        );
        for j in 0..f0.len() {
            let mut mag2 = 0.0;
            for a in 0..3 {
                let d = f0[j][a] - 3.0 * f1[j][a] + 3.0 * f2[j][a] - f3[j][a];
                mag2 += d * d;
            }
            sum += fmath::sqrt(mag2) * fps3;
            count += 1;
        }
    }
    Ok(sum / count as f64 / 1000.0)
}

/// Mean predicted foot displacement (mm) over frames whose ground-truth
/// contact flag is set, both feet pooled. Returns 0 with a cleared flag if
/// no contact frame exists.
pub fn fs_metric(foot_world: &[[[f64; 3]; 2]], gt_contacts: &[[bool; 2]]) -> (f64, bool) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..foot_world.len().min(gt_contacts.len()) {
        for f in 0..2 {
            if gt_contacts[t][f] {
                sum += dist3(&foot_world[t][f], &foot_world[t - 1][f]);
                count += 1;
            }
        }
    }
    if count == 0 {
        (0.0, false)
    } else {
        (sum / count as f64 * 1000.0, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::NUM_SHAPE;
    use crate::rng::Rng;
    use crate::so3::exp_map;
    use alloc::vec;

    fn random_frames(rng: &mut Rng, n: usize) -> Vec<[[f64; 3]; NUM_JOINTS]> {
        (0..n)
            .map(|_| {
                core::array::from_fn(|_| {
                    [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)]
                })
            })
            .collect()
    }

    #[test]
    fn jpe_zero_on_identical() {
        let mut rng = Rng::new(1);
        let f = random_frames(&mut rng, 5);
        assert_eq!(jpe(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn jpe_single_joint_offset_fixture() {
        // one joint of 24 offset by 24 mm -> mean error 1 mm
        let gt = [[[0.0; 3]; NUM_JOINTS]];
        let mut pred = gt;
        pred[0][5][0] = 0.024;
        assert!((jpe(&pred, &gt).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jpe_removes_global_translation() {
        let mut rng = Rng::new(2);
        let gt = random_frames(&mut rng, 3);
        let pred: Vec<_> = gt
            .iter()
            .map(|f| {
                let mut g = *f;
                for j in g.iter_mut() {
                    j[0] += 5.0;
                    j[1] -= 2.0;
                }
                g
            })
            .collect();
        assert!(jpe(&pred, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn jpe_matches_brute_force_and_is_frame_permutation_consistent() {
        let mut rng = Rng::new(3);
        let gt = random_frames(&mut rng, 8);
        let pred = random_frames(&mut rng, 8);
        let fast = jpe(&pred, &gt).unwrap();
        // independent double loop, same arithmetic order
        let mut sum = 0.0;
        let mut n = 0;
        for t in 0..8 {
            for j in 0..NUM_JOINTS {
                let mut d2 = 0.0;
                for a in 0..3 {
                    let p = pred[t][j][a] - pred[t][0][a];
                    let g = gt[t][j][a] - gt[t][0][a];
                    d2 += (p - g) * (p - g);
                }
                sum += crate::fmath::sqrt(d2);
                n += 1;
            }
        }
        assert_eq!(fast, sum / n as f64 * 1000.0);
        // shuffled frames give the same value
        let order = [5usize, 2, 7, 0, 1, 6, 3, 4];
        let ps: Vec<_> = order.iter().map(|&i| pred[i]).collect();
        let gs: Vec<_> = order.iter().map(|&i| gt[i]).collect();
        assert!((jpe(&ps, &gs).unwrap() - fast).abs() < 1e-12);
    }

    #[test]
    fn jpe_length_mismatch_is_error() {
        let mut rng = Rng::new(4);
        let a = random_frames(&mut rng, 3);
        let b = random_frames(&mut rng, 4);
        assert_eq!(jpe(&a, &b), Err(MetricError::LengthMismatch));
    }

    #[test]
    fn pve_identical_and_uniform_offset() {
        let tpl = BodyTemplate::standard();
        let beta = BodyShape::default();
        let verts =
            crate::body_model::vertices(&tpl, &[AxisAngle::default(); NUM_JOINTS], &beta);
        let frames = vec![verts.clone()];
        assert_eq!(pve(&frames, &frames).unwrap(), 0.0);
        // a uniform 1 cm offset disappears after root alignment
        let shifted: Vec<Vec<[f64; 3]>> = frames
            .iter()
            .map(|f| f.iter().map(|v| [v[0] + 0.01, v[1], v[2]]).collect())
            .collect();
        assert!(pve(&shifted, &frames).unwrap() < 1e-9);
    }

    #[test]
    fn pve_matches_brute_force_on_random_case() {
        let mut rng = Rng::new(9);
        let mk = |rng: &mut Rng| -> Vec<Vec<[f64; 3]>> {
            (0..3)
                .map(|_| {
                    (0..crate::body_model::NUM_VERTICES)
                        .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)])
                        .collect()
                })
                .collect()
        };
        let pred = mk(&mut rng);
        let gt = mk(&mut rng);
        let fast = pve(&pred, &gt).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for t in 0..pred.len() {
            let mut pr = [0.0; 3];
            let mut gr = [0.0; 3];
            for i in 0..ANCHORS_PER_JOINT {
                for a in 0..3 {
                    pr[a] += pred[t][i][a];
                    gr[a] += gt[t][i][a];
                }
            }
            for a in 0..3 {
                pr[a] /= ANCHORS_PER_JOINT as f64;
                gr[a] /= ANCHORS_PER_JOINT as f64;
            }
            for i in 0..pred[t].len() {
                let mut d2 = 0.0;
                for a in 0..3 {
                    let d = (pred[t][i][a] - pr[a]) - (gt[t][i][a] - gr[a]);
                    d2 += d * d;
                }
                sum += crate::fmath::sqrt(d2);
                count += 1;
            }
        }
        assert_eq!(fast, sum / count as f64 * 1000.0);
    }

    #[test]
    fn sip_identical_is_zero_and_single_hip_fixture() {
        let tpl = BodyTemplate::standard();
        let beta = BodyShape::default();
        let rest = [AxisAngle::default(); NUM_JOINTS];
        assert_eq!(sip(&tpl, &[rest], &[rest], &beta).unwrap(), 0.0);
        // one hip off by 10 degrees, averaged over 4 joints -> 2.5
        let mut posed = rest;
        posed[L_HIP] = AxisAngle([10.0_f64.to_radians(), 0.0, 0.0]);
        let v = sip(&tpl, &[posed], &[rest], &beta).unwrap();
        assert!((v - 2.5).abs() < 1e-9, "{v}");
    }

    #[test]
    fn sip_uses_global_rotations() {
        // identical local limb angles but a rotated root still raises SIP
        let tpl = BodyTemplate::standard();
        let beta = BodyShape::default();
        let rest = [AxisAngle::default(); NUM_JOINTS];
        let mut rooted = rest;
        rooted[0] = AxisAngle([0.0, 20.0_f64.to_radians(), 0.0]);
        let v = sip(&tpl, &[rooted], &[rest], &beta).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "{v}");
        // sanity: the local hip rotations are untouched
        let _ = exp_map(&rooted[L_HIP]);
    }

    #[test]
    fn te_fixture_and_brute_force() {
        let gt = vec![[0.0, 0.0, 2.0]; 10];
        let pred: Vec<[f64; 3]> = gt.iter().map(|t| [t[0] + 0.05, t[1], t[2]]).collect();
        let v = te(&pred, &gt).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
        // brute force on random data
        let mut rng = Rng::new(12);
        let a: Vec<[f64; 3]> =
            (0..20).map(|_| [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(0.0, 5.0)]).collect();
        let b: Vec<[f64; 3]> =
            (0..20).map(|_| [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(0.0, 5.0)]).collect();
        let fast = te(&a, &b).unwrap();
        let mut sum = 0.0;
        for i in 0..20 {
            let mut d2 = 0.0;
            for ax in 0..3 {
                d2 += (a[i][ax] - b[i][ax]) * (a[i][ax] - b[i][ax]);
            }
            sum += crate::fmath::sqrt(d2);
        }
        assert_eq!(fast, sum / 20.0 * 100.0);
        assert_eq!(te(&pred, &gt[..5]), Err(MetricError::LengthMismatch));
    }

    fn constant_motion(frames: usize, velocity: f64, accel: f64) -> Vec<Vec<[f64; 3]>> {
        (0..frames)
            .map(|t| {
                let tf = t as f64;
                vec![[velocity * tf + 0.5 * accel * tf * tf, 0.0, 0.0]; 4]
            })
            .collect()
    }

    #[test]
    fn jerk_zero_on_constant_acceleration() {
        let frames = constant_motion(10, 0.3, 0.8);
        assert!(jerk_metric(&frames, 60.0).unwrap() < 1e-9);
    }

    #[test]
    fn jerk_fixture_one_mm_at_sixty_fps() {
        // per-frame third difference of 1 mm -> 0.001 * 60^3 / 1000 = 0.216
        let mut frames = vec![vec![[0.0; 3]; 1]; 8];
        // cubic ramp: p(t) = c t^3 with 6c = 0.001 per frame
        let c = 0.001 / 6.0;
        for (t, f) in frames.iter_mut().enumerate() {
            f[0][0] = c * (t as f64).powi(3);
        }
        let v = jerk_metric(&frames, 60.0).unwrap();
        assert!((v - 0.216).abs() < 1e-9, "{v}");
    }

    #[test]
    fn jerk_needs_four_frames_and_matches_brute_force() {
        let frames = constant_motion(3, 0.1, 0.0);
        assert!(matches!(jerk_metric(&frames, 60.0), Err(MetricError::TooFewFrames { .. })));

        let mut rng = Rng::new(21);
        let data: Vec<Vec<[f64; 3]>> = (0..6)
            .map(|_| {
                (0..5)
                    .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)])
                    .collect()
            })
            .collect();
        let fast = jerk_metric(&data, 60.0).unwrap();
        let fps3 = 60.0f64 * 60.0 * 60.0;
        let mut sum = 0.0;
        let mut n = 0;
        for t in 3..6 {
            for j in 0..5 {
                let mut m2 = 0.0;
                for a in 0..3 {
                    let d = data[t][j][a] - 3.0 * data[t - 1][j][a] + 3.0 * data[t - 2][j][a]
                        - data[t - 3][j][a];
                    m2 += d * d;
                }
                sum += crate::fmath::sqrt(m2) * fps3;
                n += 1;
            }
        }
        assert_eq!(fast, sum / n as f64 / 1000.0);
    }

    #[test]
    fn fs_planted_feet_are_zero() {
        let feet = vec![[[0.1, 0.04, 0.2], [-0.1, 0.04, 0.2]]; 10];
        let contacts = vec![[true, true]; 10];
        let (v, had) = fs_metric(&feet, &contacts);
        assert_eq!(v, 0.0);
        assert!(had);
    }

    #[test]
    fn fs_one_mm_slide_fixture() {
        let feet: Vec<[[f64; 3]; 2]> =
            (0..10).map(|t| [[0.001 * t as f64, 0.0, 0.0], [0.0, 0.0, 0.0]]).collect();
        let contacts = vec![[true, false]; 10];
        let (v, had) = fs_metric(&feet, &contacts);
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        assert!(had);
    }

    #[test]
    fn fs_empty_contact_set_flags() {
        let feet = vec![[[0.0; 3]; 2]; 5];
        let contacts = vec![[false, false]; 5];
        let (v, had) = fs_metric(&feet, &contacts);
        assert_eq!(v, 0.0);
        assert!(!had);
    }

    #[test]
    fn sip_shape_argument_changes_nothing_at_rest() {
        let tpl = BodyTemplate::standard();
        let rest = [AxisAngle::default(); NUM_JOINTS];
        let mut beta = BodyShape::default();
        beta.0[0] = 1.5;
        assert_eq!(sip(&tpl, &[rest], &[rest], &beta).unwrap(), 0.0);
        let _ = NUM_SHAPE;
    }
}
