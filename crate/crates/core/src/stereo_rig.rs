//! Pinhole stereo camera model: projection, confidence-weighted fusion of
//! root-relative detections, disparity depth and metric world-frame keypoint
//! reconstruction.
//!
//! The rig is rectified and distortion-free; the world frame coincides with
//! the left lens frame and the right lens sits at `(baseline, 0, 0)`.

use crate::body_model::NUM_KEYPOINTS;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StereoError {
    #[error("disparity below the usable minimum")]
    DegenerateDisparity,
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("bad calibration: {0}")]
    BadCalibration(&'static str),
}

/// Disparities under this many pixels would explode the depth estimate; the
/// keypoint is flagged invalid (confidence zero) instead of failing the
/// frame.
pub const MIN_DISPARITY_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoCalib {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Metric distance between the optical centers, meters.
    pub baseline: f64,
    pub width: f64,
    pub height: f64,
}

impl StereoCalib {
    pub fn validate(&self) -> Result<(), StereoError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(StereoError::BadCalibration("focal lengths must be positive"));
        }
        if self.baseline <= 0.0 {
            return Err(StereoError::BadCalibration("baseline must be positive"));
        }
        Ok(())
    }

    /// A 720p-class rig comparable to common commercial stereo cameras.
    /// The principal point sits low in the frame: the rig is modeled at
    /// ground height (the world frame is the left lens), so the standing
    /// subject occupies the upper image.
    pub fn default_rig() -> Self {
        StereoCalib {
            fx: 600.0,
            fy: 400.0,
            cx: 640.0,
            cy: 150.0,
            baseline: 0.12,
            width: 1280.0,
            height: 720.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Left,
    Right,
}

/// Per-frame paired detections: 2D pixels, detector-style root-relative 3D
/// keypoints and per-keypoint confidences for both views.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoObservation {
    pub p2d_l: [[f64; 2]; NUM_KEYPOINTS],
    pub p2d_r: [[f64; 2]; NUM_KEYPOINTS],
    pub p3d_l: [[f64; 3]; NUM_KEYPOINTS],
    pub p3d_r: [[f64; 3]; NUM_KEYPOINTS],
    pub conf_l: [f64; NUM_KEYPOINTS],
    pub conf_r: [f64; NUM_KEYPOINTS],
}

impl Default for StereoObservation {
    fn default() -> Self {
        StereoObservation {
            p2d_l: [[0.0; 2]; NUM_KEYPOINTS],
            p2d_r: [[0.0; 2]; NUM_KEYPOINTS],
            p3d_l: [[0.0; 3]; NUM_KEYPOINTS],
            p3d_r: [[0.0; 3]; NUM_KEYPOINTS],
            conf_l: [0.0; NUM_KEYPOINTS],
            conf_r: [0.0; NUM_KEYPOINTS],
        }
    }
}

/// Reconstruction output: root-relative keypoints, metric world keypoints and
/// the fused confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricKeypoints {
    pub p_r: [[f64; 3]; NUM_KEYPOINTS],
    pub p_c: [[f64; 3]; NUM_KEYPOINTS],
    pub conf_c: [f64; NUM_KEYPOINTS],
}

/// Blend the two views' root-relative keypoints by confidence:
/// `lambda = c_l / (c_l + c_r)`. A keypoint both views missed keeps the left
/// estimate; its invalidity is signaled downstream through a zero fused
/// confidence.
pub fn fuse_root_relative(obs: &StereoObservation) -> [[f64; 3]; NUM_KEYPOINTS] {
    let mut out = [[0.0; 3]; NUM_KEYPOINTS];
    for k in 0..NUM_KEYPOINTS {
        let denom = obs.conf_l[k] + obs.conf_r[k];
        let lambda = if denom > 0.0 { obs.conf_l[k] / denom } else { 1.0 };
        for a in 0..3 {
            out[k][a] = lambda * obs.p3d_l[k][a] + (1.0 - lambda) * obs.p3d_r[k][a];
        }
    }
    out
}

/// Depth from horizontal disparity: `d_z = fx * baseline / |x_r - x_l|`.
pub fn depth_from_disparity(calib: &StereoCalib, x_l: f64, x_r: f64) -> Result<f64, StereoError> {
    let disp = crate::fmath::fabs(x_r - x_l);
    if disp < MIN_DISPARITY_PX {
        return Err(StereoError::DegenerateDisparity);
    }
    Ok(calib.fx * calib.baseline / disp)
}

/// Pinhole projection into the chosen view. The right view subtracts the
/// baseline translation first.
pub fn project(calib: &StereoCalib, view: View, p: &[f64; 3]) -> Result<[f64; 2], StereoError> {
    let x = match view {
        View::Left => p[0],
        View::Right => p[0] - calib.baseline,
    };
    if p[2] <= 0.0 {
        return Err(StereoError::BehindCamera);
    }
    Ok([
        calib.fx * x / p[2] + calib.cx,
        calib.fy * p[1] / p[2] + calib.cy,
    ])
}

fn back_project(calib: &StereoCalib, px: &[f64; 2], depth: f64) -> [f64; 3] {
    [
        depth * (px[0] - calib.cx) / calib.fx,
        depth * (px[1] - calib.cy) / calib.fy,
        depth,
    ]
}

/// Metric reconstruction: per keypoint, the depth from the 2D pair drives
/// both lens back-projections, blended by the detection confidences. The
/// fused confidence is the mean of the two views'; keypoints with degenerate
/// disparity are kept (at the maximum representable depth) but forced to
/// zero confidence.
pub fn reconstruct_world(calib: &StereoCalib, obs: &StereoObservation) -> MetricKeypoints {
    let p_r = fuse_root_relative(obs);
    let mut p_c = [[0.0; 3]; NUM_KEYPOINTS];
    let mut conf_c = [0.0; NUM_KEYPOINTS];
    for k in 0..NUM_KEYPOINTS {
        let denom = obs.conf_l[k] + obs.conf_r[k];
        let lambda = if denom > 0.0 { obs.conf_l[k] / denom } else { 1.0 };
        let (depth, valid) = match depth_from_disparity(calib, obs.p2d_l[k][0], obs.p2d_r[k][0]) {
            Ok(d) => (d, true),
            Err(_) => (calib.fx * calib.baseline / MIN_DISPARITY_PX, false),
        };
        let left = back_project(calib, &obs.p2d_l[k], depth);
        let right_ray = back_project(calib, &obs.p2d_r[k], depth);
        let right = [right_ray[0] + calib.baseline, right_ray[1], right_ray[2]];
        for a in 0..3 {
            p_c[k][a] = lambda * left[a] + (1.0 - lambda) * right[a];
        }
        conf_c[k] = if valid && denom > 0.0 {
            0.5 * (obs.conf_l[k] + obs.conf_r[k])
        } else {
            0.0
        };
    }
    MetricKeypoints { p_r, p_c, conf_c }
}
