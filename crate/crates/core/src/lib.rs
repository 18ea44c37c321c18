//! Core algorithms for a desk-scale stereo-inertial motion capture pipeline.
//!
//! The crate is organized around the data flow of the system:
//!
//! * [`stereo_rig`] — pinhole stereo model: projection, disparity depth and
//!   confidence-weighted metric keypoint reconstruction.
//! * [`body_model`] — a deterministic 24-joint parametric body with
//!   differentiable forward kinematics, surrogate vertices, a 17-keypoint
//!   regressor and IMU mount frames.
//! * [`shape_fit`] — body shape estimation from a T-pose cloud + skeleton by
//!   SGD with momentum over a four-term energy.
//! * [`ssm_nets`] — streaming state-space sequence networks (TransNet, IENet,
//!   KENet, FusionNet, RefineNet) and their input assemblies.
//! * [`losses`] — the training objectives (translation, cycle consistency,
//!   joint position, rotation + FK, contact BCE, foot skating, jerk).
//! * [`synth`] — procedural ground-truth motion, virtual stereo/IMU
//!   observations, T-pose point clouds and contact labels.
//! * [`mocap_metrics`] — the six evaluation metrics (JPE, PVE, SIP, TE,
//!   Jerk, FS).
//! * [`train_eval`] — staged training, evaluation protocols and the
//!   streaming throughput benchmark.
//!
//! Everything is built on [`autodiff`], a dense-tensor reverse-mode tape, and
//! [`so3`], the rotation algebra. The crate is `no_std` (with `alloc`); all
//! file formats, CLI and wall-clock concerns live in the companion `poser-cli`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod body_model;
pub(crate) mod fmath;
pub mod losses;
pub mod mocap_metrics;
pub mod rng;
pub mod shape_fit;
pub mod so3;
pub mod ssm_nets;
pub mod stereo_rig;
pub mod synth;
pub mod train_eval;
