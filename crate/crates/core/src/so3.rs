//! Rotation algebra: axis-angle, rotation matrices, the continuous 6D
//! representation and geodesic distance. The exponential map is available
//! both as a plain function and as a recorded op with an analytic jacobian.

use alloc::vec;

use crate::autodiff::{Tape, TensorError, Var};
use crate::fmath;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RotationError {
    #[error("degenerate rotation: 6D columns are parallel")]
    DegenerateRotation,
}

/// Axis-angle: rotation angle is the vector norm, zero encodes identity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisAngle(pub [f64; 3]);

/// Row-major 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat(pub [[f64; 3]; 3]);

/// First two columns of a rotation matrix, flattened column-major:
/// `(m00, m10, m20, m01, m11, m21)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

pub const IDENTITY: RotMat = RotMat([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

/// Below this angle the Rodrigues coefficients switch to their Taylor
/// expansions, keeping relative error under 1e-12 and the gradient finite
/// through the 0/0 singularity.
const TAYLOR_CUTOFF: f64 = 1e-4;

impl AxisAngle {
    pub fn angle(&self) -> f64 {
        let v = self.0;
        fmath::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    }
}

impl RotMat {
    pub fn matmul(&self, other: &RotMat) -> RotMat {
        let (a, b) = (&self.0, &other.0);
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RotMat(m)
    }

    pub fn transpose(&self) -> RotMat {
        let a = &self.0;
        RotMat([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    pub fn apply(&self, v: &[f64; 3]) -> [f64; 3] {
        let a = &self.0;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Frobenius norm of `R^T R - I`; used to validate measured rotations.
    pub fn orthonormality_defect(&self) -> f64 {
        let rtr = self.transpose().matmul(self);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let e = rtr.0[i][j] - if i == j { 1.0 } else { 0.0 };
                s += e * e;
            }
        }
        fmath::sqrt(s)
    }

    /// Flatten row-major.
    pub fn to_flat(&self) -> [f64; 9] {
        let a = &self.0;
        [
            a[0][0], a[0][1], a[0][2], a[1][0], a[1][1], a[1][2], a[2][0], a[2][1], a[2][2],
        ]
    }

    pub fn from_flat(f: &[f64]) -> RotMat {
        RotMat([[f[0], f[1], f[2]], [f[3], f[4], f[5]], [f[6], f[7], f[8]]])
    }

    pub fn rot_y(angle: f64) -> RotMat {
        let (s, c) = (fmath::sin(angle), fmath::cos(angle));
        RotMat([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_x(angle: f64) -> RotMat {
        let (s, c) = (fmath::sin(angle), fmath::cos(angle));
        RotMat([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_z(angle: f64) -> RotMat {
        let (s, c) = (fmath::sin(angle), fmath::cos(angle));
        RotMat([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }
}

/// Rodrigues coefficients `A = sin(t)/t`, `B = (1-cos(t))/t^2` and their
/// derivatives with respect to `s = t^2`, with Taylor fallbacks near zero.
fn rodrigues_coeffs(s: f64) -> (f64, f64, f64, f64) {
    if s < TAYLOR_CUTOFF * TAYLOR_CUTOFF {
        let a = 1.0 - s / 6.0 + s * s / 120.0;
        let b = 0.5 - s / 24.0 + s * s / 720.0;
        let da = -1.0 / 6.0 + s / 60.0;
        let db = -1.0 / 24.0 + s / 360.0;
        (a, b, da, db)
    } else {
        let t = fmath::sqrt(s);
        let (sin_t, cos_t) = (fmath::sin(t), fmath::cos(t));
        let a = sin_t / t;
        let b = (1.0 - cos_t) / s;
        let da = (cos_t * t - sin_t) / (2.0 * s * t);
        let db = (sin_t * t - 2.0 * (1.0 - cos_t)) / (2.0 * s * s);
        (a, b, da, db)
    }
}

/// Rodrigues formula: `R = I + A K + B K^2` with `K = skew(v)`.
pub fn exp_map(aa: &AxisAngle) -> RotMat {
    let v = aa.0;
    let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let (a, b, _, _) = rodrigues_coeffs(s);
    let k = skew(&v);
    let k2 = mat_sq(&k);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    RotMat(m)
}

fn skew(v: &[f64; 3]) -> [[f64; 3]; 3] {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

fn mat_sq(k: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = k[i][0] * k[0][j] + k[i][1] * k[1][j] + k[i][2] * k[2][j];
        }
    }
    m
}

/// Forward value plus the full jacobian `dR/dv` (9x3, row-major over the
/// flattened matrix).
pub fn exp_map_with_jacobian(aa: &AxisAngle) -> (RotMat, [f64; 27]) {
    let v = aa.0;
    let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let (a, b, da, db) = rodrigues_coeffs(s);
    let k = skew(&v);
    let k2 = mat_sq(&k);
    let r = exp_map(aa);

    let mut jac = [0.0; 27];
    for axis in 0..3 {
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let dk = skew(&e);
        // dK2/dv_k = e v^T + v e^T - 2 v_k I
        let mut dk2 = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                dk2[i][j] = e[i] * v[j] + v[i] * e[j] - if i == j { 2.0 * v[axis] } else { 0.0 };
            }
        }
        let ds = 2.0 * v[axis];
        for i in 0..3 {
            for j in 0..3 {
                let d =
                    da * ds * k[i][j] + a * dk[i][j] + db * ds * k2[i][j] + b * dk2[i][j];
                jac[(i * 3 + j) * 3 + axis] = d;
            }
        }
    }
    (r, jac)
}

/// Record the exponential map on a tape: `[3] -> [3,3]`.
pub fn exp_map_tape(tape: &mut Tape, v: Var) -> Result<Var, TensorError> {
    let val = tape.value(v);
    let aa = AxisAngle([val[0], val[1], val[2]]);
    let (r, jac) = exp_map_with_jacobian(&aa);
    tape.custom_with_jacobian(v, vec![3, 3], r.to_flat().to_vec(), jac.to_vec())
}

/// Matrix logarithm to axis-angle, robust near 0 and pi.
pub fn log_map(r: &RotMat) -> AxisAngle {
    let m = &r.0;
    let cos_t = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let t = fmath::acos(cos_t);
    if t < 1e-7 {
        // skew part / 2 is exact to first order
        return AxisAngle([
            0.5 * (m[2][1] - m[1][2]),
            0.5 * (m[0][2] - m[2][0]),
            0.5 * (m[1][0] - m[0][1]),
        ]);
    }
    if t > core::f64::consts::PI - 1e-5 {
        // near pi the skew part vanishes; recover the axis from the
        // symmetric part via its largest diagonal entry
        let mut axis = [0.0; 3];
        let d = [m[0][0], m[1][1], m[2][2]];
        let k = if d[0] >= d[1] && d[0] >= d[2] {
            0
        } else if d[1] >= d[2] {
            1
        } else {
            2
        };
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        axis[k] = fmath::sqrt(((d[k] + 1.0) * 0.5).max(0.0));
        if axis[k] > 0.0 {
            axis[i] = (m[k][i] + m[i][k]) / (4.0 * axis[k] * 0.5) * 0.5;
            axis[j] = (m[k][j] + m[j][k]) / (4.0 * axis[k] * 0.5) * 0.5;
        }
        let n = fmath::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
        if n > 0.0 {
            // pick the sign that matches the (possibly tiny) skew part
            let skew = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
            let dot = axis[0] * skew[0] + axis[1] * skew[1] + axis[2] * skew[2];
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            return AxisAngle([
                sign * t * axis[0] / n,
                sign * t * axis[1] / n,
                sign * t * axis[2] / n,
            ]);
        }
        return AxisAngle([t, 0.0, 0.0]);
    }
    let f = t / (2.0 * fmath::sin(t));
    AxisAngle([
        f * (m[2][1] - m[1][2]),
        f * (m[0][2] - m[2][0]),
        f * (m[1][0] - m[0][1]),
    ])
}

pub fn to6d(r: &RotMat) -> Rot6D {
    let m = &r.0;
    Rot6D([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
}

/// Gram-Schmidt reconstruction: normalize the first column, orthogonalize
/// the second, complete with the cross product.
pub fn from6d(r: &Rot6D) -> Result<RotMat, RotationError> {
    let a1 = [r.0[0], r.0[1], r.0[2]];
    let a2 = [r.0[3], r.0[4], r.0[5]];
    let n1 = norm3(&a1);
    if n1 < 1e-9 {
        return Err(RotationError::DegenerateRotation);
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = dot3(&b1, &a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(&u);
    if n2 < 1e-9 {
        return Err(RotationError::DegenerateRotation);
    }
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
    let b3 = cross3(&b1, &b2);
    Ok(RotMat([
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ]))
}

/// Tape version of [`from6d`], composed from primitive ops so gradients flow
/// into the 6 parameters. Input `[6]`, output `[3,3]`.
pub fn from6d_tape(tape: &mut Tape, r6: Var) -> Result<Var, TensorError> {
    let a1 = tape.slice(r6, 0, vec![3])?;
    let a2 = tape.slice(r6, 3, vec![3])?;
    let n1sq = tape.sum_squares(a1);
    let n1 = tape.sqrt(n1sq)?;
    let b1 = tape.div(a1, n1)?;
    let prod = tape.mul(b1, a2)?;
    let d = tape.sum_all(prod);
    let proj = tape.mul(b1, d)?;
    let u = tape.sub(a2, proj)?;
    let n2sq = tape.sum_squares(u);
    let n2 = tape.sqrt(n2sq)?;
    let b2 = tape.div(u, n2)?;
    let b3 = cross_tape(tape, b1, b2)?;
    // rows of [b1; b2; b3] form R^T
    let rt = tape.concat(&[b1, b2, b3], vec![3, 3])?;
    tape.transpose(rt)
}

fn cross_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TensorError> {
    let comp = |tape: &mut Tape, i: usize, j: usize| -> Result<Var, TensorError> {
        let ai = tape.slice(a, i, vec![1])?;
        let bj = tape.slice(b, j, vec![1])?;
        let aj = tape.slice(a, j, vec![1])?;
        let bi = tape.slice(b, i, vec![1])?;
        let p1 = tape.mul(ai, bj)?;
        let p2 = tape.mul(aj, bi)?;
        tape.sub(p1, p2)
    };
    let c0 = comp(tape, 1, 2)?;
    let c1 = comp(tape, 2, 0)?;
    let c2 = comp(tape, 0, 1)?;
    tape.concat(&[c0, c1, c2], vec![3])
}

fn norm3(v: &[f64; 3]) -> f64 {
    fmath::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Geodesic angle between two rotations in degrees.
pub fn geodesic_deg(a: &RotMat, b: &RotMat) -> f64 {
    let rel = a.transpose().matmul(b);
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    fmath::acos(c) * 180.0 / core::f64::consts::PI
}
