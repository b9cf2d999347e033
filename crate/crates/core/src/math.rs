//! Rotation conventions shared by every module.
//!
//! All Euler triples (root rotation, graph node angles) use the intrinsic
//! x-then-y-then-z convention `R = Rx(e0) * Ry(e1) * Rz(e2)`. Joint axes in
//! the skeleton file compose the same way, in declared order.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }
}

pub fn axis_rotation(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

pub fn euler_xyz(e: &Vector3<f64>) -> Matrix3<f64> {
    axis_rotation(Axis::X, e[0]) * axis_rotation(Axis::Y, e[1]) * axis_rotation(Axis::Z, e[2])
}

/// World-frame rotation axes `w_k` of an XYZ Euler triple, such that
/// `d(R v)/de_k = w_k x (R v)`.
pub fn euler_xyz_axes(e: &Vector3<f64>) -> [Vector3<f64>; 3] {
    let rx = axis_rotation(Axis::X, e[0]);
    let ry = axis_rotation(Axis::Y, e[1]);
    [Vector3::x(), rx * Vector3::y(), rx * ry * Vector3::z()]
}

/// Same as [`euler_xyz_axes`] for an arbitrary ordered axis list.
pub fn chain_axes(axes: &[Axis], angles: &[f64]) -> (Matrix3<f64>, Vec<Vector3<f64>>) {
    let mut acc = Matrix3::identity();
    let mut out = Vec::with_capacity(axes.len());
    for (&axis, &angle) in axes.iter().zip(angles) {
        out.push(acc * axis.unit());
        acc *= axis_rotation(axis, angle);
    }
    (acc, out)
}

/// Inverse of [`euler_xyz`] (valid away from gimbal lock).
pub fn euler_xyz_from_matrix(r: &Matrix3<f64>) -> Vector3<f64> {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Vector3::new(a, b, c)
}

pub fn rotation_matrix_from_xyz(e: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(euler_xyz(e))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rotation matrix of a (not necessarily unit) quaternion `q`, treated as
/// `q / |q|`.
pub fn quat_to_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n2 = q.norm_squared();
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let s = 2.0 / n2;
    Matrix3::new(
        1.0 - s * (y * y + z * z),
        s * (x * y - w * z),
        s * (x * z + w * y),
        s * (x * y + w * z),
        1.0 - s * (x * x + z * z),
        s * (y * z - w * x),
        s * (x * z - w * y),
        s * (y * z + w * x),
        1.0 - s * (x * x + y * y),
    )
}

/// Directional derivative of [`quat_to_matrix`] at `q` along `dq`.
pub fn quat_to_matrix_tangent(q: &Quaternion<f64>, dq: &Quaternion<f64>) -> Matrix3<f64> {
    let n2 = q.norm_squared();
    let dn2 = 2.0 * q.coords.dot(&dq.coords);
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let (dw, dx, dy, dz) = (dq.w, dq.i, dq.j, dq.k);
    let s = 2.0 / n2;
    let ds = -2.0 * dn2 / (n2 * n2);
    // products and their tangents
    let p = |a: f64, b: f64| a * b;
    let dp = |a: f64, da: f64, b: f64, db: f64| da * b + a * db;
    let m = [
        [-(p(y, y) + p(z, z)), p(x, y) - p(w, z), p(x, z) + p(w, y)],
        [p(x, y) + p(w, z), -(p(x, x) + p(z, z)), p(y, z) - p(w, x)],
        [p(x, z) - p(w, y), p(y, z) + p(w, x), -(p(x, x) + p(y, y))],
    ];
    let dm = [
        [
            -(dp(y, dy, y, dy) + dp(z, dz, z, dz)),
            dp(x, dx, y, dy) - dp(w, dw, z, dz),
            dp(x, dx, z, dz) + dp(w, dw, y, dy),
        ],
        [
            dp(x, dx, y, dy) + dp(w, dw, z, dz),
            -(dp(x, dx, x, dx) + dp(z, dz, z, dz)),
            dp(y, dy, z, dz) - dp(w, dw, x, dx),
        ],
        [
            dp(x, dx, z, dz) - dp(w, dw, y, dy),
            dp(y, dy, z, dz) + dp(w, dw, x, dx),
            -(dp(x, dx, x, dx) + dp(y, dy, y, dy)),
        ],
    ];
    Matrix3::from_fn(|r, c| ds * m[r][c] + s * dm[r][c])
}

pub fn matrix_to_quat(r: &Matrix3<f64>) -> Quaternion<f64> {
    let rot = Rotation3::from_matrix_unchecked(*r);
    *UnitQuaternion::from_rotation_matrix(&rot).quaternion()
}

/// A rigid transform encoded as a dual quaternion `real + eps * dual`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuat {
    pub real: Quaternion<f64>,
    pub dual: Quaternion<f64>,
}

impl DualQuat {
    pub fn from_rigid(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let real = matrix_to_quat(r);
        let dual = Quaternion::from_parts(0.0, *t) * real * 0.5;
        Self { real, dual }
    }

    pub fn zero() -> Self {
        Self {
            real: Quaternion::new(0.0, 0.0, 0.0, 0.0),
            dual: Quaternion::new(0.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            real: self.real * s,
            dual: self.dual * s,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            real: self.real + o.real,
            dual: self.dual + o.dual,
        }
    }

    /// Rigid transform of the normalized dual quaternion. The translation
    /// only reads the vector part of `2 dual conj(real) / |real|^2`, so a
    /// non-orthogonal dual part is harmless.
    pub fn to_rigid(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let n2 = self.real.norm_squared();
        let tq = self.dual * self.real.conjugate() * (2.0 / n2);
        (quat_to_matrix(&self.real), tq.imag())
    }
}
