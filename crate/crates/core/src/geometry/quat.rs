use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::scalar::Real;

/// Unit quaternion `(w, x, y, z)` representing a rotation.
///
/// Every constructor renormalizes, so the norm stays within rounding of 1.
/// `q` and `-q` describe the same rotation; comparisons go through
/// [`UnitQuaternion::angle_to`] or [`UnitQuaternion::canonical`], never
/// raw component equality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[T; 4]", try_from = "[T; 4]")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct UnitQuaternion<T> {
    w: T,
    x: T,
    y: T,
    z: T,
}

impl<T: Real> From<UnitQuaternion<T>> for [T; 4] {
    fn from(q: UnitQuaternion<T>) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl<T: Real> TryFrom<[T; 4]> for UnitQuaternion<T> {
    type Error = Error;

    fn try_from(a: [T; 4]) -> Result<Self> {
        Self::from_wxyz(a[0], a[1], a[2], a[3])
    }
}

impl<T: Real> Default for UnitQuaternion<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> UnitQuaternion<T> {
    pub fn identity() -> Self {
        Self { w: T::one(), x: T::zero(), y: T::zero(), z: T::zero() }
    }

    /// Normalizes `(w, x, y, z)`; fails on a zero or non-finite quadruple.
    /// Input that is already unit to within a few ulps is kept bit-exact so
    /// serialized rotations round-trip.
    pub fn from_wxyz(w: T, x: T, y: T, z: T) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n <= T::epsilon() {
            return Err(Error::InvalidArgument(format!("cannot normalize quaternion ({w}, {x}, {y}, {z})")));
        }
        if (n - T::one()).abs() <= T::lit(4.0) * T::epsilon() {
            return Ok(Self { w, x, y, z });
        }
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    fn renormalized(w: T, x: T, y: T, z: T) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    pub fn w(&self) -> T {
        self.w
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn y(&self) -> T {
        self.y
    }

    pub fn z(&self) -> T {
        self.z
    }

    pub fn to_wxyz(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector_part(&self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.vector_part().norm_squared()).sqrt()
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let a = axis.normalized();
        if a.norm_squared() == T::zero() {
            return Self::identity();
        }
        let half = angle * T::lit(0.5);
        let s = half.sin();
        Self::renormalized(half.cos(), a.x * s, a.y * s, a.z * s)
    }

    /// Exponential map of a rotation vector (axis times full rotation angle).
    pub fn from_rotation_vector(v: Vec3<T>) -> Self {
        let theta = v.norm();
        let half = theta * T::lit(0.5);
        // sin(theta/2)/theta with a series guard near zero.
        let k = if theta < T::lit(1e-6) { T::lit(0.5) - theta * theta / T::lit(48.0) } else { half.sin() / theta };
        Self::renormalized(half.cos(), v.x * k, v.y * k, v.z * k)
    }

    /// Representative with non-negative scalar part.
    pub fn canonical(&self) -> Self {
        if self.w < T::zero() {
            Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            *self
        }
    }

    /// Quaternion logarithm under the half-angle convention:
    /// `‖log q‖ = θ/2` where `θ ∈ [0, π]` is the rotation angle.
    pub fn log(&self) -> Vec3<T> {
        let q = self.canonical();
        let v = q.vector_part();
        let sn = v.norm();
        if sn <= T::epsilon() {
            return v;
        }
        let half = sn.atan2(q.w);
        v * (half / sn)
    }

    /// Rotation vector (axis times full angle in `[0, π]`).
    pub fn rotation_vector(&self) -> Vec3<T> {
        self.log() * T::lit(2.0)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> T {
        let q = self.canonical();
        T::lit(2.0) * q.vector_part().norm().atan2(q.w)
    }

    /// Geodesic angle between two rotations, in `[0, π]`; sign-invariant.
    pub fn angle_to(&self, other: &Self) -> T {
        (self.inverse() * *other).angle()
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn inverse(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn rotate(&self, v: Vec3<T>) -> Vec3<T> {
        let u = self.vector_part();
        let two = T::lit(2.0);
        let t = u.cross(v) * two;
        v + t * self.w + u.cross(t)
    }

    pub fn to_matrix(&self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = T::lit(2.0);
        Mat3::from_rows([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ])
    }

    /// Rotation matrix to quaternion (Shepperd's method). The input must be
    /// orthonormal with determinant +1.
    pub fn from_matrix(r: &Mat3<T>) -> Self {
        let m = &r.m;
        let tr = r.trace();
        let one = T::one();
        let quarter = T::lit(0.25);
        if tr > T::zero() {
            let s = (tr + one).sqrt() * T::lit(2.0);
            Self::renormalized(quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
            Self::renormalized((m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
            Self::renormalized((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
            Self::renormalized((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s)
        }
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(&self, other: &Self, t: T) -> Self {
        let mut b = *other;
        let mut d = self.dot(&b);
        if d < T::zero() {
            b = Self { w: -b.w, x: -b.x, y: -b.y, z: -b.z };
            d = -d;
        }
        if d > T::one() - T::lit(1e-12) {
            let s = T::one() - t;
            return Self::renormalized(
                s * self.w + t * b.w,
                s * self.x + t * b.x,
                s * self.y + t * b.y,
                s * self.z + t * b.z,
            );
        }
        let omega = d.min(T::one()).acos();
        let so = omega.sin();
        let ka = ((T::one() - t) * omega).sin() / so;
        let kb = (t * omega).sin() / so;
        Self::renormalized(
            ka * self.w + kb * b.w,
            ka * self.x + kb * b.x,
            ka * self.y + kb * b.y,
            ka * self.z + kb * b.z,
        )
    }

    pub fn cast<U: Real>(&self) -> UnitQuaternion<U> {
        UnitQuaternion::renormalized(
            U::lit(self.w.as_f64()),
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }
}

impl<T: Real> Mul for UnitQuaternion<T> {
    type Output = Self;

    fn mul(self, o: Self) -> Self {
        Self::renormalized(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Left Jacobian of SO(3) at rotation vector `phi`:
/// `exp(phi + d) ≈ exp(J_l(phi) d) exp(phi)`.
pub fn so3_left_jacobian<T: Real>(phi: Vec3<T>) -> Mat3<T> {
    let theta2 = phi.norm_squared();
    let k = Mat3::skew(phi);
    let (a, b) = if theta2 < T::lit(1e-10) {
        (T::lit(0.5) - theta2 / T::lit(24.0), T::lit(1.0 / 6.0) - theta2 / T::lit(120.0))
    } else {
        let theta = theta2.sqrt();
        ((T::one() - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Mat3::identity() + k.scale(a) + (k * k).scale(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(axis: [f64; 3], angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(Vec3::from_array(axis), angle)
    }

    #[test]
    fn rotate_matches_matrix() {
        let r = q([1.0, 2.0, -0.5], 0.9);
        let v = Vec3::new(0.3, -1.2, 2.0);
        assert!((r.rotate(v) - r.to_matrix() * v).norm() < 1e-14);
    }

    #[test]
    fn matrix_round_trip_all_branches() {
        for (axis, angle) in [
            ([0.0, 0.0, 1.0], 0.3),
            ([1.0, 0.0, 0.0], 3.0),
            ([0.0, 1.0, 0.0], 3.1),
            ([0.0, 0.0, 1.0], 3.1),
            ([1.0, 1.0, 1.0], 2.5),
        ] {
            let a = q(axis, angle);
            let b = UnitQuaternion::from_matrix(&a.to_matrix());
            assert!(a.angle_to(&b) < 1e-7, "{axis:?} {angle}");
            assert!((a.dot(&b).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_uses_half_angle() {
        let r = q([0.0, 1.0, 0.0], 1.2);
        assert!((r.log().norm() - 0.6).abs() < 1e-14);
        assert!((r.angle() - 1.2).abs() < 1e-14);
        let neg = UnitQuaternion::from_wxyz(-r.w(), -r.x(), -r.y(), -r.z()).unwrap();
        assert!((neg.log() - r.log()).norm() < 1e-15);
    }

    #[test]
    fn exp_of_rotation_vector_round_trips() {
        let v = Vec3::new(0.4, -0.2, 1.1);
        let r = UnitQuaternion::from_rotation_vector(v);
        assert!((r.rotation_vector() - v).norm() < 1e-13);
        let tiny = Vec3::new(1e-9, 0.0, -2e-9);
        assert!((UnitQuaternion::from_rotation_vector(tiny).rotation_vector() - tiny).norm() < 1e-20);
    }

    #[test]
    fn composition_stays_normalized() {
        let mut acc = UnitQuaternion::identity();
        for i in 0..1000 {
            acc = acc * q([1.0, (i as f64).sin(), 0.2], 0.37);
            assert!((acc.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn slerp_midpoint_equidistant() {
        let a = q([0.0, 0.0, 1.0], 0.2);
        let b = q([1.0, 0.0, 0.0], 1.4);
        let m = a.slerp(&b, 0.5);
        assert!((m.angle_to(&a) - m.angle_to(&b)).abs() < 1e-9);
    }

    #[test]
    fn left_jacobian_matches_finite_difference() {
        let phi = Vec3::new(0.3, -0.7, 0.5);
        let j = so3_left_jacobian(phi);
        let base = UnitQuaternion::from_rotation_vector(phi);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = [0.0; 3];
            d[k] = h;
            let moved = UnitQuaternion::from_rotation_vector(phi + Vec3::from_array(d));
            let delta = (moved * base.inverse()).rotation_vector() / h;
            assert!((delta - j.col(k)).norm() < 1e-5);
        }
    }

    #[test]
    fn serde_as_wxyz_array() {
        let r = q([0.0, 0.0, 1.0], 0.5);
        let s = serde_json::to_string(&r).unwrap();
        let back: UnitQuaternion<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(r, back);
        assert!(serde_json::from_str::<UnitQuaternion<f64>>("[0,0,0,0]").is_err());
    }
}
