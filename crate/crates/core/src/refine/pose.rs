use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::geometry::{so3_left_jacobian, Mat3, Sim3Transform, UnitQuaternion, Vec3};
use crate::scalar::Real;

/// Seven optimized pose parameters on top of a fixed base rotation:
/// `x = exp(log_scale) · exp([rot]) · locked · p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct PoseParams<T> {
    /// Rotation from the alignment stage; never optimized.
    pub locked: UnitQuaternion<T>,
    /// Axis-angle increment (radians) applied on the left of `locked`.
    pub rot: Vec3<T>,
    pub t: Vec3<T>,
    pub log_scale: T,
}

impl<T: Real> PoseParams<T> {
    /// Zero increment around `tf`'s rotation.
    pub fn from_sim3(tf: &Sim3Transform<T>) -> Self {
        Self { locked: tf.rotation(), rot: Vec3::zero(), t: tf.translation(), log_scale: tf.scale().ln() }
    }

    pub fn scale(&self) -> T {
        self.log_scale.exp()
    }

    pub fn rotation(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_rotation_vector(self.rot) * self.locked
    }

    pub fn to_sim3(&self) -> Sim3Transform<T> {
        Sim3Transform::new(self.scale(), self.rotation(), self.t).expect("exp(log_scale) is positive")
    }

    /// Parameters moved by `delta` (the base rotation is kept).
    pub fn stepped(&self, delta: &PoseGrad<T>) -> Self {
        Self {
            locked: self.locked,
            rot: self.rot + delta.rot,
            t: self.t + delta.t,
            log_scale: self.log_scale + delta.log_scale,
        }
    }

    pub fn to_array(&self) -> [T; 7] {
        [self.rot.x, self.rot.y, self.rot.z, self.t.x, self.t.y, self.t.z, self.log_scale]
    }

    pub fn with_array(&self, a: [T; 7]) -> Self {
        Self { locked: self.locked, rot: Vec3::new(a[0], a[1], a[2]), t: Vec3::new(a[3], a[4], a[5]), log_scale: a[6] }
    }

    pub fn is_finite(&self) -> bool {
        self.rot.is_finite() && self.t.is_finite() && self.log_scale.is_finite()
    }
}

/// Gradient (or step) with the same block layout as [`PoseParams`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct PoseGrad<T> {
    pub rot: Vec3<T>,
    pub t: Vec3<T>,
    pub log_scale: T,
}

impl<T: Real> PoseGrad<T> {
    pub fn zero() -> Self {
        Self { rot: Vec3::zero(), t: Vec3::zero(), log_scale: T::zero() }
    }

    pub fn from_array(a: [T; 7]) -> Self {
        Self { rot: Vec3::new(a[0], a[1], a[2]), t: Vec3::new(a[3], a[4], a[5]), log_scale: a[6] }
    }

    pub fn to_array(&self) -> [T; 7] {
        [self.rot.x, self.rot.y, self.rot.z, self.t.x, self.t.y, self.t.z, self.log_scale]
    }

    pub fn norm(&self) -> T {
        (self.rot.norm_squared() + self.t.norm_squared() + self.log_scale * self.log_scale).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rot.is_finite() && self.t.is_finite() && self.log_scale.is_finite()
    }
}

impl<T: Real> Add for PoseGrad<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { rot: self.rot + o.rot, t: self.t + o.t, log_scale: self.log_scale + o.log_scale }
    }
}

impl<T: Real> Sub for PoseGrad<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { rot: self.rot - o.rot, t: self.t - o.t, log_scale: self.log_scale - o.log_scale }
    }
}

impl<T: Real> Mul<T> for PoseGrad<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Self { rot: self.rot * k, t: self.t * k, log_scale: self.log_scale * k }
    }
}

/// Forward map plus reverse-mode accumulation of `dL/dx` into pose
/// gradients for many points under one pose.
pub(crate) struct PoseMap<T> {
    scale: T,
    rotation: UnitQuaternion<T>,
    t: Vec3<T>,
    jl_t: Mat3<T>,
    acc_cross: Vec3<T>,
    acc_t: Vec3<T>,
    acc_scale: T,
}

impl<T: Real> PoseMap<T> {
    pub fn new(pose: &PoseParams<T>) -> Self {
        Self {
            scale: pose.scale(),
            rotation: pose.rotation(),
            t: pose.t,
            jl_t: so3_left_jacobian(pose.rot).transpose(),
            acc_cross: Vec3::zero(),
            acc_t: Vec3::zero(),
            acc_scale: T::zero(),
        }
    }

    /// Rotated (unscaled) point `exp(rot)·locked·p`.
    #[inline]
    pub fn rotated(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(p)
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotated(p) * self.scale + self.t
    }

    /// Adds the contribution of `g = dL/dx` at the point whose rotated
    /// position is `z` (see [`PoseMap::rotated`]).
    #[inline]
    pub fn accumulate(&mut self, z: Vec3<T>, g: Vec3<T>) {
        self.acc_cross += z.cross(g);
        self.acc_t += g;
        self.acc_scale += g.dot(z);
    }

    pub fn gradient(&self) -> PoseGrad<T> {
        PoseGrad {
            rot: self.jl_t.mul_vec(self.acc_cross) * self.scale,
            t: self.acc_t,
            log_scale: self.acc_scale * self.scale,
        }
    }
}
