use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{UnitQuaternion, Vec3};
use crate::scalar::Real;

/// Similarity transform `p ↦ s·R·p + t` with `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Sim3Transform<T> {
    #[serde(rename = "s")]
    scale: T,
    #[serde(rename = "q")]
    rotation: UnitQuaternion<T>,
    #[serde(rename = "t")]
    translation: Vec3<T>,
}

impl<T: Real> Default for Sim3Transform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Sim3Transform<T> {
    pub fn new(scale: T, rotation: UnitQuaternion<T>, translation: Vec3<T>) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("Sim(3) scale must be positive, got {scale}")));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidArgument("Sim(3) translation must be finite".into()));
        }
        Ok(Self { scale, rotation, translation })
    }

    pub fn identity() -> Self {
        Self { scale: T::one(), rotation: UnitQuaternion::identity(), translation: Vec3::zero() }
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    pub fn from_rotation(r: UnitQuaternion<T>) -> Self {
        Self { rotation: r, ..Self::identity() }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn rotation(&self) -> UnitQuaternion<T> {
        self.rotation
    }

    pub fn translation(&self) -> Vec3<T> {
        self.translation
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    /// Applies only the linear part (no translation).
    #[inline]
    pub fn apply_vector(&self, v: Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(v) * self.scale
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        let s = T::one() / self.scale;
        Self { scale: s, rotation: r, translation: -(r.rotate(self.translation) * s) }
    }

    pub fn cast<U: Real>(&self) -> Sim3Transform<U> {
        Sim3Transform {
            scale: U::lit(self.scale.as_f64()),
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}
