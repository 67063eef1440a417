use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, UnitQuaternion, Vec3};
use crate::scalar::Real;

/// Pinhole intrinsics in pixels. Pixel `(i, j)` has its center at `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    /// Square pixels, principal point at the image center.
    pub fn centered(focal: T, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: T::from_count(width - 1) * T::lit(0.5),
            cy: T::from_count(height - 1) * T::lit(0.5),
            width,
            height,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image must be non-empty".into()));
        }
        let in_range = |c: T, n: usize| c >= T::zero() && c < T::from_count(n);
        if !in_range(self.cx, self.width) || !in_range(self.cy, self.height) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Pinhole camera with a world→camera extrinsic: `p_cam = R·p_world + t`.
///
/// Camera axes: +x right, +y down, +z forward. JSON form is the flat record
/// `{fx, fy, cx, cy, width, height, q: [w,x,y,z], t: [x,y,z]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord<T>", into = "CameraRecord<T>")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct CameraView<T> {
    intrinsics: Intrinsics<T>,
    rotation: UnitQuaternion<T>,
    translation: Vec3<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
struct CameraRecord<T> {
    fx: T,
    fy: T,
    cx: T,
    cy: T,
    width: usize,
    height: usize,
    q: UnitQuaternion<T>,
    t: Vec3<T>,
}

impl<T: Real> TryFrom<CameraRecord<T>> for CameraView<T> {
    type Error = Error;

    fn try_from(r: CameraRecord<T>) -> Result<Self> {
        let k = Intrinsics { fx: r.fx, fy: r.fy, cx: r.cx, cy: r.cy, width: r.width, height: r.height };
        Self::new(k, r.q, r.t)
    }
}

impl<T: Real> From<CameraView<T>> for CameraRecord<T> {
    fn from(c: CameraView<T>) -> Self {
        let k = c.intrinsics;
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            q: c.rotation,
            t: c.translation,
        }
    }
}

impl<T: Real> CameraView<T> {
    pub fn new(intrinsics: Intrinsics<T>, rotation: UnitQuaternion<T>, translation: Vec3<T>) -> Result<Self> {
        intrinsics.validate()?;
        if !translation.is_finite() {
            return Err(Error::InvalidCamera("translation must be finite".into()));
        }
        Ok(Self { intrinsics, rotation, translation })
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image -y
    /// points along `up` as far as possible).
    pub fn look_at(intrinsics: Intrinsics<T>, eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let forward = (target - eye).normalized();
        if forward.norm_squared() == T::zero() {
            return Err(Error::InvalidCamera("eye and target coincide".into()));
        }
        let mut right = forward.cross(up);
        if right.norm() < T::lit(1e-9) {
            // Looking along `up`: pick any perpendicular reference.
            let alt = if forward.x.abs() < T::lit(0.9) { Vec3::unit_x() } else { Vec3::unit_y() };
            right = forward.cross(alt);
        }
        let right = right.normalized();
        let down = forward.cross(right);
        let r = Mat3::from_rows([right.to_array(), down.to_array(), forward.to_array()]);
        let rotation = UnitQuaternion::from_matrix(&r);
        let translation = -rotation.rotate(eye);
        Self::new(intrinsics, rotation, translation)
    }

    pub fn intrinsics(&self) -> &Intrinsics<T> {
        &self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// World→camera rotation.
    pub fn rotation(&self) -> UnitQuaternion<T> {
        self.rotation
    }

    pub fn translation(&self) -> Vec3<T> {
        self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        -self.rotation.inverse().rotate(self.translation)
    }

    /// Optical axis direction in world coordinates.
    pub fn forward(&self) -> Vec3<T> {
        self.rotation.inverse().rotate(Vec3::unit_z())
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(p) + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.inverse().rotate(p - self.translation)
    }

    /// Pixel coordinates of a camera-space point (no visibility test).
    #[inline]
    pub fn project_camera(&self, pc: Vec3<T>) -> (T, T) {
        let k = &self.intrinsics;
        (k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy)
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T, T)> {
        let pc = self.world_to_camera(p);
        if pc.z <= T::zero() {
            return None;
        }
        let (u, v) = self.project_camera(pc);
        Some((u, v, pc.z))
    }

    /// World point at pixel `(u, v)` with z-depth `depth`.
    pub fn unproject(&self, u: T, v: T, depth: T) -> Vec3<T> {
        let k = &self.intrinsics;
        let pc = Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
        self.camera_to_world(pc)
    }

    /// World-space unit ray direction through pixel `(u, v)`.
    pub fn ray_direction(&self, u: T, v: T) -> Vec3<T> {
        let k = &self.intrinsics;
        let d = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, T::one());
        self.rotation.inverse().rotate(d).normalized()
    }

    /// Same camera with a different pose.
    pub fn with_pose(&self, rotation: UnitQuaternion<T>, translation: Vec3<T>) -> Self {
        Self { intrinsics: self.intrinsics, rotation, translation }
    }

    pub fn cast<U: Real>(&self) -> CameraView<U> {
        let k = &self.intrinsics;
        CameraView {
            intrinsics: Intrinsics {
                fx: U::lit(k.fx.as_f64()),
                fy: U::lit(k.fy.as_f64()),
                cx: U::lit(k.cx.as_f64()),
                cy: U::lit(k.cy.as_f64()),
                width: k.width,
                height: k.height,
            },
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Intrinsics<f64> {
        Intrinsics { fx: 100.0, fy: 100.0, cx: 32.0, cy: 24.0, width: 64, height: 48 }
    }

    #[test]
    fn validates_intrinsics() {
        let q = UnitQuaternion::identity();
        assert!(CameraView::new(Intrinsics { fx: 0.0, ..k() }, q, Vec3::zero()).is_err());
        assert!(CameraView::new(Intrinsics { cx: 64.0, ..k() }, q, Vec3::zero()).is_err());
        assert!(CameraView::new(Intrinsics { cy: -1.0, ..k() }, q, Vec3::zero()).is_err());
        assert!(CameraView::new(k(), q, Vec3::zero()).is_ok());
    }

    #[test]
    fn center_round_trips_through_extrinsic_inverse() {
        let cam =
            CameraView::look_at(k(), Vec3::new(3.0, -2.0, 1.5), Vec3::new(0.1, 0.2, 0.3), Vec3::unit_z()).unwrap();
        assert!((cam.center() - Vec3::new(3.0, -2.0, 1.5)).norm() < 1e-9);
        assert!(cam.world_to_camera(cam.center()).norm() < 1e-9);
        let p = Vec3::new(0.4, -0.3, 2.0);
        assert!((cam.camera_to_world(cam.world_to_camera(p)) - p).norm() < 1e-12);
    }

    #[test]
    fn look_at_centers_target_and_keeps_up() {
        let cam = CameraView::look_at(k(), Vec3::new(5.0, 0.0, 0.0), Vec3::zero(), Vec3::unit_z()).unwrap();
        let (u, v, z) = cam.project(Vec3::zero()).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 24.0).abs() < 1e-9 && (z - 5.0).abs() < 1e-12);
        let (_, v_up, _) = cam.project(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(v_up < 24.0);
        // Degenerate up: looking straight down the up axis still succeeds.
        let top = CameraView::look_at(k(), Vec3::new(0.0, 0.0, 4.0), Vec3::zero(), Vec3::unit_z()).unwrap();
        assert!((top.forward() + Vec3::unit_z()).norm() < 1e-12);
    }

    #[test]
    fn json_record_round_trip() {
        let cam = CameraView::look_at(k(), Vec3::new(1.0, 2.0, 3.0), Vec3::zero(), Vec3::unit_z()).unwrap();
        let v = serde_json::to_value(cam).unwrap();
        assert!(v["q"].is_array() && v["t"].as_array().unwrap().len() == 3);
        assert_eq!(v["width"], 64);
        let back: CameraView<f64> = serde_json::from_value(v).unwrap();
        assert!((back.center() - cam.center()).norm() < 1e-12);
        let bad = serde_json::json!({"fx": -1.0, "fy": 1.0, "cx": 0.0, "cy": 0.0, "width": 2, "height": 2, "q": [1,0,0,0], "t": [0,0,0]});
        assert!(serde_json::from_value::<CameraView<f64>>(bad).is_err());
    }
}
