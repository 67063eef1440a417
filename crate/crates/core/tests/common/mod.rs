#![allow(dead_code)]

use geoanchor_core::geometry::{CameraView, Intrinsics, Sim3Transform, TriangleMesh, UnitQuaternion, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Box with a smaller box stuck on one corner: no non-trivial symmetry.
pub fn asymmetric_mesh() -> TriangleMesh<f64> {
    let body = TriangleMesh::cuboid(Vec3::zero(), Vec3::new(0.3, 0.5, 0.8));
    let knob = TriangleMesh::cuboid(Vec3::new(0.3, 0.35, 0.6), Vec3::new(0.2, 0.15, 0.2));
    TriangleMesh::merge(&[&body, &knob]).unwrap()
}

pub fn ring_cameras(n: usize, radius: f64, height: f64, size: usize, focal: f64) -> Vec<CameraView<f64>> {
    (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let eye = Vec3::new(radius * a.cos(), radius * a.sin(), height);
            CameraView::look_at(Intrinsics::centered(focal, size, size), eye, Vec3::zero(), Vec3::unit_z()).unwrap()
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3Transform<f64> {
    let axis = random_unit(rng);
    Sim3Transform::new(
        rng.random_range(0.2..5.0),
        UnitQuaternion::from_axis_angle(axis, rng.random_range(-3.1..3.1)),
        Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
    )
    .unwrap()
}
