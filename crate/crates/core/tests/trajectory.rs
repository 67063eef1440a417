mod common;

use common::{random_unit, ring_cameras, rng};
use geoanchor_core::geometry::{CameraView, Intrinsics, Mat3, UnitQuaternion, Vec3};
use geoanchor_core::trajectory::{
    angular_density, densify_trajectory, filter_view_pairs, filter_view_pairs_where, sample_sphere, select_key_views,
    SphericalSamplingSpec,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use std::f64::consts::FRAC_PI_2;

fn negated(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let [w, x, y, z] = q.to_wxyz();
    UnitQuaternion::from_wxyz(-w, -x, -y, -z).unwrap()
}

#[test]
fn density_of_identical_and_uniform_steps() {
    let q = UnitQuaternion::from_axis_angle(Vec3::new(0.3, -1.0, 0.2).normalized(), 0.7);
    assert!(angular_density(&[q, q, q]).unwrap() < 1e-15);
    let axis = Vec3::new(1.0, 2.0, 3.0).normalized();
    let delta = 0.137;
    let poses: Vec<_> = (0..9).map(|i| UnitQuaternion::from_axis_angle(axis, i as f64 * delta) * q).collect();
    assert!((angular_density(&poses).unwrap() - delta / 2.0).abs() < 1e-12);
    let flipped: Vec<_> = poses.iter().enumerate().map(|(i, &p)| if i % 2 == 0 { negated(p) } else { p }).collect();
    assert!((angular_density(&flipped).unwrap() - angular_density(&poses).unwrap()).abs() < 1e-15);
    assert!(angular_density(&[q]).is_err());
}

fn view(q: UnitQuaternion<f64>, center: Vec3<f64>) -> CameraView<f64> {
    CameraView::new(Intrinsics::centered(64.0, 64, 64), q, -q.rotate(center)).unwrap()
}

#[test]
fn densify_coincident_keys_inserts_nothing() {
    let a = view(UnitQuaternion::identity(), Vec3::new(1.0, 0.0, 0.0));
    let t = densify_trajectory(&[a, a], 0.01).unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(t.rho, 0.0);
    assert_eq!(t.key_indices, vec![0, 1]);
}

#[test]
fn densify_ninety_degrees_into_nine_steps() {
    let axis = Vec3::unit_z();
    let a = view(UnitQuaternion::identity(), Vec3::new(3.0, 0.0, 0.0));
    let b = view(UnitQuaternion::from_axis_angle(axis, FRAC_PI_2), Vec3::new(0.0, 3.0, 0.0));
    let rho_max = (FRAC_PI_2 / 2.0) / 9.0;
    let t = densify_trajectory(&[a, b], rho_max).unwrap();
    assert_eq!(t.len(), 10);
    assert_eq!(t.key_indices, vec![0, 9]);
    assert_eq!(t.views[0], a);
    assert_eq!(t.views[9], b);
    let rots = t.rotations();
    for w in rots.windows(2) {
        assert!((w[0].angle_to(&w[1]) - FRAC_PI_2 / 9.0).abs() < 1e-12);
    }
    assert!((t.recompute_rho().unwrap() - t.rho).abs() < 1e-12);
    assert!(t.rho <= rho_max + 1e-15);
    for (i, v) in t.views.iter().enumerate() {
        let s = i as f64 / 9.0;
        assert!(v.center().distance(Vec3::new(3.0 * (1.0 - s), 3.0 * s, 0.0)) < 1e-12);
    }
}

#[test]
fn slerp_midpoint_is_equidistant() {
    let mut r = rng(21);
    for _ in 0..50 {
        let a = UnitQuaternion::from_axis_angle(random_unit(&mut r), r.random_range(-3.0..3.0));
        let b = UnitQuaternion::from_axis_angle(random_unit(&mut r), r.random_range(-3.0..3.0));
        let m = a.slerp(&b, 0.5);
        assert!((m.angle_to(&a) - m.angle_to(&b)).abs() < 1e-9);
    }
}

#[test]
fn densify_rejects_bad_input() {
    let a = view(UnitQuaternion::identity(), Vec3::zero());
    assert!(densify_trajectory(&[a], 0.1).is_err());
    assert!(densify_trajectory(&[a, a], 0.0).is_err());
}

fn random_views(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<CameraView<f64>> {
    (0..n)
        .map(|_| {
            let q = UnitQuaternion::from_axis_angle(random_unit(r), r.random_range(-3.1..3.1));
            view(q, random_unit(r) * r.random_range(1.0..5.0))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn densified_density_respects_limit(seed in any::<u64>(), n in 2usize..6, rho_max in 0.02f64..0.6) {
        let keys = random_views(&mut rng(seed), n);
        let t = densify_trajectory(&keys, rho_max).unwrap();
        prop_assert!(t.rho <= rho_max * (1.0 + 1e-9));
        for w in t.rotations().windows(2) {
            prop_assert!(w[0].angle_to(&w[1]) <= 2.0 * rho_max * (1.0 + 1e-9));
        }
        for (k, &i) in t.key_indices.iter().enumerate() {
            prop_assert_eq!(&t.views[i], &keys[k]);
        }
        prop_assert!((t.recompute_rho().unwrap() - t.rho).abs() < 1e-12);
        let again = densify_trajectory(&t.views, rho_max).unwrap();
        prop_assert_eq!(again.len(), t.len());
    }

    #[test]
    fn density_is_invariant_under_global_rotation(seed in any::<u64>(), n in 2usize..8) {
        let mut r = rng(seed);
        let poses: Vec<_> = random_views(&mut r, n).iter().map(|v| v.rotation()).collect();
        let g = UnitQuaternion::from_axis_angle(random_unit(&mut r), r.random_range(-3.1..3.1));
        let left: Vec<_> = poses.iter().map(|&q| g * q).collect();
        let right: Vec<_> = poses.iter().map(|&q| q * g).collect();
        let base = angular_density(&poses).unwrap();
        prop_assert!((angular_density(&left).unwrap() - base).abs() < 1e-9);
        prop_assert!((angular_density(&right).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn key_selection_ignores_input_order(seed in any::<u64>(), n in 2usize..16, k in 1usize..6) {
        let mut r = rng(seed);
        let views = random_views(&mut r, n);
        let k = k.min(n);
        let center = Vec3::new(0.1, -0.2, 0.05);
        let picked: Vec<_> = select_key_views(&views, center, k).unwrap().into_iter().map(|i| views[i]).collect();
        let mut shuffled = views.clone();
        shuffled.shuffle(&mut r);
        let again: Vec<_> = select_key_views(&shuffled, center, k).unwrap().into_iter().map(|i| shuffled[i]).collect();
        prop_assert_eq!(picked, again);
    }
}

#[test]
fn ring_keys_are_a_quarter_turn_apart() {
    let n = 24;
    let ring = ring_cameras(n, 4.0, 1.0, 64, 64.0);
    let keys = select_key_views(&ring, Vec3::zero(), 4).unwrap();
    assert_eq!(keys.len(), 4);
    let step = 360.0 / n as f64;
    let az: Vec<f64> = keys.iter().map(|&i| i as f64 * step).collect();
    for w in 0..4 {
        let gap = (az[(w + 1) % 4] - az[w]).rem_euclid(360.0);
        assert!((gap - 90.0).abs() <= step, "gaps {az:?}");
    }
    let atan: Vec<f64> = keys.iter().map(|&i| ring[i].center().y.atan2(ring[i].center().x)).collect();
    assert!(atan.windows(2).all(|w| w[0] < w[1]), "ordered by azimuth");
}

#[test]
fn key_selection_edge_cases() {
    let ring = ring_cameras(6, 4.0, 1.0, 64, 64.0);
    let mut all = select_key_views(&ring, Vec3::zero(), 6).unwrap();
    all.sort();
    assert_eq!(all, (0..6).collect::<Vec<_>>());
    assert!(select_key_views(&ring, Vec3::zero(), 7).is_err());

    // Tight cluster far out versus a lone camera closer to the center.
    let mut views: Vec<_> = (0..6)
        .map(|i| {
            let c = Vec3::new(4.0, 0.05 * i as f64, 1.0 + 0.03 * (i % 2) as f64);
            CameraView::look_at(Intrinsics::centered(64.0, 64, 64), c, Vec3::zero(), Vec3::unit_z()).unwrap()
        })
        .collect();
    views.insert(
        2,
        CameraView::look_at(Intrinsics::centered(64.0, 64, 64), Vec3::new(0.0, 2.0, 0.5), Vec3::zero(), Vec3::unit_z())
            .unwrap(),
    );
    let pick = select_key_views(&views, Vec3::zero(), 1).unwrap();
    assert_ne!(pick, vec![2]);
}

#[test]
fn sphere_sampling_places_cameras_on_sphere_facing_center() {
    let center = [0.5, -1.0, 2.0];
    let spec = SphericalSamplingSpec { radius: 2.5, center, ..SphericalSamplingSpec::default() };
    let views = sample_sphere::<f64>(&spec).unwrap();
    assert_eq!(views.len(), 96);
    let c = Vec3::from_array(center);
    for v in &views {
        assert!((v.center().distance(c) - 2.5).abs() < 1e-9);
        let to_c = c - v.center();
        let off_axis = to_c.cross(v.forward()).norm();
        assert!(off_axis < 1e-9);
        assert!(to_c.dot(v.forward()) > 0.0);
    }
    let one = sample_sphere::<f64>(&SphericalSamplingSpec { budget: 1, ..spec.clone() }).unwrap();
    assert_eq!(one.len(), 1);
    let d = one[0].center() - c;
    assert!(d.x.abs() < 1e-12 && d.y.abs() < 1e-12 && d.z > 0.0);
    let some = sample_sphere::<f64>(&SphericalSamplingSpec { budget: 40, ..spec.clone() }).unwrap();
    assert_eq!(some.len(), 40);
    assert!(sample_sphere::<f64>(&SphericalSamplingSpec { budget: 0, ..spec.clone() }).is_err());
    assert!(sample_sphere::<f64>(&SphericalSamplingSpec { budget: 97, ..spec }).is_err());
}

#[test]
fn pair_filter_cases() {
    let a = view(UnitQuaternion::identity(), Vec3::zero());
    assert!(filter_view_pairs(&[a, a], 10.0).unwrap().is_empty());
    let opposite = ring_cameras(2, 3.0, 0.0, 64, 64.0);
    let pairs = filter_view_pairs(&opposite, 90.0).unwrap();
    assert_eq!(pairs.len(), 1);
    assert!((pairs[0].disparity_deg - 180.0).abs() < 1e-9);
    assert!(filter_view_pairs(&[a], 0.0).is_err());
}

fn rotation_angle_deg(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
    let rel = a.transpose() * *b;
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

#[test]
fn pair_filter_matches_brute_force_on_ring() {
    let ring = ring_cameras(12, 3.0, 1.3, 64, 64.0);
    let pairs = filter_view_pairs(&ring, 60.0).unwrap();
    let mats: Vec<_> = ring.iter().map(|v| v.rotation().to_matrix()).collect();
    let mut expected = 0;
    for i in 0..12 {
        for j in i + 1..12 {
            if rotation_angle_deg(&mats[i], &mats[j]) >= 60.0 - 1e-6 {
                expected += 1;
            }
        }
    }
    assert_eq!(pairs.len(), expected);
    // Elevated ring cameras differ by a pure rotation about +z, so the
    // disparity is the azimuth gap: every pair at least two steps apart.
    assert_eq!(expected, 54);
    assert!(pairs.windows(2).all(|w| w[0].disparity_deg >= w[1].disparity_deg));
    let odd_only = filter_view_pairs_where(&ring, 60.0, |i| i % 2 == 1).unwrap();
    assert!(odd_only.iter().all(|p| p.a % 2 == 1 && p.b % 2 == 1));
}
