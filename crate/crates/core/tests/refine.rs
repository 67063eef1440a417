mod common;

use common::{asymmetric_mesh, random_unit, ring_cameras, rng};
use geoanchor_core::geometry::{
    BinaryMask, CameraView, Intrinsics, PointCloud, Sim3Transform, TriangleMesh, UnitQuaternion, Vec3,
};
use geoanchor_core::refine::{
    chamfer_loss, corner_loss, mask_loss, refine_from, reg_terms, sdf_penetration_loss, MaskFdSteps, Objective,
    PoseParams, RefineConfig, SceneSurface, Stage,
};
use geoanchor_core::render::rasterize_silhouette;
use rand::Rng;

const FD_EPS: f64 = 1e-5;

fn fd_grad(f: impl Fn(&PoseParams<f64>) -> f64, pose: &PoseParams<f64>) -> [f64; 7] {
    let base = pose.to_array();
    std::array::from_fn(|i| {
        let (mut p, mut m) = (base, base);
        p[i] += FD_EPS;
        m[i] -= FD_EPS;
        (f(&pose.with_array(p)) - f(&pose.with_array(m))) / (2.0 * FD_EPS)
    })
}

fn rel_err(a: [f64; 7], b: [f64; 7]) -> f64 {
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

fn random_pose(r: &mut rand_chacha::ChaCha8Rng, trans: f64) -> PoseParams<f64> {
    let locked = UnitQuaternion::from_axis_angle(random_unit(r), r.random_range(-3.0..3.0));
    PoseParams {
        locked,
        rot: random_unit(r) * r.random_range(0.0..0.3),
        t: Vec3::new(r.random_range(-trans..trans), r.random_range(-trans..trans), r.random_range(-trans..trans)),
        log_scale: r.random_range(-0.3..0.3),
    }
}

fn identity_pose() -> PoseParams<f64> {
    PoseParams::from_sim3(&Sim3Transform::identity())
}

#[test]
fn chamfer_zero_at_coincidence() {
    let samples = asymmetric_mesh().sample_surface(300, 1);
    let pose = random_pose(&mut rng(3), 1.0);
    let target = samples.transformed(&pose.to_sim3());
    let l = chamfer_loss(&samples, &target, &pose).unwrap();
    assert!(l.value < 1e-20);
    assert!(l.grad.norm() < 1e-9);
}

#[test]
fn chamfer_two_unit_spaced_points() {
    let a = PointCloud::new(vec![Vec3::zero()]);
    let b = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]);
    let l = chamfer_loss(&a, &b, &identity_pose()).unwrap();
    assert!((l.value - 2.0).abs() < 1e-12);
    assert!(chamfer_loss(&PointCloud::new(vec![]), &b, &identity_pose()).is_err());
}

/// Chamfer value with correspondences frozen at `pairs_at`, by brute force.
fn frozen_chamfer(
    samples: &PointCloud<f64>,
    target: &PointCloud<f64>,
    pairs_at: &PoseParams<f64>,
    pose: &PoseParams<f64>,
) -> f64 {
    let nearest = |q: Vec3<f64>, set: &[Vec3<f64>]| {
        (0..set.len()).min_by(|&a, &b| q.distance_squared(set[a]).total_cmp(&q.distance_squared(set[b]))).unwrap()
    };
    let at = pairs_at.to_sim3();
    let fixed: Vec<_> = samples.points().iter().map(|&p| at.apply(p)).collect();
    let tf = pose.to_sim3();
    let moved: Vec<_> = samples.points().iter().map(|&p| tf.apply(p)).collect();
    let fwd: f64 = fixed
        .iter()
        .zip(&moved)
        .map(|(&f, &m)| m.distance_squared(target.points()[nearest(f, target.points())]))
        .sum::<f64>()
        / samples.len() as f64;
    let bwd: f64 = target.points().iter().map(|&y| moved[nearest(y, &fixed)].distance_squared(y)).sum::<f64>()
        / target.len() as f64;
    fwd + bwd
}

#[test]
fn chamfer_gradient_matches_finite_differences() {
    // The oracle differentiates the loss with correspondences held fixed,
    // which is exactly what the analytic gradient claims to be.
    let samples = asymmetric_mesh().sample_surface(200, 5);
    let mut r = rng(11);
    for _ in 0..20 {
        let gt = random_pose(&mut r, 0.5);
        let target = asymmetric_mesh().sample_surface(250, 6).transformed(&gt.to_sim3());
        let pose = random_pose(&mut r, 0.5);
        let l = chamfer_loss(&samples, &target, &pose).unwrap();
        assert!((l.value - frozen_chamfer(&samples, &target, &pose, &pose)).abs() < 1e-12);
        let fd = fd_grad(|p| frozen_chamfer(&samples, &target, &pose, p), &pose);
        let g = l.grad.to_array();
        assert!(rel_err(g, fd) < 1e-4, "{g:?} vs {fd:?}");
    }
}

#[test]
fn corner_loss_simple_cases() {
    let mesh = TriangleMesh::unit_cube();
    let cloud = PointCloud::new(mesh.vertices().to_vec());
    assert!(corner_loss(&mesh, &cloud, &identity_pose()).unwrap().value < 1e-24);
    let d = 0.7;
    let shifted = cloud.transformed(&Sim3Transform::from_translation(Vec3::new(d, 0.0, 0.0)));
    let l = corner_loss(&mesh, &shifted, &identity_pose()).unwrap();
    assert!((l.value - d * d).abs() < 1e-12);
}

#[test]
fn corner_gradient_points_toward_disjoint_target() {
    let mesh = TriangleMesh::unit_cube();
    let offset = Vec3::new(10.0, -3.0, 2.0);
    let target = PointCloud::new(mesh.vertices().to_vec()).transformed(&Sim3Transform::from_translation(offset));
    let pose = identity_pose();
    let l = corner_loss(&mesh, &target, &pose).unwrap();
    assert!((-l.grad.t).dot(offset) > 0.0);
    let fd = fd_grad(|p| corner_loss(&mesh, &target, p).unwrap().value, &pose);
    assert!((-Vec3::new(fd[3], fd[4], fd[5])).dot(offset) > 0.0);
}

#[test]
fn corner_gradient_matches_finite_differences() {
    let mesh = asymmetric_mesh();
    let mut r = rng(12);
    for _ in 0..20 {
        let gt = random_pose(&mut r, 2.0);
        let target = mesh.sample_surface(100, 2).transformed(&gt.to_sim3());
        let pose = random_pose(&mut r, 2.0);
        let g = corner_loss(&mesh, &target, &pose).unwrap().grad.to_array();
        let fd = fd_grad(|p| corner_loss(&mesh, &target, p).unwrap().value, &pose);
        assert!(rel_err(g, fd) < 1e-4, "{g:?} vs {fd:?}");
    }
}

#[test]
fn corner_loss_is_translation_equivariant() {
    let mesh = asymmetric_mesh();
    let mut r = rng(13);
    for _ in 0..10 {
        let pose = random_pose(&mut r, 1.0);
        let target = mesh.sample_surface(100, 3).transformed(&random_pose(&mut r, 1.0).to_sim3());
        let shift = random_unit(&mut r) * r.random_range(0.0..20.0);
        let moved_target = target.transformed(&Sim3Transform::from_translation(shift));
        let moved_pose = PoseParams { t: pose.t + shift, ..pose };
        let a = corner_loss(&mesh, &target, &pose).unwrap().value;
        let b = corner_loss(&mesh, &moved_target, &moved_pose).unwrap().value;
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

fn front_camera() -> CameraView<f64> {
    // Looks along +z from z = -5; world x maps to image u.
    CameraView::new(Intrinsics::centered(100.0, 64, 64), UnitQuaternion::identity(), Vec3::new(0.0, 0.0, 5.0)).unwrap()
}

#[test]
fn mask_loss_matched_disjoint_and_shifted() {
    let mesh = TriangleMesh::unit_cube();
    let cam = front_camera();
    let pose = identity_pose();
    let target = rasterize_silhouette(&mesh, &pose.to_sim3(), &cam).unwrap();
    let views = vec![(cam, target.clone())];
    let steps = MaskFdSteps { rot: 0.01, trans: 0.05, log_scale: 0.01 };
    let l0 = mask_loss(&mesh, &pose, &views, &steps, [true; 7]).unwrap();
    assert_eq!(l0.value, 0.0);

    let far = PoseParams { t: Vec3::new(30.0, 0.0, 0.0), ..pose };
    assert_eq!(mask_loss(&mesh, &far, &views, &steps, [true; 7]).unwrap().value, 1.0);

    // One pixel is 5 / 100 world units at this depth.
    let shifted = PoseParams { t: Vec3::new(0.05, 0.0, 0.0), ..pose };
    let l1 = mask_loss(&mesh, &shifted, &views, &steps, [true; 7]).unwrap();
    assert!(l1.value > 0.0);
    assert!(l1.grad.t.x > 0.0, "descent along -x restores overlap");

    let empty = vec![(cam, BinaryMask::new(64, 64))];
    assert_eq!(mask_loss(&mesh, &pose, &empty, &steps, [true; 7]).unwrap().value, 1.0);
    assert!(mask_loss(&mesh, &pose, &[], &steps, [true; 7]).is_err());
}

fn ground_scene(half: f64, spacing: f64) -> SceneSurface<f64> {
    let n = (2.0 * half / spacing).round() as i64;
    let mut pts = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            pts.push(Vec3::new(-half + i as f64 * spacing, -half + j as f64 * spacing, 0.0));
        }
    }
    SceneSurface::estimate(&PointCloud::new(pts), &[Vec3::new(0.0, 0.0, 5.0)], 16).unwrap()
}

#[test]
fn sdf_loss_plane_cases() {
    let scene = ground_scene(1.0, 0.1);
    assert_eq!(scene.degenerate_count(), 0);
    assert!(scene.normals().iter().all(|n| (n.z - 1.0).abs() < 1e-9));
    let above = PointCloud::new(vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.5, 0.0, 0.0)]);
    assert_eq!(sdf_penetration_loss(&above, &scene, &identity_pose()).unwrap().loss.value, 0.0);
    let delta = 0.13;
    let below = PointCloud::new(vec![Vec3::new(0.02, 0.03, -delta)]);
    let l = sdf_penetration_loss(&below, &scene, &identity_pose()).unwrap();
    assert!((l.loss.value - delta * delta).abs() < 1e-12);
    assert!(l.loss.grad.t.z < 0.0);
}

#[test]
fn sdf_degenerate_normals_fall_back_to_unsigned() {
    let line: Vec<_> = (0..20).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
    let scene = SceneSurface::estimate(&PointCloud::new(line), &[], 16).unwrap();
    assert_eq!(scene.degenerate_count(), 20);
    let s = PointCloud::new(vec![Vec3::new(0.5, 0.0, -1.0)]);
    let l = sdf_penetration_loss(&s, &scene, &identity_pose()).unwrap();
    assert_eq!(l.loss.value, 0.0);
    assert_eq!(l.unsigned_fallbacks, 1);
}

#[test]
fn sdf_gradient_matches_finite_differences() {
    let scene = ground_scene(3.0, 0.1);
    let samples = asymmetric_mesh().sample_surface(300, 9);
    let mut r = rng(14);
    let mut checked = 0;
    while checked < 20 {
        let pose = random_pose(&mut r, 0.4);
        let l = sdf_penetration_loss(&samples, &scene, &pose).unwrap();
        if l.loss.value == 0.0 {
            continue;
        }
        let fd = fd_grad(|p| sdf_penetration_loss(&samples, &scene, p).unwrap().loss.value, &pose);
        assert!(rel_err(l.loss.grad.to_array(), fd) < 1e-4);
        checked += 1;
    }
}

#[test]
fn reg_terms_simple_cases() {
    let anchor = random_pose(&mut rng(15), 1.0);
    let r = reg_terms(&anchor, &anchor);
    assert!(r.rot.value < 1e-24 && r.trans.value == 0.0 && r.scale.value == 0.0);
    let doubled = PoseParams { log_scale: anchor.log_scale + 2f64.ln(), ..anchor };
    assert!((reg_terms(&doubled, &anchor).scale.value - 2f64.ln().powi(2)).abs() < 1e-12);
    let moved = PoseParams { t: anchor.t + Vec3::new(1.0, 0.0, 0.0), ..anchor };
    assert!((reg_terms(&moved, &anchor).trans.value - 1.0).abs() < 1e-12);
    let turned = PoseParams { rot: anchor.rot, locked: anchor.locked, ..anchor };
    let turned = PoseParams { rot: Vec3::zero(), ..turned };
    let angle = turned.rotation().angle_to(&anchor.rotation());
    assert!((reg_terms(&turned, &anchor).rot.value - angle * angle).abs() < 1e-10);
}

#[test]
fn reg_gradients_match_finite_differences() {
    let mut r = rng(16);
    for _ in 0..20 {
        let anchor = random_pose(&mut r, 1.0);
        let pose = PoseParams { locked: anchor.locked, ..random_pose(&mut r, 1.0) };
        let rt = reg_terms(&pose, &anchor);
        for (k, g) in [rt.rot.grad, rt.trans.grad, rt.scale.grad].into_iter().enumerate() {
            let fd = fd_grad(
                |p| {
                    let t = reg_terms(p, &anchor);
                    [t.rot.value, t.trans.value, t.scale.value][k]
                },
                &pose,
            );
            assert!(rel_err(g.to_array(), fd) < 1e-4, "term {k}: {:?} vs {fd:?}", g.to_array());
        }
    }
}

struct Setup {
    mesh: TriangleMesh<f64>,
    gt: Sim3Transform<f64>,
    target: PointCloud<f64>,
    scene: SceneSurface<f64>,
    views: Vec<(CameraView<f64>, BinaryMask)>,
}

fn setup() -> Setup {
    let mesh = asymmetric_mesh();
    let gt = Sim3Transform::new(
        1.3,
        UnitQuaternion::from_axis_angle(Vec3::unit_z(), 0.4),
        Vec3::new(0.2, -0.1, 0.8 * 1.3 + 0.01),
    )
    .unwrap();
    let target = mesh.sample_surface(1500, 77).transformed(&gt);
    let scene = ground_scene(2.5, 0.1);
    let views = ring_cameras(4, 5.0, 2.5, 64, 70.0)
        .into_iter()
        .map(|c| {
            let m = rasterize_silhouette(&mesh, &gt, &c).unwrap();
            (c, m)
        })
        .collect();
    Setup { mesh, gt, target, scene, views }
}

fn cfg(coarse: usize, fine: usize) -> RefineConfig {
    RefineConfig { coarse_iters: coarse, fine_iters: fine, sample_count: 600, ..RefineConfig::default() }
}

#[test]
fn refine_at_ground_truth_is_a_fixed_point() {
    let s = setup();
    let out = refine_from(&s.mesh, &s.target, Some(&s.scene), &s.views, &s.gt, &cfg(60, 60)).unwrap();
    assert!(out.aborted.is_none());
    let a = PoseParams::from_sim3(&s.gt).to_array();
    let b = PoseParams { rot: Vec3::zero(), locked: out.transform.rotation(), ..out.params }.to_array();
    let dq = out.transform.rotation().angle_to(&s.gt.rotation());
    assert!(dq < 1e-3, "rotation moved {dq}");
    for i in 3..7 {
        assert!((a[i] - b[i]).abs() < 1e-3, "param {i}: {} vs {}", a[i], b[i]);
    }
}

fn perturbed(gt: &Sim3Transform<f64>) -> Sim3Transform<f64> {
    let dq = UnitQuaternion::from_axis_angle(Vec3::new(1.0, 1.0, 0.0).normalized(), 5f64.to_radians());
    Sim3Transform::new(gt.scale() * 1.05, dq * gt.rotation(), gt.translation() + Vec3::new(0.05, -0.04, 0.03)).unwrap()
}

#[test]
fn stages_descend_and_fine_stage_keeps_rotation() {
    let s = setup();
    let init = perturbed(&s.gt);
    let out = refine_from(&s.mesh, &s.target, Some(&s.scene), &s.views, &init, &cfg(40, 40)).unwrap();
    for stage in [Stage::Coarse, Stage::Fine] {
        let recs: Vec<_> = out.trace.stage(stage).collect();
        assert!(!recs.is_empty());
        assert!(recs.last().unwrap().total <= recs[0].total);
        assert!(recs.iter().all(|r| r.total.is_finite() && r.terms.is_finite()));
    }
    let coarse_only = refine_from(&s.mesh, &s.target, Some(&s.scene), &s.views, &init, &cfg(40, 0)).unwrap();
    let dot = coarse_only.transform.rotation().dot(&out.transform.rotation()).abs();
    assert!((dot - 1.0).abs() < 1e-15);
    assert!(out.params.rot.norm() <= 10f64.to_radians() + 1e-12);
    assert!(out.trace.records[0].total > out.trace.records.last().unwrap().total);
}

#[test]
fn zero_fine_iterations_returns_coarse_result() {
    let s = setup();
    let init = perturbed(&s.gt);
    let a = refine_from(&s.mesh, &s.target, Some(&s.scene), &s.views, &init, &cfg(15, 0)).unwrap();
    let b = refine_from(&s.mesh, &s.target, Some(&s.scene), &s.views, &init, &cfg(15, 15)).unwrap();
    let coarse_b: Vec<_> = b.trace.stage(Stage::Coarse).cloned().collect();
    assert_eq!(a.trace.records, coarse_b);
    assert!(a.trace.stage(Stage::Fine).next().is_none());
}

#[test]
fn unweighted_fine_objective_equals_coarse_objective() {
    let s = setup();
    let c = RefineConfig { lambda_sdf: 0.0, reg_weights: [0.0; 3], ..cfg(1, 1) };
    let obj = Objective::new(&s.mesh, &s.target, Some(&s.scene), &s.views, &c).unwrap();
    let mut r = rng(17);
    for _ in 0..3 {
        let anchor = PoseParams::from_sim3(&perturbed(&s.gt));
        let pose = PoseParams { t: anchor.t + random_unit(&mut r) * 0.05, ..anchor };
        let coarse = obj.evaluate(&pose, Stage::Coarse, None, false).unwrap();
        let fine = obj.evaluate(&pose, Stage::Fine, Some(&anchor), false).unwrap();
        assert!((coarse.total - fine.total).abs() < 1e-12);
        for (a, b) in coarse.terms.weighted(&c).iter().zip(fine.terms.weighted(&c)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn non_finite_loss_aborts_with_initial_pose() {
    let s = setup();
    let far = PointCloud::new(vec![Vec3::new(1e200, 0.0, 0.0), Vec3::new(-1e200, 1.0, 0.0)]);
    let out = refine_from(&s.mesh, &far, None, &[], &s.gt, &cfg(5, 5)).unwrap();
    assert!(out.aborted.is_some());
    assert_eq!(out.transform, PoseParams::from_sim3(&s.gt).to_sim3());
}

#[test]
fn invalid_config_is_rejected() {
    let s = setup();
    for bad in [
        RefineConfig { lambda_mask: -1.0, ..RefineConfig::default() },
        RefineConfig { rotation_cone_deg: 200.0, ..RefineConfig::default() },
        RefineConfig { reg_weights: [1.0, f64::NAN, 1.0], ..RefineConfig::default() },
    ] {
        assert!(refine_from(&s.mesh, &s.target, None, &[], &s.gt, &bad).is_err());
    }
}

#[test]
fn trace_csv_has_header_and_rows() {
    let s = setup();
    let out = refine_from(&s.mesh, &s.target, None, &s.views, &perturbed(&s.gt), &cfg(3, 3)).unwrap();
    let mut buf = Vec::new();
    out.trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "iteration,stage,total,l_cd,l_corner,l_mask,l_sdf,r_q,r_t,r_s");
    assert_eq!(lines.len(), out.trace.records.len() + 1);
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 10));
}
