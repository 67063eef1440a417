use crate::error::{Error, Result};
use crate::geometry::{symmetric_eigen, Mat3, PointCloud, Sim3Transform, UnitQuaternion, Vec3};
use crate::scalar::Real;

/// Closed-form least-squares similarity transform mapping `source[i]` onto
/// `target[i]`:
///
/// `argmin_{s,R,t} Σ ‖target_i − (s·R·source_i + t)‖²`
///
/// The rotation is the dominant eigenvector of Horn's 4×4 quaternion
/// matrix, which maximizes `tr(Rᵀ·Σ)` over proper rotations only, so the
/// result never contains a reflection.
pub fn umeyama_sim3<T: Real>(source: &PointCloud<T>, target: &PointCloud<T>) -> Result<Sim3Transform<T>> {
    umeyama_points(source.points(), target.points())
}

pub(crate) fn umeyama_points<T: Real>(src: &[Vec3<T>], dst: &[Vec3<T>]) -> Result<Sim3Transform<T>> {
    if src.len() != dst.len() {
        return Err(Error::InvalidArgument(format!(
            "correspondence count mismatch: {} source vs {} target",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 correspondences, got {}", src.len())));
    }
    let mu_s = Vec3::centroid(src).expect("non-empty");
    let mu_d = Vec3::centroid(dst).expect("non-empty");

    let mut cov_s = Mat3::zero();
    let mut cross = Mat3::zero();
    let mut var_s = T::zero();
    for (&a, &b) in src.iter().zip(dst) {
        let a = a - mu_s;
        let b = b - mu_d;
        cov_s = cov_s + Mat3::outer(a, a);
        cross = cross + Mat3::outer(a, b);
        var_s += a.norm_squared();
    }
    let (spread, _) = symmetric_eigen(cov_s.m);
    if !(var_s > T::zero()) || spread[0] <= T::epsilon() * mu_s.norm_squared().max(T::one()) {
        return Err(Error::Degenerate("source has zero variance".into()));
    }
    if spread[1] <= T::lit(1e-12) * spread[0] {
        return Err(Error::Degenerate("source points are collinear".into()));
    }

    let s = &cross.m;
    let (sxx, sxy, sxz) = (s[0][0], s[0][1], s[0][2]);
    let (syx, syy, syz) = (s[1][0], s[1][1], s[1][2]);
    let (szx, szy, szz) = (s[2][0], s[2][1], s[2][2]);
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (_, vecs) = symmetric_eigen(n);
    let q = vecs[0];
    let rotation = UnitQuaternion::from_wxyz(q[0], q[1], q[2], q[3])?;

    let mut num = T::zero();
    for (&a, &b) in src.iter().zip(dst) {
        num += (b - mu_d).dot(rotation.rotate(a - mu_s));
    }
    let scale = num / var_s;
    if !(scale > T::zero()) {
        return Err(Error::Degenerate(format!("non-positive optimal scale {scale}")));
    }
    let translation = mu_d - rotation.rotate(mu_s) * scale;
    Sim3Transform::new(scale, rotation, translation)
}

/// Root-mean-square distance between `pose(source[i])` and `target[i]`.
pub fn rms_residual<T: Real>(pose: &Sim3Transform<T>, src: &[Vec3<T>], dst: &[Vec3<T>]) -> T {
    if src.is_empty() {
        return T::zero();
    }
    let sum: T = src.iter().zip(dst).map(|(&a, &b)| pose.apply(a).distance_squared(b)).sum();
    (sum / T::from_count(src.len())).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3<f64>> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3Transform<f64> {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Sim3Transform::new(
            rng.random_range(0.2..5.0),
            UnitQuaternion::from_axis_angle(axis, rng.random_range(-3.1..3.1)),
            Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
        )
        .unwrap()
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_points(&mut rng, 100);
        let truth = random_sim3(&mut rng);
        let dst: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let est = umeyama_points(&src, &dst).unwrap();
        assert!(((est.scale() - truth.scale()) / truth.scale()).abs() < 1e-9);
        assert!(est.rotation().angle_to(&truth.rotation()) < 1e-9);
        assert!((est.translation() - truth.translation()).norm() < 1e-9);
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_points(&mut rng, 20);
        let est = umeyama_points(&src, &src).unwrap();
        assert!((est.scale() - 1.0).abs() < 1e-12);
        assert!(est.rotation().angle() < 1e-9);
        assert!(est.translation().norm() < 1e-12);
    }

    #[test]
    fn mirrored_target_never_reflects() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_points(&mut rng, 50);
        let dst: Vec<_> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let est = umeyama_points(&src, &dst).unwrap();
        let r = est.rotation().to_matrix();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        // Best proper fit: no random rotation/scale does better.
        let best = rms_residual(&est, &src, &dst);
        for _ in 0..500 {
            let cand = random_sim3(&mut rng);
            let t = Vec3::centroid(&dst).unwrap() - cand.apply(Vec3::centroid(&src).unwrap()) + cand.translation();
            let cand = Sim3Transform::new(cand.scale(), cand.rotation(), t).unwrap();
            assert!(best <= rms_residual(&cand, &src, &dst) + 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let p = |x: f64| Vec3::new(x, 2.0 * x, -x);
        assert!(matches!(umeyama_points(&[p(0.0), p(1.0)], &[p(0.0), p(1.0)]), Err(Error::Degenerate(_))));
        let line = [p(0.0), p(1.0), p(2.0), p(3.0)];
        assert!(matches!(umeyama_points(&line, &line), Err(Error::Degenerate(_))));
        let same = [p(1.0); 4];
        assert!(matches!(umeyama_points(&same, &line), Err(Error::Degenerate(_))));
        assert!(umeyama_points(&line[..3], &line).is_err());
    }

    #[test]
    fn rescaled_target_scales_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_points(&mut rng, 60);
        let noise: Vec<_> = random_points(&mut rng, 60);
        let truth = random_sim3(&mut rng);
        let dst: Vec<_> = src.iter().zip(&noise).map(|(&p, &n)| truth.apply(p) + n * 0.05).collect();
        let base = umeyama_points(&src, &dst).unwrap();
        for c in [0.1, 3.0, 17.0] {
            let scaled: Vec<_> = dst.iter().map(|&p| p * c).collect();
            let est = umeyama_points(&src, &scaled).unwrap();
            assert!((est.scale() / base.scale() / c - 1.0).abs() < 1e-9);
            assert!(est.rotation().dot(&base.rotation()).abs() > 1.0 - 1e-9);
        }
    }
}
