use rayon::prelude::*;

use crate::geometry::PointCloud;
use crate::scalar::Real;
use crate::spatial::KdTree;

/// Drops points whose mean distance to their `k` nearest neighbors exceeds
/// the cloud-wide mean by more than `std_ratio` standard deviations.
/// Normals, when present, are kept in step. Returns the filtered cloud and
/// the number of removed points.
pub fn statistical_outlier_filter<T: Real>(cloud: &PointCloud<T>, k: usize, std_ratio: f64) -> (PointCloud<T>, usize) {
    let pts = cloud.points();
    if pts.len() <= k || k == 0 {
        return (cloud.clone(), 0);
    }
    let tree = KdTree::build(pts);
    let mean_dist: Vec<f64> = pts
        .par_iter()
        .map(|&p| {
            // The first neighbor is the point itself.
            let nn = tree.k_nearest(p, k + 1);
            nn.iter().skip(1).map(|&(_, d2)| d2.as_f64().sqrt()).sum::<f64>() / k as f64
        })
        .collect();
    let n = mean_dist.len() as f64;
    let mu = mean_dist.iter().sum::<f64>() / n;
    let sigma = (mean_dist.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n).sqrt();
    let limit = mu + std_ratio * sigma;
    let keep: Vec<usize> = (0..pts.len()).filter(|&i| mean_dist[i] <= limit).collect();
    let points = keep.iter().map(|&i| pts[i]).collect();
    let filtered = match cloud.normals() {
        Some(ns) => PointCloud::with_normals(points, keep.iter().map(|&i| ns[i]).collect())
            .expect("normals filtered in step with points"),
        None => PointCloud::new(points),
    };
    (filtered, pts.len() - keep.len())
}
