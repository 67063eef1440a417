use crate::geometry::{TriangleMesh, Vec3};
use crate::scalar::Real;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node<T> {
    lo: Vec3<T>,
    hi: Vec3<T>,
    // Leaf: `count > 0`, faces in `order[first..first + count]`.
    // Inner: `count == 0`, children at `first` and `first + 1`.
    first: usize,
    count: usize,
}

/// Bounding-volume hierarchy over mesh triangles for closest-point queries.
#[derive(Debug, Clone)]
pub struct TriangleBvh<T> {
    tris: Vec<[Vec3<T>; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> TriangleBvh<T> {
    pub fn build(mesh: &TriangleMesh<T>) -> Self {
        let tris: Vec<_> = mesh.triangles().collect();
        let mut bvh = Self { order: (0..tris.len()).collect(), tris, nodes: Vec::new() };
        if !bvh.tris.is_empty() {
            bvh.nodes.push(Node { lo: Vec3::zero(), hi: Vec3::zero(), first: 0, count: 0 });
            bvh.split(0, 0, bvh.tris.len());
        }
        bvh
    }

    fn bounds(&self, start: usize, end: usize) -> (Vec3<T>, Vec3<T>) {
        let t0 = self.tris[self.order[start]][0];
        self.order[start..end].iter().fold((t0, t0), |(lo, hi), &f| {
            let [a, b, c] = self.tris[f];
            (lo.min(a).min(b).min(c), hi.max(a).max(b).max(c))
        })
    }

    fn split(&mut self, node: usize, start: usize, end: usize) {
        let (lo, hi) = self.bounds(start, end);
        self.nodes[node].lo = lo;
        self.nodes[node].hi = hi;
        if end - start <= LEAF_SIZE {
            self.nodes[node].first = start;
            self.nodes[node].count = end - start;
            return;
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let tris = &self.tris;
        let key = |f: usize| tris[f][0][axis] + tris[f][1][axis] + tris[f][2][axis];
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal)
        });
        let left = self.nodes.len();
        let blank = Node { lo, hi, first: 0, count: 0 };
        self.nodes.push(blank.clone());
        self.nodes.push(blank);
        self.nodes[node].first = left;
        self.nodes[node].count = 0;
        self.split(left, start, mid);
        self.split(left + 1, mid, end);
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    /// Closest surface point to `q`: `(face index, point, squared distance)`.
    pub fn closest_point(&self, q: Vec3<T>) -> Option<(usize, Vec3<T>, T)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, q, T::infinity());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if box_distance_squared(node.lo, node.hi, q) > best.2 {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.first..node.first + node.count] {
                    let [a, b, c] = self.tris[f];
                    let p = closest_point_on_triangle(q, a, b, c);
                    let d = p.distance_squared(q);
                    if d < best.2 || (d == best.2 && f < best.0) {
                        best = (f, p, d);
                    }
                }
            } else {
                let (l, r) = (node.first, node.first + 1);
                let dl = box_distance_squared(self.nodes[l].lo, self.nodes[l].hi, q);
                let dr = box_distance_squared(self.nodes[r].lo, self.nodes[r].hi, q);
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some(best)
    }
}

fn box_distance_squared<T: Real>(lo: Vec3<T>, hi: Vec3<T>, q: Vec3<T>) -> T {
    let d = (lo - q).max(q - hi).max(Vec3::zero());
    d.norm_squared()
}

/// Closest point on triangle `abc` to `p` (Voronoi-region classification).
pub fn closest_point_on_triangle<T: Real>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Vec3<T> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    let zero = T::zero();
    if d1 <= zero && d2 <= zero {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= zero && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= zero && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && (d4 - d3) >= zero && (d5 - d6) >= zero {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = T::one() / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triangle_closest_point_regions() {
        let (a, b, c) = (Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        assert!(
            (closest_point_on_triangle(Vec3::new(0.2, 0.2, 3.0), a, b, c) - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15
        );
        assert_eq!(closest_point_on_triangle(Vec3::new(-1.0, -1.0, 0.0), a, b, c), a);
        assert_eq!(closest_point_on_triangle(Vec3::new(2.0, -0.5, 0.0), a, b, c), b);
        let e = closest_point_on_triangle(Vec3::new(1.0, 1.0, 0.0), a, b, c);
        assert!((e - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mesh = TriangleMesh::<f64>::icosphere(1.0, 2);
        let bvh = TriangleBvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let q = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (_, _, d) = bvh.closest_point(q).unwrap();
            let brute = mesh
                .triangles()
                .map(|[a, b, c]| closest_point_on_triangle(q, a, b, c).distance_squared(q))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d, brute);
        }
    }
}
