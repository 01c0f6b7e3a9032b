//! Small static KD-tree for 3D nearest-neighbor queries.

use nalgebra::Point3;

/// Static 3D KD-tree built once over a point set. Queries return indices into
/// the original slice. Ties are broken toward the lower index so results are
/// deterministic.
pub struct KdTree {
    points: Vec<Point3<f64>>,
    // Flattened recursive median splits: nodes[i] = (point index, split axis).
    order: Vec<u32>,
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        let mut scratch = idx.clone();
        build_rec(points, &mut idx, &mut scratch, 0);
        KdTree {
            points: points.to_vec(),
            order: idx,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point to `q`.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.order.len(), 0, q, &mut best);
        Some(best)
    }

    /// The `k` nearest points to `q`, ordered by (distance, index).
    /// `skip` optionally excludes one index (for self-queries).
    pub fn k_nearest(&self, q: &Point3<f64>, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search_k(0, self.order.len(), 0, q, k, skip, &mut heap);
        heap.sort_by(|a, b| a.partial_cmp(b).unwrap());
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn search(&self, lo: usize, hi: usize, axis: usize, q: &Point3<f64>, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pi = self.order[mid] as usize;
        let p = &self.points[pi];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && pi < best.0) {
            *best = (pi, d2);
        }
        let delta = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (first, second) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(first.0, first.1, next, q, best);
        if delta * delta <= best.1 {
            self.search(second.0, second.1, next, q, best);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn search_k(
        &self,
        lo: usize,
        hi: usize,
        axis: usize,
        q: &Point3<f64>,
        k: usize,
        skip: Option<usize>,
        heap: &mut Vec<(f64, usize)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pi = self.order[mid] as usize;
        if Some(pi) != skip {
            let d2 = (self.points[pi] - q).norm_squared();
            if heap.len() < k {
                heap.push((d2, pi));
                if heap.len() == k {
                    heap.sort_by(|a, b| a.partial_cmp(b).unwrap());
                }
            } else if (d2, pi) < heap[k - 1] {
                heap[k - 1] = (d2, pi);
                let mut j = k - 1;
                while j > 0 && heap[j] < heap[j - 1] {
                    heap.swap(j, j - 1);
                    j -= 1;
                }
            }
        }
        let p = &self.points[pi];
        let delta = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (first, second) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_k(first.0, first.1, next, q, k, skip, heap);
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap[k - 1].0
        };
        if delta * delta <= worst {
            self.search_k(second.0, second.1, next, q, k, skip, heap);
        }
    }
}

fn build_rec(points: &[Point3<f64>], idx: &mut [u32], scratch: &mut [u32], axis: usize) {
    if idx.len() <= 1 {
        return;
    }
    let mid = idx.len() / 2;
    // Median split with deterministic (coordinate, index) ordering.
    idx.sort_by(|&a, &b| {
        let ka = (points[a as usize][axis], a);
        let kb = (points[b as usize][axis], b);
        ka.partial_cmp(&kb).unwrap()
    });
    let next = (axis + 1) % 3;
    let (left, rest) = idx.split_at_mut(mid);
    let (_, right) = rest.split_at_mut(1);
    build_rec(points, left, scratch, next);
    build_rec(points, right, scratch, next);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = cloud(500, 1);
        let queries = cloud(100, 2);
        let tree = KdTree::build(&pts);
        for q in &queries {
            let (bi, bd) = tree.nearest(q).unwrap();
            let (oi, od) = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .min_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap())
                .map(|(i, d)| (i, d))
                .unwrap();
            assert_eq!(bi, oi);
            assert_eq!(bd, od);
        }
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let pts = cloud(300, 3);
        let queries = cloud(50, 4);
        let tree = KdTree::build(&pts);
        for q in &queries {
            let got = tree.k_nearest(q, 7, None);
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm_squared(), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<(usize, f64)> = all[..7].iter().map(|&(d, i)| (i, d)).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn skip_excludes_self() {
        let pts = cloud(50, 5);
        let tree = KdTree::build(&pts);
        for (i, p) in pts.iter().enumerate() {
            let nn = tree.k_nearest(p, 3, Some(i));
            assert!(nn.iter().all(|&(j, _)| j != i));
            assert_eq!(nn.len(), 3);
        }
    }
}
