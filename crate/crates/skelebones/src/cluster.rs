//! Motion-aware vertex clustering via LBG-style split-and-refine vector
//! quantization. Vertices moving under a common rigid transform end up in the
//! same cluster; per-cluster per-frame rigid transforms initialize the bone
//! optimization.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::se3::{kabsch_fit_transform, RigidTransform};
use crate::sequence::VertexSequence;

/// Parameters for [`lbg_cluster`].
#[derive(Debug, Clone)]
pub struct ClusterParams {
    /// Hard cap on the number of clusters.
    pub max_bones: usize,
    /// Stop splitting once every cluster's RMS rigid residual falls below
    /// this fraction of the bounding-box diagonal.
    pub distortion_tol: f64,
    /// Clusters smaller than this are dissolved into their members' next-best
    /// clusters.
    pub min_cluster_size: usize,
    /// Seed for the fallback split direction (the primary direction is the
    /// deterministic principal component of the cluster's descriptors).
    pub seed: u64,
    /// Descriptors are subsampled to at most this many frames.
    pub descriptor_max_frames: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            max_bones: 50,
            distortion_tol: 0.005,
            min_cluster_size: 10,
            seed: 0,
            descriptor_max_frames: 32,
        }
    }
}

/// Result of motion clustering: per-vertex labels plus per-cluster per-frame
/// rigid transforms and RMS residuals.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub cluster_count: usize,
    /// `transforms[frame][cluster]`, canonical frame pinned to identity.
    pub transforms: Vec<Vec<RigidTransform>>,
    /// Per-cluster RMS reconstruction distance (scene units).
    pub residuals: Vec<f64>,
}

/// Per-vertex motion descriptor: concatenated displacement from the canonical
/// frame over the non-canonical frames, uniformly subsampled to at most
/// `max_frames` frames.
pub fn motion_descriptor(seq: &VertexSequence, vertex: usize, max_frames: usize) -> Vec<f64> {
    let canonical = seq.canonical_index();
    let base = seq.frame(canonical)[vertex];
    let others: Vec<usize> = (0..seq.frame_count()).filter(|&f| f != canonical).collect();
    let picks: Vec<usize> = if others.len() <= max_frames {
        others
    } else {
        (0..max_frames)
            .map(|i| others[i * others.len() / max_frames])
            .collect()
    };
    let mut d = Vec::with_capacity(picks.len() * 3);
    for f in picks {
        let delta = seq.frame(f)[vertex] - base;
        d.extend_from_slice(&[delta.x, delta.y, delta.z]);
    }
    d
}

/// Per-frame rigid transforms for each labeled cluster, fit by Kabsch from the
/// canonical frame. The canonical frame is exactly identity.
pub fn fit_cluster_transforms(
    seq: &VertexSequence,
    labels: &[usize],
    cluster_count: usize,
) -> Result<Vec<Vec<RigidTransform>>> {
    let canonical = seq.canonical_index();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cluster_count];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut out = vec![vec![RigidTransform::identity(); cluster_count]; seq.frame_count()];
    for (b, verts) in members.iter().enumerate() {
        let src: Vec<Point3<f64>> = verts.iter().map(|&i| seq.frame(canonical)[i]).collect();
        for f in 0..seq.frame_count() {
            if f == canonical {
                continue;
            }
            let dst: Vec<Point3<f64>> = verts.iter().map(|&i| seq.frame(f)[i]).collect();
            out[f][b] = kabsch_fit_transform(&src, &dst, None)
                .map_err(|_| Error::DegenerateCluster(b))?;
        }
    }
    Ok(out)
}

/// LBG split-and-refine clustering of vertices by rigid motion.
///
/// Starts from a single cluster and repeatedly splits the cluster with the
/// highest rigid reconstruction residual (seeds at descriptor centroid ± ε
/// along the principal deviation direction), then Lloyd-refines assignments
/// against the per-cluster Kabsch transforms. Stops when the worst cluster
/// residual drops below `distortion_tol · bbox_diag` or `max_bones` is hit.
pub fn lbg_cluster(seq: &VertexSequence, params: &ClusterParams) -> Result<ClusterAssignment> {
    if seq.frame_count() < 2 {
        return Err(Error::InsufficientFrames(
            "clustering needs at least 2 frames".into(),
        ));
    }
    let n = seq.vertex_count();
    let tol = params.distortion_tol * seq.bbox_diagonal();
    let descriptors: Vec<Vec<f64>> = (0..n)
        .map(|i| motion_descriptor(seq, i, params.descriptor_max_frames))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut labels = vec![0usize; n];
    let mut b = 1usize;

    loop {
        let (transforms, new_labels, new_b) =
            fit_with_merging(seq, labels.clone(), b, params.min_cluster_size)?;
        labels = new_labels;
        b = new_b;
        let residuals = cluster_residuals(seq, &labels, b, &transforms);
        let worst = residuals
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a,ary| (a.1, a.0).partial_cmp(&(ary.1, ary.0)).unwrap())
            .map(|(i, r)| (i, r))
            .unwrap();

        if worst.1 < tol || b >= params.max_bones {
            return Ok(ClusterAssignment {
                labels,
                cluster_count: b,
                transforms,
                residuals,
            });
        }

        // Split the worst cluster along its principal descriptor direction.
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == worst.0).collect();
        if members.len() < 2 * params.min_cluster_size {
            // Cannot split without creating an undersized cluster.
            return Ok(ClusterAssignment {
                labels,
                cluster_count: b,
                transforms,
                residuals,
            });
        }
        let dir = split_direction(&descriptors, &members, &mut rng);
        let centroid = descriptor_centroid(&descriptors, &members);
        let mut moved = 0usize;
        for &i in &members {
            let proj: f64 = descriptors[i]
                .iter()
                .zip(&centroid)
                .zip(&dir)
                .map(|((x, c), u)| (x - c) * u)
                .sum();
            if proj > 0.0 {
                labels[i] = b;
                moved += 1;
            }
        }
        if moved == 0 || moved == members.len() {
            // Degenerate split; give up rather than loop forever.
            log::warn!("cluster split produced an empty side; stopping at B={b}");
            return Ok(ClusterAssignment {
                labels,
                cluster_count: b,
                transforms,
                residuals,
            });
        }
        b += 1;

        // Lloyd refinement against per-cluster rigid transforms.
        for _ in 0..20 {
            let (transforms, merged_labels, merged_b) =
                fit_with_merging(seq, labels.clone(), b, params.min_cluster_size)?;
            labels = merged_labels;
            b = merged_b;
            let mut changed = false;
            for i in 0..n {
                let vc = seq.canonical_frame()[i];
                let mut best = (f64::INFINITY, labels[i]);
                for cb in 0..b {
                    let mut sse = 0.0;
                    for f in 0..seq.frame_count() {
                        let err = transforms[f][cb].apply(&vc) - seq.frame(f)[i];
                        sse += err.norm_squared();
                    }
                    if sse < best.0 {
                        best = (sse, cb);
                    }
                }
                if best.1 != labels[i] {
                    labels[i] = best.1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
}

/// Fits cluster transforms, merging degenerate or undersized clusters into
/// their nearest neighbor (by canonical centroid) until every cluster fits.
fn fit_with_merging(
    seq: &VertexSequence,
    mut labels: Vec<usize>,
    mut b: usize,
    min_size: usize,
) -> Result<(Vec<Vec<RigidTransform>>, Vec<usize>, usize)> {
    loop {
        if b == 0 {
            return Err(Error::ClusteringFailed(
                "all clusters merged away".into(),
            ));
        }
        // Dissolve undersized clusters first.
        let mut counts = vec![0usize; b];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(small) = (0..b).find(|&c| counts[c] < min_size && b > 1) {
            let target = nearest_cluster(seq, &labels, b, small);
            merge_cluster(&mut labels, small, target, &mut b);
            continue;
        }
        match fit_cluster_transforms(seq, &labels, b) {
            Ok(t) => return Ok((t, labels, b)),
            Err(Error::DegenerateCluster(c)) if b > 1 => {
                let target = nearest_cluster(seq, &labels, b, c);
                merge_cluster(&mut labels, c, target, &mut b);
            }
            Err(Error::DegenerateCluster(_)) => {
                return Err(Error::ClusteringFailed(
                    "single remaining cluster is degenerate".into(),
                ))
            }
            Err(e) => return Err(e),
        }
    }
}

fn nearest_cluster(seq: &VertexSequence, labels: &[usize], b: usize, from: usize) -> usize {
    let canonical = seq.canonical_frame();
    let mut centroids = vec![(nalgebra::Vector3::zeros(), 0usize); b];
    for (i, &l) in labels.iter().enumerate() {
        centroids[l].0 += canonical[i].coords;
        centroids[l].1 += 1;
    }
    let pos = |c: usize| centroids[c].0 / (centroids[c].1.max(1) as f64);
    let me = pos(from);
    (0..b)
        .filter(|&c| c != from && centroids[c].1 > 0)
        .min_by(|&x, &y| {
            let dx = (pos(x) - me).norm_squared();
            let dy = (pos(y) - me).norm_squared();
            (dx, x).partial_cmp(&(dy, y)).unwrap()
        })
        .unwrap_or(from)
}

fn merge_cluster(labels: &mut [usize], from: usize, into: usize, b: &mut usize) {
    let last = *b - 1;
    for l in labels.iter_mut() {
        if *l == from {
            *l = into;
        }
    }
    // Compact: move the last cluster index into the vacated slot.
    if from != last {
        for l in labels.iter_mut() {
            if *l == last {
                *l = from;
            }
        }
    }
    *b -= 1;
}

fn cluster_residuals(
    seq: &VertexSequence,
    labels: &[usize],
    b: usize,
    transforms: &[Vec<RigidTransform>],
) -> Vec<f64> {
    let mut sse = vec![0.0f64; b];
    let mut counts = vec![0usize; b];
    let canonical = seq.canonical_frame();
    for f in 0..seq.frame_count() {
        for (i, &l) in labels.iter().enumerate() {
            let err = transforms[f][l].apply(&canonical[i]) - seq.frame(f)[i];
            sse[l] += err.norm_squared();
            counts[l] += 1;
        }
    }
    (0..b)
        .map(|c| {
            if counts[c] == 0 {
                0.0
            } else {
                (sse[c] / counts[c] as f64).sqrt()
            }
        })
        .collect()
}

/// Total squared reconstruction error of an assignment (used by tests to
/// check that splitting never makes things worse).
pub fn total_sse(
    seq: &VertexSequence,
    labels: &[usize],
    transforms: &[Vec<RigidTransform>],
) -> f64 {
    let canonical = seq.canonical_frame();
    let mut sse = 0.0;
    for f in 0..seq.frame_count() {
        for (i, &l) in labels.iter().enumerate() {
            sse += (transforms[f][l].apply(&canonical[i]) - seq.frame(f)[i]).norm_squared();
        }
    }
    sse
}

fn descriptor_centroid(descriptors: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = descriptors[members[0]].len();
    let mut c = vec![0.0; dim];
    for &i in members {
        for (a, x) in c.iter_mut().zip(&descriptors[i]) {
            *a += x;
        }
    }
    for a in c.iter_mut() {
        *a /= members.len() as f64;
    }
    c
}

/// Principal deviation direction of a cluster's descriptors via power
/// iteration. Start vector and sign come from the member with the largest
/// deviation, so the result is equivariant under global rigid motion of the
/// sequence. Falls back to a seeded random direction if the deviations vanish.
fn split_direction(
    descriptors: &[Vec<f64>],
    members: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let centroid = descriptor_centroid(descriptors, members);
    let dim = centroid.len();
    let dev = |i: usize| -> Vec<f64> {
        descriptors[i]
            .iter()
            .zip(&centroid)
            .map(|(x, c)| x - c)
            .collect()
    };
    let norms: Vec<f64> = members
        .iter()
        .map(|&i| dev(i).iter().map(|x| x * x).sum::<f64>())
        .collect();
    let (anchor_pos, &max_norm) = norms
        .iter()
        .enumerate()
        .max_by(|a, bb| (a.1, std::cmp::Reverse(a.0)).partial_cmp(&(bb.1, std::cmp::Reverse(bb.0))).unwrap())
        .unwrap();
    if max_norm <= 0.0 {
        let mut u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        u.iter_mut().for_each(|x| *x /= n);
        return u;
    }
    let anchor = dev(members[anchor_pos]);
    let mut u = anchor.clone();
    normalize(&mut u);
    for _ in 0..15 {
        let mut next = vec![0.0; dim];
        for &i in members {
            let d = dev(i);
            let proj: f64 = d.iter().zip(&u).map(|(a, b)| a * b).sum();
            for (n, x) in next.iter_mut().zip(&d) {
                *n += proj * x;
            }
        }
        if next.iter().map(|x| x * x).sum::<f64>() <= 0.0 {
            break;
        }
        normalize(&mut next);
        u = next;
    }
    // Deterministic sign: the anchor member projects positively.
    let s: f64 = anchor.iter().zip(&u).map(|(a, b)| a * b).sum();
    if s < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    u
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
