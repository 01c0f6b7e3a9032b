//! Smooth skinning decomposition with rigid bones: alternating optimization
//! of sparse skinning weights and per-frame rigid bone transforms, plus the
//! local-rigidity diagnostic evaluated on raw sequences.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::knn::KdTree;
use crate::se3::{self, kabsch_fit, lbs_apply, RigidTransform};
use crate::sequence::VertexSequence;

/// Sparse row-stochastic N×B skinning matrix. Each row holds at most K
/// `(bone, weight)` pairs, sorted by bone index, with nonnegative entries
/// summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    bones: usize,
}

impl SkinningMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, bones: usize) -> Result<Self> {
        let m = SkinningMatrix { rows, bones };
        m.validate()?;
        Ok(m)
    }

    /// One-hot rows from cluster labels.
    pub fn from_labels(labels: &[usize], bones: usize) -> Result<Self> {
        Self::from_rows(labels.iter().map(|&l| vec![(l, 1.0)]).collect(), bones)
    }

    /// All vertices fully bound to a single bone.
    pub fn uniform_single_bone(vertices: usize) -> Self {
        SkinningMatrix {
            rows: vec![vec![(0, 1.0)]; vertices],
            bones: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            let mut sum = 0.0;
            let mut prev: Option<usize> = None;
            for &(b, w) in row {
                if b >= self.bones {
                    return Err(Error::ShapeError(format!(
                        "row {i} references bone {b} of {}",
                        self.bones
                    )));
                }
                if let Some(p) = prev {
                    if b <= p {
                        return Err(Error::ShapeError(format!(
                            "row {i} has unsorted or duplicate bone indices"
                        )));
                    }
                }
                prev = Some(b);
                if !(0.0..=1.0 + 1e-9).contains(&w) {
                    return Err(Error::InvalidWeights(format!(
                        "row {i} weight {w} outside [0,1]"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidWeights(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.rows.len()
    }

    pub fn bone_count(&self) -> usize {
        self.bones
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Bone with the largest weight for vertex `i` (ties toward lower index).
    pub fn argmax_bone(&self, i: usize) -> usize {
        self.rows[i]
            .iter()
            .cloned()
            .max_by(|a, b| (a.1, std::cmp::Reverse(a.0)).partial_cmp(&(b.1, std::cmp::Reverse(b.0))).unwrap())
            .map(|(b, _)| b)
            .unwrap_or(0)
    }

    pub fn weight(&self, i: usize, bone: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|&&(b, _)| b == bone)
            .map(|&(_, w)| w)
            .unwrap_or(0.0)
    }

    /// Total weight mass per bone.
    pub fn bone_masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.bones];
        for row in &self.rows {
            for &(b, w) in row {
                m[b] += w;
            }
        }
        m
    }
}

/// F×B rigid bone transform track; the canonical frame is pinned to identity.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTrack {
    /// `transforms[frame][bone]`.
    pub transforms: Vec<Vec<RigidTransform>>,
}

impl BoneTrack {
    pub fn new(transforms: Vec<Vec<RigidTransform>>) -> Self {
        BoneTrack { transforms }
    }

    pub fn frame_count(&self) -> usize {
        self.transforms.len()
    }

    pub fn bone_count(&self) -> usize {
        self.transforms.first().map_or(0, |f| f.len())
    }

    pub fn frame(&self, f: usize) -> &[RigidTransform] {
        &self.transforms[f]
    }
}

/// Outcome of [`ssdr_solve`].
#[derive(Debug, Clone)]
pub struct SsdrOutcome {
    pub weights: SkinningMatrix,
    pub bones: BoneTrack,
    /// Final LBS reconstruction RMSE normalized by the bbox diagonal.
    pub rmse_normalized: f64,
    /// Total squared error after each full alternation (index 0 = initial).
    pub sse_history: Vec<f64>,
    /// Bones dropped for losing all weight mass (original indices).
    pub dropped_bones: Vec<usize>,
}

/// SSDR solve parameters.
#[derive(Debug, Clone, Copy)]
pub struct SsdrParams {
    pub iterations: usize,
    /// Max nonzero weights per vertex.
    pub weights_per_vertex: usize,
    /// Stop when the RMSE improvement over one iteration falls below
    /// `tol · bbox_diag`.
    pub tolerance: f64,
}

impl Default for SsdrParams {
    fn default() -> Self {
        SsdrParams {
            iterations: 20,
            weights_per_vertex: 4,
            tolerance: 1e-7,
        }
    }
}

/// Alternating skinning decomposition from a clustering initialization.
///
/// Each full iteration solves per-vertex weights (constrained least squares
/// over the K best candidate bones, kept only if it improves that vertex) and
/// then per-(frame, bone) rigid transforms (weighted Kabsch against the
/// residual targets with the other bones' contributions removed). The total
/// squared error never increases.
pub fn ssdr_solve(
    seq: &VertexSequence,
    init: &ClusterAssignment,
    params: &SsdrParams,
) -> Result<SsdrOutcome> {
    let n = seq.vertex_count();
    let frames = seq.frame_count();
    let canonical = seq.canonical_index();
    if init.labels.len() != n {
        return Err(Error::ShapeError(format!(
            "init labels for {} vertices, sequence has {n}",
            init.labels.len()
        )));
    }
    let k = params.weights_per_vertex.max(1);

    let mut bones = init.cluster_count;
    let mut weights = SkinningMatrix::from_labels(&init.labels, bones)?;
    let mut transforms = init.transforms.clone();
    let mut dropped_original = Vec::new();
    // Map current bone index -> original for drop reporting.
    let mut original_ids: Vec<usize> = (0..bones).collect();

    let diag = seq.bbox_diagonal();
    let mut sse_history = vec![total_sse(seq, &weights, &transforms)];

    if params.iterations == 0 {
        let rmse = (sse_history[0] / (n * frames) as f64).sqrt();
        return Ok(SsdrOutcome {
            weights,
            bones: BoneTrack::new(transforms),
            rmse_normalized: rmse / diag,
            sse_history,
            dropped_bones: dropped_original,
        });
    }

    let mut prev_rmse = (sse_history[0] / (n * frames) as f64).sqrt();
    for _iter in 0..params.iterations {
        solve_weights(seq, &mut weights, &transforms, k);
        solve_transforms(seq, &weights, &mut transforms, canonical);

        // Drop bones that lost all weight mass.
        let masses = weights.bone_masses();
        if masses.iter().any(|&m| m <= 1e-12) {
            let keep: Vec<usize> = (0..bones).filter(|&b| masses[b] > 1e-12).collect();
            for b in 0..bones {
                if masses[b] <= 1e-12 {
                    log::info!("dropping bone {} (no remaining weight mass)", original_ids[b]);
                    dropped_original.push(original_ids[b]);
                }
            }
            let remap: Vec<Option<usize>> = {
                let mut r = vec![None; bones];
                for (new, &old) in keep.iter().enumerate() {
                    r[old] = Some(new);
                }
                r
            };
            let rows = weights
                .rows()
                .iter()
                .map(|row| {
                    row.iter()
                        .filter_map(|&(b, w)| remap[b].map(|nb| (nb, w)))
                        .collect()
                })
                .collect();
            bones = keep.len();
            original_ids = keep.iter().map(|&b| original_ids[b]).collect();
            weights = SkinningMatrix::from_rows(rows, bones)?;
            for frame in transforms.iter_mut() {
                *frame = keep.iter().map(|&b| frame[b]).collect();
            }
        }

        let sse = total_sse(seq, &weights, &transforms);
        sse_history.push(sse);
        let rmse = (sse / (n * frames) as f64).sqrt();
        if prev_rmse - rmse < params.tolerance * diag {
            break;
        }
        prev_rmse = rmse;
    }

    let final_sse = *sse_history.last().unwrap();
    Ok(SsdrOutcome {
        weights,
        bones: BoneTrack::new(transforms),
        rmse_normalized: (final_sse / (n * frames) as f64).sqrt() / diag,
        sse_history,
        dropped_bones: dropped_original,
    })
}

fn total_sse(seq: &VertexSequence, w: &SkinningMatrix, transforms: &[Vec<RigidTransform>]) -> f64 {
    let canonical = seq.canonical_frame();
    let mut sse = 0.0;
    for (f, frame_t) in transforms.iter().enumerate() {
        let obs = seq.frame(f);
        for i in 0..canonical.len() {
            let mut p = Vector3::zeros();
            for &(b, wv) in w.row(i) {
                p += wv * frame_t[b].apply(&canonical[i]).coords;
            }
            sse += (p - obs[i].coords).norm_squared();
        }
    }
    sse
}

/// Per-vertex weight solve: pick the K bones with the lowest standalone
/// residual, solve the simplex-constrained least squares over them by active
/// set, and keep the result only if it beats the current row.
fn solve_weights(
    seq: &VertexSequence,
    weights: &mut SkinningMatrix,
    transforms: &[Vec<RigidTransform>],
    k: usize,
) {
    let n = seq.vertex_count();
    let frames = seq.frame_count();
    let bones = weights.bone_count();
    let canonical = seq.canonical_frame();

    let mut new_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    // Per-frame transformed positions per bone, reused across vertices.
    for i in 0..n {
        let vc = canonical[i];
        // Standalone residual per bone.
        let mut resid: Vec<(f64, usize)> = (0..bones)
            .map(|b| {
                let mut r = 0.0;
                for (f, frame_t) in transforms.iter().enumerate() {
                    r += (frame_t[b].apply(&vc) - seq.frame(f)[i]).norm_squared();
                }
                (r, b)
            })
            .collect();
        resid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cand: Vec<usize> = resid.iter().take(k).map(|&(_, b)| b).collect();

        // Least squares over candidates: columns a_b = stacked T_b(vc).
        let kk = cand.len();
        let mut gram = DMatrix::<f64>::zeros(kk, kk);
        let mut rhs = DVector::<f64>::zeros(kk);
        let mut cols: Vec<Vec<Vector3<f64>>> = vec![Vec::with_capacity(frames); kk];
        for (f, frame_t) in transforms.iter().enumerate() {
            let y = seq.frame(f)[i].coords;
            for (ci, &b) in cand.iter().enumerate() {
                let a = frame_t[b].apply(&vc).coords;
                rhs[ci] += a.dot(&y);
                cols[ci].push(a);
            }
            let _ = f;
        }
        for a in 0..kk {
            for b in a..kk {
                let g: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x.dot(y)).sum();
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }

        let sol = simplex_least_squares(&gram, &rhs);
        let new_row: Option<Vec<(usize, f64)>> = sol.map(|w| {
            let mut row: Vec<(usize, f64)> = cand
                .iter()
                .zip(w.iter())
                .filter(|&(_, &wv)| wv > 1e-12)
                .map(|(&b, &wv)| (b, wv))
                .collect();
            row.sort_by_key(|&(b, _)| b);
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            if s > 0.0 {
                for e in row.iter_mut() {
                    e.1 /= s;
                }
            }
            row
        });

        // Keep the better of old and new (possibly degenerate solve).
        let old_row = weights.row(i).to_vec();
        let row = match new_row {
            Some(row) if !row.is_empty() => {
                let old_sse = row_sse(seq, i, &vc, &old_row, transforms);
                let new_sse = row_sse(seq, i, &vc, &row, transforms);
                if new_sse <= old_sse {
                    row
                } else {
                    old_row
                }
            }
            _ => old_row,
        };
        new_rows.push(row);
    }
    *weights = SkinningMatrix::from_rows(new_rows, bones).expect("weight solve kept simplex rows");
}

fn row_sse(
    seq: &VertexSequence,
    i: usize,
    vc: &Point3<f64>,
    row: &[(usize, f64)],
    transforms: &[Vec<RigidTransform>],
) -> f64 {
    let mut sse = 0.0;
    for (f, frame_t) in transforms.iter().enumerate() {
        let mut p = Vector3::zeros();
        for &(b, w) in row {
            p += w * frame_t[b].apply(vc).coords;
        }
        sse += (p - seq.frame(f)[i].coords).norm_squared();
    }
    sse
}

/// Minimizes ‖A w − y‖² over the probability simplex given the Gram matrix
/// AᵀA and rhs Aᵀy, via an active-set on the equality-constrained KKT system.
fn simplex_least_squares(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<Vec<f64>> {
    let k = gram.nrows();
    let mut active: Vec<usize> = (0..k).collect();
    loop {
        let m = active.len();
        // KKT: [G 1; 1ᵀ 0][w; λ] = [d; 1] restricted to the active set.
        let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
        let mut b = DVector::<f64>::zeros(m + 1);
        for (r, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                kkt[(r, c)] = gram[(i, j)];
            }
            kkt[(r, m)] = 1.0;
            kkt[(m, r)] = 1.0;
            b[r] = rhs[i];
        }
        b[m] = 1.0;
        let sol = kkt.lu().solve(&b)?;
        let w_active: Vec<f64> = (0..m).map(|r| sol[r]).collect();
        if w_active.iter().all(|&w| w >= -1e-10) {
            let mut w = vec![0.0; k];
            for (r, &i) in active.iter().enumerate() {
                w[i] = w_active[r].max(0.0);
            }
            return Some(w);
        }
        // Drop the most negative weight and re-solve.
        let worst = (0..m)
            .min_by(|&a, &bb| w_active[a].partial_cmp(&w_active[bb]).unwrap())
            .unwrap();
        active.remove(worst);
        if active.is_empty() {
            return None;
        }
    }
}

/// Per-(frame, bone) transform solve against residual targets. Sequential
/// block coordinate descent, so the global objective never increases.
fn solve_transforms(
    seq: &VertexSequence,
    weights: &SkinningMatrix,
    transforms: &mut [Vec<RigidTransform>],
    canonical_idx: usize,
) {
    let n = seq.vertex_count();
    let bones = weights.bone_count();
    let canonical = seq.canonical_frame();

    // Bone -> vertices with support.
    let mut support: Vec<Vec<(usize, f64)>> = vec![Vec::new(); bones];
    for i in 0..n {
        for &(b, w) in weights.row(i) {
            support[b].push((i, w));
        }
    }

    for f in 0..seq.frame_count() {
        if f == canonical_idx {
            continue;
        }
        // Current blended position per vertex.
        let mut blended: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let mut p = Vector3::zeros();
                for &(b, w) in weights.row(i) {
                    p += w * transforms[f][b].apply(&canonical[i]).coords;
                }
                p
            })
            .collect();

        for b in 0..bones {
            let verts = &support[b];
            if verts.is_empty() {
                continue;
            }
            let old = transforms[f][b];
            // Residual target for this bone: qᵢ = yᵢ − Σ_{b'≠b} w·T_b'(vᵢ).
            let mut alpha = 0.0;
            let mut p_bar = Vector3::zeros();
            let mut q_bar = Vector3::zeros();
            let data: Vec<(f64, Vector3<f64>, Vector3<f64>)> = verts
                .iter()
                .map(|&(i, w)| {
                    let own = w * old.apply(&canonical[i]).coords;
                    let q = seq.frame(f)[i].coords - (blended[i] - own);
                    (w, canonical[i].coords, q)
                })
                .collect();
            for &(w, p, q) in &data {
                alpha += w * w;
                p_bar += w * w * p;
                q_bar += w * q;
            }
            if alpha <= 1e-300 {
                continue;
            }
            p_bar /= alpha;
            q_bar /= alpha;

            let mut h = Matrix3::zeros();
            for &(w, p, q) in &data {
                h += (w * (p - p_bar)) * (q - w * q_bar).transpose();
            }
            let rotation = match se3::rotation_from_covariance(&h) {
                Ok(r) => r,
                Err(_) => old.rotation, // keep rotation, still re-fit translation
            };
            let translation = q_bar - rotation.rotate(&p_bar);
            let new_t = RigidTransform::new(rotation, translation);

            // Guard: accept only if this block's objective does not worsen.
            let block_sse = |t: &RigidTransform| -> f64 {
                data.iter()
                    .map(|&(w, p, q)| (w * t.apply(&Point3::from(p)).coords - q).norm_squared())
                    .sum()
            };
            if block_sse(&new_t) <= block_sse(&old) + 1e-12 {
                transforms[f][b] = new_t;
                for &(i, w) in verts {
                    let vi = canonical[i];
                    blended[i] += w * (new_t.apply(&vi).coords - old.apply(&vi).coords);
                }
            }
        }
    }
}

/// Eq.-style sequence rigidity diagnostic over canonical KNN pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidityReport {
    /// Mean ARAP residual per (frame, directed pair), scene units squared.
    pub arap: f64,
    /// Mean distance-preservation residual per (frame, directed pair).
    pub distance: f64,
    /// Directed pairs skipped because the vertex neighborhood was degenerate.
    pub skipped_pairs: usize,
}

/// Evaluates the local-rigidity energy of a sequence: for every vertex the
/// best rigid rotation of its canonical K-neighborhood is fit per frame, and
/// the ARAP and distance-preservation residuals are averaged over all
/// (non-canonical frame, directed neighbor pair) combinations.
pub fn rigidity_energy(seq: &VertexSequence, knn: usize) -> Result<RigidityReport> {
    if seq.frame_count() < 2 {
        return Err(Error::InsufficientFrames(
            "rigidity diagnostic needs at least 2 frames".into(),
        ));
    }
    if knn < 3 {
        return Err(Error::ShapeError("rigidity knn must be at least 3".into()));
    }
    let canonical = seq.canonical_frame();
    let n = canonical.len();
    let tree = KdTree::build(canonical);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            tree.k_nearest(&canonical[i], knn.min(n - 1), Some(i))
                .into_iter()
                .map(|(j, _)| j)
                .collect()
        })
        .collect();

    let mut arap_sum = 0.0;
    let mut dist_sum = 0.0;
    let mut arap_pairs = 0usize;
    let mut dist_pairs = 0usize;
    let mut skipped = 0usize;

    for f in 0..seq.frame_count() {
        if f == seq.canonical_index() {
            continue;
        }
        let frame = seq.frame(f);
        for i in 0..n {
            let hood = &neighbors[i];
            // Distance term needs no rotation.
            for &j in hood {
                let dc = (canonical[i] - canonical[j]).norm();
                let df = (frame[i] - frame[j]).norm();
                dist_sum += (df - dc) * (df - dc);
                dist_pairs += 1;
            }
            // Rotation of the neighborhood (vertex included).
            let mut src: Vec<Point3<f64>> = Vec::with_capacity(hood.len() + 1);
            let mut dst: Vec<Point3<f64>> = Vec::with_capacity(hood.len() + 1);
            src.push(canonical[i]);
            dst.push(frame[i]);
            for &j in hood {
                src.push(canonical[j]);
                dst.push(frame[j]);
            }
            match kabsch_fit(&src, &dst, None) {
                Ok(r) => {
                    for &j in hood {
                        let e = (frame[i] - frame[j])
                            - r.rotate(&(canonical[i] - canonical[j]));
                        arap_sum += e.norm_squared();
                        arap_pairs += 1;
                    }
                }
                Err(_) => skipped += hood.len(),
            }
        }
    }

    Ok(RigidityReport {
        arap: if arap_pairs > 0 {
            arap_sum / arap_pairs as f64
        } else {
            0.0
        },
        distance: if dist_pairs > 0 {
            dist_sum / dist_pairs as f64
        } else {
            0.0
        },
        skipped_pairs: skipped,
    })
}

/// Root-mean-square LBS reconstruction error in scene units:
/// √(mean over frames and vertices of ‖lbs − observed‖²).
pub fn reconstruction_rmse(
    seq: &VertexSequence,
    weights: &SkinningMatrix,
    bones: &BoneTrack,
) -> Result<f64> {
    if bones.frame_count() != seq.frame_count() {
        return Err(Error::ShapeError(format!(
            "bone track has {} frames, sequence has {}",
            bones.frame_count(),
            seq.frame_count()
        )));
    }
    let canonical = seq.canonical_frame();
    let mut sse = 0.0;
    for f in 0..seq.frame_count() {
        let rec = lbs_apply(canonical, weights, bones.frame(f))?;
        for (a, b) in rec.iter().zip(seq.frame(f)) {
            sse += (a - b).norm_squared();
        }
    }
    Ok((sse / (seq.frame_count() * seq.vertex_count()) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{fit_cluster_transforms, lbg_cluster, ClusterParams};
    use crate::se3::Rotation3;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(n: usize, seed: u64) -> Vec<Point3<f64>> {
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
    fn single_rigid_body_is_exact() {
        let base = blob(80, 1);
        let mut frames = vec![base.clone()];
        for f in 1..10 {
            let r = Rotation3::from_axis_angle(&Vector3::new(0.2, 1.0, 0.1), 0.1 * f as f64);
            let t = Vector3::new(0.0, 0.05 * f as f64, 0.0);
            frames.push(base.iter().map(|p| Point3::from(r.rotate(&p.coords) + t)).collect());
        }
        let seq = VertexSequence::new(frames, vec![]).unwrap();
        let init = lbg_cluster(&seq, &ClusterParams::default()).unwrap();
        assert_eq!(init.cluster_count, 1);
        let out = ssdr_solve(&seq, &init, &SsdrParams::default()).unwrap();
        assert!(out.rmse_normalized < 1e-9, "rmse {}", out.rmse_normalized);
        assert!(out
            .weights
            .rows()
            .iter()
            .all(|r| r.len() == 1 && r[0] == (0, 1.0)));
    }

    #[test]
    fn zero_iterations_returns_init() {
        let base = blob(40, 2);
        let moved: Vec<Point3<f64>> = base.iter().map(|p| p + Vector3::new(1.0, 0.0, 0.0)).collect();
        let seq = VertexSequence::new(vec![base, moved], vec![]).unwrap();
        let labels = vec![0usize; 40];
        let transforms = fit_cluster_transforms(&seq, &labels, 1).unwrap();
        let init = ClusterAssignment {
            labels: labels.clone(),
            cluster_count: 1,
            transforms: transforms.clone(),
            residuals: vec![0.0],
        };
        let out = ssdr_solve(
            &seq,
            &init,
            &SsdrParams {
                iterations: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.bones.transforms, transforms);
        assert!(out.weights.rows().iter().all(|r| r == &vec![(0usize, 1.0)]));
    }

    #[test]
    fn objective_monotone_on_mixed_motion() {
        // Two clusters moving differently plus soft vertices between them.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut base = Vec::new();
        for i in 0..120 {
            let x = i as f64 / 119.0 * 4.0 - 2.0;
            base.push(Point3::new(
                x,
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ));
        }
        let mut frames = vec![base.clone()];
        for f in 1..12 {
            let ang = 0.08 * f as f64;
            let r = Rotation3::from_axis_angle(&Vector3::z(), ang);
            frames.push(
                base.iter()
                    .map(|p| {
                        // Left half rotates about origin, right half sways.
                        let blend = ((p.x + 0.5).clamp(0.0, 1.0)).powi(2);
                        let rot = r.rotate_point(p);
                        let sway = p + Vector3::new(0.0, 0.4 * ang.sin(), 0.0);
                        Point3::from(rot.coords * (1.0 - blend) + sway.coords * blend)
                    })
                    .collect(),
            );
        }
        let seq = VertexSequence::new(frames, vec![]).unwrap();
        let init = lbg_cluster(&seq, &ClusterParams { min_cluster_size: 8, ..Default::default() }).unwrap();
        let out = ssdr_solve(&seq, &init, &SsdrParams::default()).unwrap();
        for w in out.sse_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
        // Rows stay on the simplex.
        out.weights.validate().unwrap();
        // Canonical frame reconstructs exactly.
        let rec = lbs_apply(seq.canonical_frame(), &out.weights, out.bones.frame(0)).unwrap();
        for (a, b) in rec.iter().zip(seq.canonical_frame()) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rigidity_zero_for_rigid_and_translation() {
        let base = blob(120, 4);
        let mut frames = vec![base.clone()];
        let r = Rotation3::from_axis_angle(&Vector3::y(), 0.7);
        frames.push(base.iter().map(|p| r.rotate_point(p)).collect());
        frames.push(base.iter().map(|p| p + Vector3::new(0.3, 0.4, -0.2)).collect());
        let seq = VertexSequence::new(frames, vec![]).unwrap();
        let rep = rigidity_energy(&seq, 7).unwrap();
        assert!(rep.arap < 1e-12, "arap {}", rep.arap);
        assert!(rep.distance < 1e-12, "distance {}", rep.distance);
        assert_eq!(rep.skipped_pairs, 0);
    }

    /// Closed-form oracle: unit tetrahedron scaled by 2 in frame 1. The best
    /// neighborhood rotation is the identity, so both terms reduce to the
    /// canonical edge lengths squared.
    #[test]
    fn rigidity_matches_tetrahedron_closed_form() {
        let tet = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.5, (3.0f64).sqrt() / 2.0, 0.0),
            Point3::new(0.5, (3.0f64).sqrt() / 6.0, (2.0f64 / 3.0).sqrt()),
        ];
        let scaled: Vec<Point3<f64>> = tet.iter().map(|p| Point3::from(p.coords * 2.0)).collect();
        let seq = VertexSequence::new(vec![tet.clone(), scaled], vec![]).unwrap();
        let rep = rigidity_energy(&seq, 3).unwrap();

        // Oracle computed independently from the definition.
        let mut arap = 0.0;
        let mut dist = 0.0;
        let mut pairs = 0;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let d = (tet[i] - tet[j]).norm();
                // scaled edge = 2d; identity rotation is optimal for a
                // uniform scale, so the ARAP residual is ‖2e − e‖² = d².
                arap += d * d;
                dist += (2.0 * d - d) * (2.0 * d - d);
                pairs += 1;
            }
        }
        assert_relative_eq!(rep.arap, arap / pairs as f64, epsilon = 1e-9);
        assert_relative_eq!(rep.distance, dist / pairs as f64, epsilon = 1e-9);
    }

    #[test]
    fn rigidity_invariant_under_global_motion() {
        let base = blob(100, 6);
        let mut frames = vec![base.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            frames.push(
                base.iter()
                    .map(|p| {
                        p + Vector3::new(
                            rng.random_range(-0.01..0.01),
                            rng.random_range(-0.01..0.01),
                            rng.random_range(-0.01..0.01),
                        )
                    })
                    .collect(),
            );
        }
        let seq = VertexSequence::new(frames.clone(), vec![]).unwrap();
        let rep = rigidity_energy(&seq, 6).unwrap();

        let g = RigidTransform::new(
            Rotation3::from_axis_angle(&Vector3::new(1.0, 0.5, -0.25), 1.3),
            Vector3::new(10.0, -4.0, 2.0),
        );
        let moved: Vec<Vec<Point3<f64>>> = frames
            .iter()
            .map(|fr| fr.iter().map(|p| g.apply(p)).collect())
            .collect();
        let seq_g = VertexSequence::new(moved, vec![]).unwrap();
        let rep_g = rigidity_energy(&seq_g, 6).unwrap();
        assert_relative_eq!(rep.arap, rep_g.arap, epsilon = 1e-10, max_relative = 1e-7);
        assert_relative_eq!(rep.distance, rep_g.distance, epsilon = 1e-10, max_relative = 1e-7);
    }

    #[test]
    fn rmse_closed_forms() {
        let base = blob(50, 8);
        let t = Vector3::new(0.6, -0.8, 0.0);
        let moved: Vec<Point3<f64>> = base.iter().map(|p| p + t).collect();
        let seq = VertexSequence::new(vec![base.clone(), moved], vec![]).unwrap();
        let w = SkinningMatrix::uniform_single_bone(50);

        // Perfect rig.
        let bones = BoneTrack::new(vec![
            vec![RigidTransform::identity()],
            vec![RigidTransform::translate(t)],
        ]);
        assert_eq!(reconstruction_rmse(&seq, &w, &bones).unwrap(), 0.0);

        // All-identity bones vs translated frame: rmse = ‖t‖/√2 over the two
        // frames (one exact, one off by ‖t‖).
        let idb = BoneTrack::new(vec![
            vec![RigidTransform::identity()],
            vec![RigidTransform::identity()],
        ]);
        let rmse = reconstruction_rmse(&seq, &w, &idb).unwrap();
        assert_relative_eq!(rmse, t.norm() / 2.0_f64.sqrt(), epsilon = 1e-12);

        // Brute-force oracle on a random small rig.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<(usize, f64)>> = (0..50)
            .map(|_| {
                let a = rng.random_range(0.0..1.0);
                vec![(0usize, a), (1usize, 1.0 - a)]
            })
            .collect();
        let w2 = SkinningMatrix::from_rows(rows, 2).unwrap();
        let b2 = BoneTrack::new(vec![
            vec![RigidTransform::identity(), RigidTransform::identity()],
            vec![
                RigidTransform::translate(Vector3::new(0.1, 0.0, 0.0)),
                RigidTransform::new(
                    Rotation3::from_axis_angle(&Vector3::z(), 0.2),
                    Vector3::new(0.0, 0.1, 0.0),
                ),
            ],
        ]);
        let got = reconstruction_rmse(&seq, &w2, &b2).unwrap();
        let mut sse = 0.0;
        for f in 0..2 {
            for i in 0..50 {
                let mut p = Vector3::zeros();
                for &(bi, wv) in w2.row(i) {
                    p += wv * b2.frame(f)[bi].apply(&base[i]).coords;
                }
                sse += (p - seq.frame(f)[i].coords).norm_squared();
            }
        }
        assert_relative_eq!(got, (sse / 100.0).sqrt(), epsilon = 1e-12);
    }
}
