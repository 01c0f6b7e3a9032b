//! Rotation and rigid-transform kernels shared by every other module.
//!
//! Rotations are canonically stored as hemisphere-normalized unit quaternions
//! (w ≥ 0); matrices are produced on demand. All kernels are pure functions on
//! immutable values.

use nalgebra::{Matrix3, Point3, Quaternion, Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::ssdr::SkinningMatrix;

/// A 3D rotation as a hemisphere-canonical unit quaternion.
///
/// Invariants: unit norm within 1e-9 and `w ≥ 0` (for `w == 0`, the first
/// nonzero vector component is made positive), so equal rotations have equal
/// representations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3 {
    q: UnitQuaternion<f64>,
}

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3 {
            q: UnitQuaternion::identity(),
        }
    }

    /// Builds from raw quaternion components, normalizing and canonicalizing.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Self::canonical(q)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let unit = Unit::new_normalize(*axis);
        Self::canonical(UnitQuaternion::from_axis_angle(&unit, angle))
    }

    /// Rotation from a scaled-axis (axis-angle) vector; zero vector → identity.
    pub fn from_scaled_axis(v: Vector3<f64>) -> Self {
        Self::canonical(UnitQuaternion::from_scaled_axis(v))
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::canonical(UnitQuaternion::from_matrix(m))
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        let mut c = *q.quaternion();
        if c.w < 0.0
            || (c.w == 0.0 && (c.i < 0.0 || (c.i == 0.0 && (c.j < 0.0 || (c.j == 0.0 && c.k < 0.0)))))
        {
            c = -c;
        }
        Rotation3 {
            q: UnitQuaternion::new_unchecked(c),
        }
    }

    /// Quaternion components as (w, x, y, z).
    pub fn wxyz(&self) -> (f64, f64, f64, f64) {
        let q = self.q.quaternion();
        (q.w, q.i, q.j, q.k)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.q.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    pub fn rotate_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.q * p
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        self.q.angle()
    }

    /// Scaled-axis (axis-angle) vector of this rotation.
    pub fn scaled_axis(&self) -> Vector3<f64> {
        self.q.scaled_axis()
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        self.q
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3::canonical(self.q * rhs.q)
    }
}

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rigid transform: rotation followed by translation, `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Pure translation.
    pub fn translate(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Rotation3::identity(),
            translation: t,
        }
    }

    /// Rotation by `r` about the pivot point `p`: `x ↦ R·(x − p) + p`.
    pub fn rotation_about(r: Rotation3, pivot: &Point3<f64>) -> Self {
        let t = pivot.coords - r.rotate(&pivot.coords);
        RigidTransform {
            rotation: r,
            translation: t,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.rotate(&p.coords) + self.translation)
    }

    pub fn apply_vec(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(v) + self.translation
    }

    /// Composition: `(self ∘ rhs)(x) = self(rhs(x))`.
    pub fn compose(&self, rhs: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.rotate(&rhs.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rinv = self.rotation.inverse();
        RigidTransform {
            rotation: rinv,
            translation: -rinv.rotate(&self.translation),
        }
    }
}

/// Geodesic distance on SO(3): the rotation angle of `a·b⁻¹`, in [0, π].
///
/// Symmetric, zero iff the rotations agree up to quaternion sign.
pub fn geodesic_distance(a: &Rotation3, b: &Rotation3) -> f64 {
    let qa = a.q.quaternion();
    let qb = b.q.quaternion();
    let dot = (qa.w * qb.w + qa.i * qb.i + qa.j * qb.j + qa.k * qb.k).abs();
    2.0 * dot.min(1.0).acos()
}

/// Least-squares rotation between two weighted point sets (Kabsch).
///
/// Returns the proper rotation R minimizing Σ wᵢ‖dstᵢ − R·srcᵢ‖² after
/// removing the weighted centroids. A reflection in the SVD solution is
/// corrected by flipping the singular direction with the smallest singular
/// value, so the determinant is always +1.
pub fn kabsch_fit(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
    weights: Option<&[f64]>,
) -> Result<Rotation3> {
    if src.len() != dst.len() {
        return Err(Error::ShapeError(format!(
            "kabsch_fit: src has {} points, dst has {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "kabsch_fit needs at least 3 points, got {}",
            src.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(Error::ShapeError(format!(
                "kabsch_fit: {} weights for {} points",
                w.len(),
                src.len()
            )));
        }
        if w.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidWeights("negative kabsch weight".into()));
        }
    }

    let wsum: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => src.len() as f64,
    };
    if wsum <= 0.0 {
        return Err(Error::InvalidWeights("kabsch weights sum to zero".into()));
    }
    let wi = |i: usize| weights.map_or(1.0, |w| w[i]);

    let mut c_src = Vector3::zeros();
    let mut c_dst = Vector3::zeros();
    for i in 0..src.len() {
        c_src += wi(i) * src[i].coords;
        c_dst += wi(i) * dst[i].coords;
    }
    c_src /= wsum;
    c_dst /= wsum;

    // H = Σ wᵢ (srcᵢ − c̄s)(dstᵢ − c̄d)ᵀ; optimal R = V·D·Uᵀ for H = UΣVᵀ.
    let mut h = Matrix3::zeros();
    for i in 0..src.len() {
        let p = src[i].coords - c_src;
        let q = dst[i].coords - c_dst;
        h += wi(i) * p * q.transpose();
    }

    rotation_from_covariance(&h)
}

/// Rotation from a 3×3 cross-covariance H = Σ (src)(dst)ᵀ (centered).
pub(crate) fn rotation_from_covariance(h: &Matrix3<f64>) -> Result<Rotation3> {
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        Error::DegenerateConfiguration("SVD failed to produce U".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        Error::DegenerateConfiguration("SVD failed to produce Vᵀ".into())
    })?;
    let s = svd.singular_values;

    // Rank < 2 leaves the rotation under-determined.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let (s0, s1) = (s[order[0]], s[order[1]]);
    if s0 <= 0.0 || s1 <= 1e-12 * s0 {
        return Err(Error::DegenerateConfiguration(format!(
            "rank-deficient covariance (singular values {:.3e}, {:.3e}, {:.3e})",
            s[order[0]], s[order[1]], s[order[2]]
        )));
    }

    let v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        // Flip the smallest singular direction.
        let k = order[2];
        let mut v2 = v;
        for row in 0..3 {
            v2[(row, k)] = -v2[(row, k)];
        }
        r = v2 * u.transpose();
    }
    Ok(Rotation3::from_matrix(&r))
}

/// Rigid fit (rotation + translation) from weighted correspondences:
/// dst ≈ R·src + t.
pub fn kabsch_fit_transform(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
    weights: Option<&[f64]>,
) -> Result<RigidTransform> {
    let r = kabsch_fit(src, dst, weights)?;
    let wsum: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => src.len() as f64,
    };
    let wi = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut c_src = Vector3::zeros();
    let mut c_dst = Vector3::zeros();
    for i in 0..src.len() {
        c_src += wi(i) * src[i].coords;
        c_dst += wi(i) * dst[i].coords;
    }
    c_src /= wsum;
    c_dst /= wsum;
    Ok(RigidTransform::new(r, c_dst - r.rotate(&c_src)))
}

/// Linear blend skinning: `v'ᵢ = Σ_b W_ib · T_b(vᵢ)`.
///
/// Weights are used as given; no renormalization is applied.
pub fn lbs_apply(
    rest: &[Point3<f64>],
    weights: &SkinningMatrix,
    transforms: &[RigidTransform],
) -> Result<Vec<Point3<f64>>> {
    if weights.vertex_count() != rest.len() {
        return Err(Error::ShapeError(format!(
            "lbs_apply: {} rest vertices but weight matrix has {} rows",
            rest.len(),
            weights.vertex_count()
        )));
    }
    if weights.bone_count() != transforms.len() {
        return Err(Error::ShapeError(format!(
            "lbs_apply: {} transforms but weight matrix has {} columns",
            transforms.len(),
            weights.bone_count()
        )));
    }
    let mut out = Vec::with_capacity(rest.len());
    for (i, v) in rest.iter().enumerate() {
        let mut acc = Vector3::zeros();
        for &(b, w) in weights.row(i) {
            acc += w * transforms[b].apply(v).coords;
        }
        out.push(Point3::from(acc));
    }
    Ok(out)
}

/// Hemisphere-aligned weighted quaternion mean, renormalized.
///
/// Adequate for small angular spreads; reduces to the input when a single
/// rotation is given. Invariant to sign flips of the inputs.
pub fn weighted_rotation_average(rotations: &[Rotation3], weights: &[f64]) -> Result<Rotation3> {
    if rotations.is_empty() || rotations.len() != weights.len() {
        return Err(Error::ShapeError(format!(
            "weighted_rotation_average: {} rotations, {} weights",
            rotations.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidWeights("negative weight".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::InvalidWeights(
            "rotation average weights sum to zero".into(),
        ));
    }

    let reference = *rotations[0].q.quaternion();
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (r, &w) in rotations.iter().zip(weights) {
        let mut q = *r.q.quaternion();
        if q.dot(&reference) < 0.0 {
            q = -q;
        }
        acc += q * w;
    }
    if acc.norm() <= 1e-12 * wsum {
        return Err(Error::DegenerateConfiguration(
            "rotation average cancelled to zero".into(),
        ));
    }
    Ok(Rotation3::canonical(UnitQuaternion::from_quaternion(acc)))
}
