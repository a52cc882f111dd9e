//! Motion-based part segmentation and the rigid sub-part rotation check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans_nd, KMeansOptions};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::{Mat3, Quat, Vec3};

/// Width of one feature row: position, flattened rotation, frame-0 position.
pub const FEATURE_WIDTH: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegParams {
    pub lambda_p: f64,
    pub lambda_r: f64,
    pub lambda_p0: f64,
    /// Use the rotation each Gaussian underwent since frame 0 instead of its
    /// absolute orientation. Absolute orientations differ between Gaussians
    /// of one rigid part; their rotations since frame 0 do not.
    pub relative_rotation: bool,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_r: 1.0,
            lambda_p0: 1.0,
            relative_rotation: true,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_p", self.lambda_p), ("lambda_r", self.lambda_r), ("lambda_p0", self.lambda_p0)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name}: must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// `T × 15` trajectory feature of one Gaussian, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFeature {
    pub rows: Vec<[f64; FEATURE_WIDTH]>,
}

impl MotionFeature {
    pub fn frames(&self) -> usize {
        self.rows.len()
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flatten().copied()
    }
}

/// One feature per Gaussian: for each frame the concatenation of the scaled
/// center, the scaled flattened rotation matrix and the scaled frame-0 center.
pub fn build_features(trajectory: &[GaussianSet], params: &SegParams) -> Result<Vec<MotionFeature>> {
    params.validate()?;
    if trajectory.len() < 2 {
        return Err(Error::invalid("segmentation needs at least two frames"));
    }
    let n = trajectory[0].len();
    if let Some(bad) = trajectory.iter().find(|s| s.len() != n) {
        return Err(Error::ShapeMismatch(format!("frame {} has {} gaussians, frame 0 has {n}", bad.frame_index, bad.len())));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let g0 = &trajectory[0].gaussians[i];
            let q0_inv = g0.orientation.normalized().conj();
            let rows = trajectory
                .iter()
                .map(|set| {
                    let g = &set.gaussians[i];
                    let q = g.orientation.normalized();
                    let r = if params.relative_rotation { q.mul(q0_inv) } else { q }.to_mat_unit();
                    let mut row = [0.0; FEATURE_WIDTH];
                    for (k, v) in g.center.to_array().into_iter().enumerate() {
                        row[k] = params.lambda_p * v;
                    }
                    for (k, v) in r.m.iter().flatten().enumerate() {
                        row[3 + k] = params.lambda_r * v;
                    }
                    for (k, v) in g0.center.to_array().into_iter().enumerate() {
                        row[12 + k] = params.lambda_p0 * v;
                    }
                    row
                })
                .collect();
            MotionFeature { rows }
        })
        .collect())
}

/// Restarts of k-means during segmentation.
pub const SEGMENT_RESTARTS: usize = 10;

/// k-means over the flattened features. Labels are renumbered in order of
/// first appearance, so Gaussian 0 always gets label 0.
pub fn segment(features: &[MotionFeature], k_parts: usize, seed: u64) -> Result<Vec<u32>> {
    if k_parts == 0 {
        return Err(Error::invalid("k_parts must be at least 1"));
    }
    if k_parts > features.len() {
        return Err(Error::invalid(format!("k_parts = {k_parts} exceeds {} gaussians", features.len())));
    }
    let t = features[0].frames();
    if features.iter().any(|f| f.frames() != t) {
        return Err(Error::ShapeMismatch("features have different frame counts".into()));
    }
    let dim = t * FEATURE_WIDTH;
    let data: Vec<f64> = features.iter().flat_map(|f| f.flat()).collect();
    let opts = KMeansOptions {
        n_init: SEGMENT_RESTARTS,
        ..KMeansOptions::default()
    };
    let res = kmeans_nd(&data, dim, k_parts, seed, opts)?;
    Ok(canonical_labels(&res.assignments))
}

/// Renumbers labels by order of first appearance.
pub fn canonical_labels(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index of two labelings of the same items. Two identical
/// partitions score 1 even in the single-cluster case.
pub fn ari(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty labeling"));
    }
    let mut table = std::collections::BTreeMap::<(u32, u32), f64>::new();
    let mut rows = std::collections::BTreeMap::<u32, f64>::new();
    let mut cols = std::collections::BTreeMap::<u32, f64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as f64);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        // Both partitions trivial in the same way.
        return Ok(if canonical_labels(a) == canonical_labels(b) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi.
/// Returns eigenvalues and eigenvectors as columns, unsorted.
fn jacobi_sym<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..N).flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut d = [0.0; N];
    for i in 0..N {
        d[i] = a[i][i];
    }
    (d, v)
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::ZERO, |s, p| s + *p).scale(1.0 / points.len() as f64)
}

/// Relative threshold on the second principal spread below which a point
/// set counts as collinear.
pub const COLLINEAR_TOL: f64 = 1e-10;

/// Fails when fewer than three points are given or they are (nearly)
/// collinear, the case where the best-fit rotation is not unique.
pub fn check_non_collinear(points: &[Vec3]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::DegeneratePointSet(format!("{} points, need at least 3", points.len())));
    }
    let c = centroid(points);
    let mut s = [[0.0; 3]; 3];
    for p in points {
        let d = (*p - c).to_array();
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += d[i] * d[j];
            }
        }
    }
    let (mut ev, _) = jacobi_sym(s);
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= COLLINEAR_TOL * ev[0] {
        return Err(Error::DegeneratePointSet("points are collinear".into()));
    }
    Ok(())
}

/// Best-fit rotation taking centered `before` onto centered `after`, from
/// the dominant eigenvector of the 4×4 quaternion cross-covariance matrix.
pub fn procrustes_rotation(before: &[Vec3], after: &[Vec3]) -> Result<Quat> {
    if before.len() != after.len() {
        return Err(Error::ShapeMismatch(format!("{} and {} points", before.len(), after.len())));
    }
    check_non_collinear(before)?;
    let (ca, cb) = (centroid(before), centroid(after));
    let mut m = Mat3::zeros();
    for (a, b) in before.iter().zip(after) {
        m = m.add(&(*a - ca).outer(*b - cb));
    }
    let s = m.m;
    let (sxx, sxy, sxz) = (s[0][0], s[0][1], s[0][2]);
    let (syx, syy, syz) = (s[1][0], s[1][1], s[1][2]);
    let (szx, szy, szz) = (s[2][0], s[2][1], s[2][2]);
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (ev, vecs) = jacobi_sym(n);
    let best = (0..4).max_by(|&i, &j| ev[i].total_cmp(&ev[j])).expect("four eigenvalues");
    let q = Quat::new(vecs[0][best], vecs[1][best], vecs[2][best], vecs[3][best]);
    let q = q.try_normalized()?;
    Ok(if q.w < 0.0 { q.neg() } else { q })
}

/// A point set observed before and after a motion.
#[derive(Clone, Copy, Debug)]
pub struct MovedPoints<'a> {
    pub before: &'a [Vec3],
    pub after: &'a [Vec3],
}

/// Quaternion distance under which two best-fit rotations are the same.
pub const SUBPART_TOL: f64 = 1e-7;

/// Rotations of each subset and of their union, plus whether all three agree
/// within `tol` (sign-invariant quaternion distance).
pub fn rigid_subpart_rotation_check(a: MovedPoints, b: MovedPoints, tol: f64) -> Result<(bool, [Quat; 3])> {
    let ra = procrustes_rotation(a.before, a.after)?;
    let rb = procrustes_rotation(b.before, b.after)?;
    let before: Vec<Vec3> = a.before.iter().chain(b.before).copied().collect();
    let after: Vec<Vec3> = a.after.iter().chain(b.after).copied().collect();
    let ru = procrustes_rotation(&before, &after)?;
    let agree = ra.distance(rb) <= tol && ra.distance(ru) <= tol && rb.distance(ru) <= tol;
    Ok((agree, [ra, rb, ru]))
}
