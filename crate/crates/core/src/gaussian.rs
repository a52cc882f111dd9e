//! Gaussian primitives and covariance conversions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{jacobi_eigen, Mat3, Quat, Vec3};

/// One anisotropic Gaussian. Covariance is derived, never stored:
/// `Σ = R(q)·diag(scale²)·R(q)ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub center: Vec3,
    pub orientation: Quat,
    /// Per-axis standard deviations, world units, strictly positive.
    pub scale: Vec3,
    /// Carried along, never optimized.
    pub color: Vec3,
    /// Cluster index per hierarchy layer, coarsest first.
    pub cluster_ids: Vec<u32>,
}

impl GaussianState {
    pub fn new(center: Vec3, orientation: Quat, scale: Vec3) -> Self {
        Self {
            center,
            orientation,
            scale,
            color: Vec3::new(0.5, 0.5, 0.5),
            cluster_ids: Vec::new(),
        }
    }

    pub fn covariance(&self) -> Mat3 {
        covariance_of(self)
    }

    pub fn rotation(&self) -> Mat3 {
        self.orientation.normalized().to_mat_unit()
    }
}

/// Ordered Gaussians of one time frame. Index `i` is the identity of
/// Gaussian `i` for the whole sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSet {
    pub gaussians: Vec<GaussianState>,
    pub frame_index: usize,
}

impl GaussianSet {
    pub fn new(gaussians: Vec<GaussianState>, frame_index: usize) -> Self {
        Self {
            gaussians,
            frame_index,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.gaussians.iter().map(|g| g.center).collect()
    }

    /// Diagonal of the axis-aligned bounding box of the centers. This is the
    /// length unit for learning rates, neighbor weights and error reports.
    pub fn scene_scale(&self) -> f64 {
        scene_scale(&self.centers())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if !(g.scale.x > 0.0 && g.scale.y > 0.0 && g.scale.z > 0.0) {
                return Err(Error::invalid(format!("gaussian {i} has non-positive scale")));
            }
            if !g.center.is_finite() || !g.orientation.is_finite() {
                return Err(Error::invalid(format!("gaussian {i} is not finite")));
            }
        }
        Ok(())
    }
}

pub fn scene_scale(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    let d = (hi - lo).norm();
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

pub fn covariance_of(g: &GaussianState) -> Mat3 {
    covariance_from(g.orientation, g.scale)
}

pub fn covariance_from(orientation: Quat, scale: Vec3) -> Mat3 {
    let r = orientation.normalized().to_mat_unit();
    let d = Mat3::from_diag(Vec3::new(scale.x * scale.x, scale.y * scale.y, scale.z * scale.z));
    let s = r.mul_mat(&d).mul_mat(&r.transpose());
    symmetrize(&s)
}

fn symmetrize(s: &Mat3) -> Mat3 {
    let mut out = *s;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let v = 0.5 * (s.m[i][j] + s.m[j][i]);
            out.m[i][j] = v;
            out.m[j][i] = v;
        }
    }
    out
}

/// Inverse of [`covariance_from`]: returns `(orientation, scale)` with scales
/// sorted descending (ties keep the original axis order) and a proper
/// rotation (`det = +1`).
pub fn decompose_covariance(s: &Mat3) -> Result<(Quat, Vec3)> {
    let asym = s.max_asymmetry();
    if asym > 1e-8 {
        return Err(Error::NotSymmetric(asym));
    }
    let (vals, vecs) = jacobi_eigen(symmetrize(s).m);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12) {
        return Err(Error::NotPositiveDefinite(min));
    }
    let mut order = [0usize, 1, 2];
    // Stable sort: equal eigenvalues keep their axis order.
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    let v = Mat3 { m: vecs };
    let mut cols = order.map(|k| v.col(k));
    if Mat3::from_cols(cols[0], cols[1], cols[2]).det() < 0.0 {
        cols[2] = -cols[2];
    }
    let r = Mat3::from_cols(cols[0], cols[1], cols[2]);
    let q = Quat::from_mat(&r).normalized();
    let scale = Vec3::new(vals[order[0]].sqrt(), vals[order[1]].sqrt(), vals[order[2]].sqrt());
    Ok((q, scale))
}
