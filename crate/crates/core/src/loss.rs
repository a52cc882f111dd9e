//! Training objectives and their gradients w.r.t. deformed Gaussian outputs.
//!
//! Every term returns its value together with one [`OutputGrad`] per
//! Gaussian. [`total_loss`] chains those through the cascade to obtain
//! gradients for every deformation parameter.

use kiddo::{KdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterHierarchy;
use crate::deform::{cascade_backward, cascade_outputs, CascadeDeform, DeformOptions, GaussianOutput, OutputGrad};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::{quat_mul_right_vjp, quat_to_mat_vjp, Mat3, Quat, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_rigid: f64,
    pub w_iso: f64,
    pub w_rot: f64,
    pub w_scale: f64,
    pub w_data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_rigid: 0.19,
            w_iso: 0.10,
            w_rot: 0.19,
            w_scale: 0.48,
            w_data: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            w_rigid: 0.0,
            w_iso: 0.0,
            w_rot: 0.0,
            w_scale: 0.0,
            w_data: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_rigid, self.w_iso, self.w_rot, self.w_scale, self.w_data];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// k-nearest-neighbor graph over reference centers, frozen during a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub k: usize,
    /// `neighbors[i*k + m]` is the m-th neighbor of Gaussian i.
    pub neighbors: Vec<u32>,
    /// `exp(−λ_w‖p_j − p_i‖²)` for the same slots.
    pub weights: Vec<f64>,
}

pub const DEFAULT_NEIGHBORS: usize = 20;
pub const DEFAULT_LAMBDA_W: f64 = 2000.0;

impl NeighborGraph {
    /// Builds the graph with `λ_w = lambda / scene_scale²`.
    pub fn build(centers: &[Vec3], k: usize, lambda: f64, scene_scale: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("neighbor count must be at least 1"));
        }
        let n = centers.len();
        let k = k.min(n.saturating_sub(1));
        let lambda_w = lambda / (scene_scale * scene_scale);
        let mut tree: KdTree<f64, 3> = KdTree::new();
        for (i, c) in centers.iter().enumerate() {
            tree.add(&c.to_array(), i as u64);
        }
        let mut neighbors = Vec::with_capacity(n * k);
        let mut weights = Vec::with_capacity(n * k);
        for (i, c) in centers.iter().enumerate() {
            let found = tree.nearest_n::<SquaredEuclidean>(&c.to_array(), k + 1);
            let mut taken = 0;
            for nb in found {
                if nb.item as usize == i || taken == k {
                    continue;
                }
                neighbors.push(nb.item as u32);
                weights.push((-lambda_w * nb.distance).exp().max(f64::MIN_POSITIVE));
                taken += 1;
            }
            // Duplicate points can crowd out self; keep the row length fixed.
            while taken < k {
                let j = (i + 1 + taken) % n;
                neighbors.push(j as u32);
                weights.push((-lambda_w * (*c - centers[j]).norm_sq()).exp().max(f64::MIN_POSITIVE));
                taken += 1;
            }
        }
        Ok(Self { k, neighbors, weights })
    }

    pub fn from_set(set: &GaussianSet, k: usize, lambda: f64) -> Result<Self> {
        Self::build(&set.centers(), k, lambda, set.scene_scale())
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    /// `(i, j, w)` for every directed edge, in index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(move |(e, (&j, &w))| (e / self.k.max(1), j as usize, w))
    }
}

/// Observed points of one frame, optionally with known correspondences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataObservation {
    pub points: Vec<Vec3>,
    /// `correspondence[m]` is the Gaussian matched to `points[m]`.
    pub correspondence: Option<Vec<u32>>,
}

impl DataObservation {
    pub fn with_identity(points: Vec<Vec3>) -> Self {
        let corr = (0..points.len() as u32).collect();
        Self {
            points,
            correspondence: Some(corr),
        }
    }

    pub fn unmatched(points: Vec<Vec3>) -> Self {
        Self {
            points,
            correspondence: None,
        }
    }
}

/// Value of one loss term with per-Gaussian output gradients.
#[derive(Clone, Debug)]
pub struct LossTerm {
    pub value: f64,
    pub grads: Vec<OutputGrad>,
}

impl LossTerm {
    fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grads: vec![OutputGrad::zero(); n],
        }
    }
}

/// Views a set as cascade outputs (for losses against stored frames).
pub fn outputs_of(set: &GaussianSet) -> Vec<GaussianOutput> {
    set.gaussians
        .iter()
        .map(|g| GaussianOutput {
            center: g.center,
            orientation: g.orientation,
            scale: g.scale,
        })
        .collect()
}

fn normalize_vjp(q: Quat, g: Quat) -> Quat {
    let n = q.norm();
    let u = q.scale_by(1.0 / n);
    let d = u.dot(g);
    Quat::new(
        (g.w - u.w * d) / n,
        (g.x - u.x * d) / n,
        (g.y - u.y * d) / n,
        (g.z - u.z * d) / n,
    )
}

/// `a ⊗ b⁻¹` for unit `b`, written as `1 + (a − b) ⊗ b̄` so that equal
/// inputs give the identity exactly.
fn relative(a: Quat, b: Quat) -> Quat {
    let d = a.add_q(b.neg()).mul(b.conj());
    Quat::new(1.0 + d.w, d.x, d.y, d.z)
}

/// Vector-Jacobian product of `y ↦ a ⊗ y`.
fn quat_mul_left_vjp(a: Quat, g: Quat) -> Quat {
    let e = [
        Quat::new(1.0, 0.0, 0.0, 0.0),
        Quat::new(0.0, 1.0, 0.0, 0.0),
        Quat::new(0.0, 0.0, 1.0, 0.0),
        Quat::new(0.0, 0.0, 0.0, 1.0),
    ]
    .map(|b| a.mul(b).dot(g));
    Quat::new(e[0], e[1], e[2], e[3])
}

trait QuatExt {
    fn scale_by(self, s: f64) -> Quat;
    fn add_q(self, o: Quat) -> Quat;
}

impl QuatExt for Quat {
    fn scale_by(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
    fn add_q(self, o: Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

/// `(1/N) Σ_i Σ_axis max(0, s_{i,axis} − max_scale)`.
pub fn scale_loss(curr: &[GaussianOutput], max_scale: f64) -> LossTerm {
    let n = curr.len();
    let mut out = LossTerm::zero(n);
    if n == 0 {
        return out;
    }
    let inv = 1.0 / n as f64;
    for (o, g) in curr.iter().zip(out.grads.iter_mut()) {
        let s = o.scale.to_array();
        let mut d = [0.0; 3];
        for a in 0..3 {
            if s[a] > max_scale {
                out.value += (s[a] - max_scale) * inv;
                d[a] = inv;
            }
        }
        g.scale = Vec3::from_array(d);
    }
    out
}

/// Mean over edges of `w‖(p_j − p_i)_prev − R_{i,prev} R_{i,curr}ᵀ (p_j − p_i)_curr‖`.
pub fn rigidity_loss(prev: &[GaussianOutput], curr: &[GaussianOutput], graph: &NeighborGraph) -> LossTerm {
    let n = curr.len();
    let mut out = LossTerm::zero(n);
    let e_count = graph.num_edges();
    if e_count == 0 {
        return out;
    }
    let inv = 1.0 / e_count as f64;
    // R_prev R_currᵀ through the relative quaternion, which is exactly the
    // identity when curr and prev orientations coincide.
    let qp: Vec<Quat> = prev.iter().map(|o| o.orientation.normalized()).collect();
    let qc: Vec<Quat> = curr.iter().map(|o| o.orientation.normalized()).collect();
    let raw: Vec<Quat> = (0..n).map(|i| relative(qp[i], qc[i])).collect();
    let rel: Vec<Mat3> = raw.iter().map(|q| q.normalized().to_mat_unit()).collect();
    let mut g_m = vec![Mat3::zeros(); n];
    for (i, j, w) in graph.edges() {
        let a = prev[j].center - prev[i].center;
        let b = curr[j].center - curr[i].center;
        let r = a - rel[i].mul_vec(b);
        let len = r.norm();
        out.value += w * len * inv;
        if len == 0.0 {
            continue;
        }
        let e = r.scale(w * inv / len);
        let gb = -rel[i].transpose().mul_vec(e);
        out.grads[j].center += gb;
        out.grads[i].center += -gb;
        g_m[i] = g_m[i].sub(&e.outer(b));
    }
    for i in 0..n {
        if g_m[i].frobenius() == 0.0 {
            continue;
        }
        let g = quat_to_mat_vjp(raw[i].normalized(), &g_m[i]);
        let g = normalize_vjp(raw[i], g);
        let g = quat_mul_left_vjp(qp[i], g).conj();
        let g = normalize_vjp(curr[i].orientation, g);
        out.grads[i].orientation = out.grads[i].orientation.add_q(g);
    }
    out
}

/// Mean over edges of `| ‖p_j − p_i‖_0 − ‖p_j − p_i‖_t |`.
pub fn isometry_loss(frame0: &[Vec3], curr: &[GaussianOutput], graph: &NeighborGraph) -> LossTerm {
    let n = curr.len();
    let mut out = LossTerm::zero(n);
    let e_count = graph.num_edges();
    if e_count == 0 {
        return out;
    }
    let inv = 1.0 / e_count as f64;
    for (i, j, _) in graph.edges() {
        let d0 = (frame0[j] - frame0[i]).norm();
        let dt = curr[j].center - curr[i].center;
        let lt = dt.norm();
        let diff = d0 - lt;
        out.value += diff.abs() * inv;
        if diff == 0.0 || lt == 0.0 {
            continue;
        }
        let g = dt.scale(-diff.signum() * inv / lt);
        out.grads[j].center += g;
        out.grads[i].center += -g;
    }
    out
}

/// Mean over edges of `w‖q̂_{j,c} q̂_{j,p}⁻¹ − q̂_{i,c} q̂_{i,p}⁻¹‖` (sign-aligned).
pub fn rotation_loss(prev: &[GaussianOutput], curr: &[GaussianOutput], graph: &NeighborGraph) -> LossTerm {
    let n = curr.len();
    let mut out = LossTerm::zero(n);
    let e_count = graph.num_edges();
    if e_count == 0 {
        return out;
    }
    let inv = 1.0 / e_count as f64;
    let p_inv: Vec<Quat> = prev.iter().map(|o| o.orientation.normalized().conj()).collect();
    let qn: Vec<Quat> = curr.iter().map(|o| o.orientation.normalized()).collect();
    let raw: Vec<Quat> = (0..n).map(|i| relative(qn[i], p_inv[i].conj())).collect();
    let rel: Vec<Quat> = raw.iter().map(|q| q.normalized()).collect();
    let mut g_rel = vec![Quat::new(0.0, 0.0, 0.0, 0.0); n];
    for (i, j, w) in graph.edges() {
        let sign = if rel[j].dot(rel[i]) < 0.0 { -1.0 } else { 1.0 };
        let d = rel[j].scale_by(sign).add_q(rel[i].neg());
        let len = d.norm();
        out.value += w * len * inv;
        if len == 0.0 {
            continue;
        }
        let e = d.scale_by(w * inv / len);
        g_rel[j] = g_rel[j].add_q(e.scale_by(sign));
        g_rel[i] = g_rel[i].add_q(e.neg());
    }
    for i in 0..n {
        let gq = normalize_vjp(raw[i], g_rel[i]);
        let gq = quat_mul_right_vjp(p_inv[i], gq);
        let gq = normalize_vjp(curr[i].orientation, gq);
        out.grads[i].orientation = out.grads[i].orientation.add_q(gq);
    }
    out
}

/// Correspondence MSE when matches are known, otherwise the mean of both
/// directional mean squared nearest-neighbor distances.
pub fn data_loss(curr: &[GaussianOutput], obs: &DataObservation) -> Result<LossTerm> {
    if obs.points.is_empty() {
        return Err(Error::invalid("empty observation"));
    }
    let n = curr.len();
    let mut out = LossTerm::zero(n);
    match &obs.correspondence {
        Some(corr) => {
            if corr.len() != obs.points.len() {
                return Err(Error::ShapeMismatch("one correspondence per observed point".into()));
            }
            let inv = 1.0 / obs.points.len() as f64;
            for (o, &g) in obs.points.iter().zip(corr) {
                let g = g as usize;
                if g >= n {
                    return Err(Error::invalid(format!("correspondence to gaussian {g} out of range")));
                }
                let d = curr[g].center - *o;
                out.value += d.norm_sq() * inv;
                out.grads[g].center += d.scale(2.0 * inv);
            }
        }
        None => {
            if n == 0 {
                return Err(Error::invalid("no gaussians to match"));
            }
            let mut obs_tree: KdTree<f64, 3> = KdTree::new();
            for (m, p) in obs.points.iter().enumerate() {
                obs_tree.add(&p.to_array(), m as u64);
            }
            let mut g_tree: KdTree<f64, 3> = KdTree::new();
            for (i, o) in curr.iter().enumerate() {
                g_tree.add(&o.center.to_array(), i as u64);
            }
            let inv_n = 0.5 / n as f64;
            for (i, o) in curr.iter().enumerate() {
                let nb = obs_tree.nearest_one::<SquaredEuclidean>(&o.center.to_array());
                let d = o.center - obs.points[nb.item as usize];
                out.value += d.norm_sq() * inv_n;
                out.grads[i].center += d.scale(2.0 * inv_n);
            }
            let inv_m = 0.5 / obs.points.len() as f64;
            for p in &obs.points {
                let nb = g_tree.nearest_one::<SquaredEuclidean>(&p.to_array());
                let i = nb.item as usize;
                let d = curr[i].center - *p;
                out.value += d.norm_sq() * inv_m;
                out.grads[i].center += d.scale(2.0 * inv_m);
            }
        }
    }
    Ok(out)
}

/// Per-component and total loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rigid: f64,
    pub iso: f64,
    pub rot: f64,
    pub scale: f64,
    pub data: f64,
    pub total: f64,
}

/// Everything the objective needs besides the trainable parameters.
pub struct LossContext<'a> {
    /// Frame-0 centers (isometry reference).
    pub frame0: &'a [Vec3],
    /// The frame being deformed.
    pub prev: &'a GaussianSet,
    pub graph: &'a NeighborGraph,
    pub obs: &'a DataObservation,
    pub weights: LossWeights,
    pub max_scale: f64,
}

/// Weighted objective on given outputs with per-Gaussian gradients.
pub fn evaluate_outputs(ctx: &LossContext, curr: &[GaussianOutput]) -> Result<(LossBreakdown, Vec<OutputGrad>)> {
    let n = curr.len();
    if ctx.prev.len() != n || ctx.frame0.len() != n {
        return Err(Error::ShapeMismatch("frame sizes differ".into()));
    }
    let w = ctx.weights;
    let prev = outputs_of(ctx.prev);
    let mut grads = vec![OutputGrad::zero(); n];
    let mut br = LossBreakdown::default();
    let mut fold = |term: LossTerm, weight: f64| -> f64 {
        if weight != 0.0 {
            for (g, t) in grads.iter_mut().zip(&term.grads) {
                g.add(&t.scaled(weight));
            }
        }
        term.value
    };
    if w.w_rigid != 0.0 {
        br.rigid = fold(rigidity_loss(&prev, curr, ctx.graph), w.w_rigid);
    }
    if w.w_iso != 0.0 {
        br.iso = fold(isometry_loss(ctx.frame0, curr, ctx.graph), w.w_iso);
    }
    if w.w_rot != 0.0 {
        br.rot = fold(rotation_loss(&prev, curr, ctx.graph), w.w_rot);
    }
    if w.w_scale != 0.0 {
        br.scale = fold(scale_loss(curr, ctx.max_scale), w.w_scale);
    }
    if w.w_data != 0.0 {
        br.data = fold(data_loss(curr, ctx.obs)?, w.w_data);
    }
    br.total = w.w_rigid * br.rigid + w.w_iso * br.iso + w.w_rot * br.rot + w.w_scale * br.scale + w.w_data * br.data;
    Ok((br, grads))
}

/// Objective value and gradient for every cascade parameter.
pub fn total_loss(
    ctx: &LossContext,
    cascade: &CascadeDeform,
    hierarchy: &ClusterHierarchy,
    opts: &DeformOptions,
) -> Result<(LossBreakdown, CascadeDeform)> {
    let outs = cascade_outputs(cascade, hierarchy, ctx.prev, opts)?;
    let (br, grads) = evaluate_outputs(ctx, &outs)?;
    let g = cascade_backward(cascade, hierarchy, ctx.prev, opts, &grads)?;
    Ok((br, g))
}

/// Objective value only.
pub fn loss_value(
    ctx: &LossContext,
    cascade: &CascadeDeform,
    hierarchy: &ClusterHierarchy,
    opts: &DeformOptions,
) -> Result<LossBreakdown> {
    let outs = cascade_outputs(cascade, hierarchy, ctx.prev, opts)?;
    Ok(evaluate_outputs(ctx, &outs)?.0)
}
