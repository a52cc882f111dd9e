//! Cluster deformation maps, their cascade, and covariance propagation.
//!
//! One layer moves a point `x` of cluster `j` by
//!
//! ```text
//! σ(x)  = tanh(cᵀ(x − p) + s) + 1            ∈ (0, 2)
//! φ(x)  = p + σ(x)·(R(x − p) + t)
//! ∇φ(x) = σ(x)·R + (R(x − p) + t)·σ'(x)·cᵀ
//! ```
//!
//! where `p` is the cluster centroid. Layers are composed coarsest first and
//! the accumulated Jacobian `J = J_K ⋯ J_1` carries each covariance through
//! `Σ' = J Σ Jᵀ`. All formulas are generic over [`Real`], so the exact same
//! code produces values (`f64`) and gradients ([`Var`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{self, Var};
use crate::cluster::ClusterHierarchy;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, GaussianState};
use crate::math::{Mat3, Quat, Real, Vec3};

/// Trainable parameters of one cluster map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDeformParams<T = f64> {
    pub rotation: Quat<T>,
    pub translation: Vec3<T>,
    /// Direction and sensitivity of the position-dependent scaling.
    pub scale_dir: Vec3<T>,
    pub scale_bias: T,
}

impl<T: Real> ClusterDeformParams<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Quat::identity(),
            translation: Vec3::zeros(),
            scale_dir: Vec3::zeros(),
            scale_bias: T::cst(0.0),
        }
    }

    pub fn zeros() -> Self {
        Self {
            rotation: Quat::new(T::cst(0.0), T::cst(0.0), T::cst(0.0), T::cst(0.0)),
            ..Self::identity()
        }
    }
}

/// Per-Gaussian residual update applied after the cascade.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerGaussianDelta<T = f64> {
    pub d_center: Vec3<T>,
    pub d_rotation: Quat<T>,
    /// Added to the log of each scale axis.
    pub d_log_scale: Vec3<T>,
}

impl<T: Real> PerGaussianDelta<T> {
    pub fn identity() -> Self {
        Self {
            d_center: Vec3::zeros(),
            d_rotation: Quat::identity(),
            d_log_scale: Vec3::zeros(),
        }
    }

    pub fn zeros() -> Self {
        Self {
            d_rotation: Quat::new(T::cst(0.0), T::cst(0.0), T::cst(0.0), T::cst(0.0)),
            ..Self::identity()
        }
    }
}

pub const CLUSTER_PARAMS: usize = 11;
pub const DELTA_PARAMS: usize = 10;

/// All trainable parameters of one frame transition. Also used as the
/// container for their gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeDeform {
    /// `layers[k][cluster]`, coarsest layer first.
    pub layers: Vec<Vec<ClusterDeformParams>>,
    /// One entry per Gaussian.
    pub deltas: Vec<PerGaussianDelta>,
}

impl CascadeDeform {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum::<usize>() * CLUSTER_PARAMS
            + self.deltas.len() * DELTA_PARAMS
    }

    /// Same shape with every entry zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| vec![ClusterDeformParams::zeros(); l.len()])
                .collect(),
            deltas: vec![PerGaussianDelta::zeros(); self.deltas.len()],
        }
    }

    pub fn check_bound(&self, hierarchy: &ClusterHierarchy, n: usize) -> Result<()> {
        if self.layer_sizes() != hierarchy.layer_sizes {
            return Err(Error::ShapeMismatch(format!(
                "cascade layers {:?} vs hierarchy {:?}",
                self.layer_sizes(),
                hierarchy.layer_sizes
            )));
        }
        if self.deltas.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "cascade has {} deltas for {n} gaussians",
                self.deltas.len()
            )));
        }
        hierarchy.check_bound(n)
    }
}

/// Identity cascade bound to `hierarchy`.
pub fn cascade_zero(hierarchy: &ClusterHierarchy, n_gaussians: usize) -> CascadeDeform {
    CascadeDeform {
        layers: hierarchy
            .layer_sizes
            .iter()
            .map(|&k| vec![ClusterDeformParams::identity(); k])
            .collect(),
        deltas: vec![PerGaussianDelta::identity(); n_gaussians],
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerForm {
    /// `p + σ(R(x − p) + t)`: identity at zero parameters.
    #[default]
    Anchored,
    /// `σ(R(x − p) + t)` without re-adding the centroid.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformOptions {
    pub form: LayerForm,
    /// When false, orientation and scale ignore the deformation Jacobian and
    /// only the per-Gaussian deltas change them.
    pub propagate_covariance: bool,
}

impl Default for DeformOptions {
    fn default() -> Self {
        Self {
            form: LayerForm::Anchored,
            propagate_covariance: true,
        }
    }
}

/// Scaling factor `σ(x)` and its derivative w.r.t. the tanh argument.
fn sigma<T: Real>(params: &ClusterDeformParams<T>, offset: Vec3<T>) -> (T, T) {
    let th = (params.scale_dir.dot(offset) + params.scale_bias).tanh();
    debug_assert!(
        th.val() + 1.0 >= 0.0 && th.val() + 1.0 <= 2.0,
        "scaling factor outside [0, 2]"
    );
    (th + T::cst(1.0), T::cst(1.0) - th * th)
}

/// Position and Jacobian of one layer map at `x`.
pub fn layer_eval<T: Real>(
    params: &ClusterDeformParams<T>,
    centroid: Vec3<T>,
    x: Vec3<T>,
    form: LayerForm,
) -> (Vec3<T>, Mat3<T>) {
    let r = params.rotation.normalized().to_mat_unit();
    let offset = x - centroid;
    let (s, ds) = sigma(params, offset);
    let v = r.mul_vec(offset) + params.translation;
    let moved = v.scale(s);
    let out = match form {
        // x + (moved − offset) equals p + moved but is exact at zero params.
        LayerForm::Anchored => x + (moved - offset),
        LayerForm::Literal => moved,
    };
    let jac = r.scale(s).add(&v.outer(params.scale_dir.scale(ds)));
    (out, jac)
}

pub fn layer_apply(params: &ClusterDeformParams, centroid: Vec3, x: Vec3) -> Vec3 {
    layer_eval(params, centroid, x, LayerForm::Anchored).0
}

pub fn layer_jacobian(params: &ClusterDeformParams, centroid: Vec3, x: Vec3) -> Mat3 {
    layer_eval(params, centroid, x, LayerForm::Anchored).1
}

/// Scaling factor of a layer at `x` (always in `(0, 2)`).
pub fn layer_sigma(params: &ClusterDeformParams, centroid: Vec3, x: Vec3) -> f64 {
    sigma(params, x - centroid).0
}

/// Deformed center, orientation and scale of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianOutput<T = f64> {
    pub center: Vec3<T>,
    pub orientation: Quat<T>,
    pub scale: Vec3<T>,
}

/// Upstream gradient w.r.t. one [`GaussianOutput`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputGrad {
    pub center: Vec3,
    pub orientation: Quat,
    pub scale: Vec3,
}

impl OutputGrad {
    pub fn zero() -> Self {
        Self {
            center: Vec3::ZERO,
            orientation: Quat::new(0.0, 0.0, 0.0, 0.0),
            scale: Vec3::ZERO,
        }
    }

    pub fn add(&mut self, o: &OutputGrad) {
        self.center += o.center;
        self.orientation = Quat::new(
            self.orientation.w + o.orientation.w,
            self.orientation.x + o.orientation.x,
            self.orientation.y + o.orientation.y,
            self.orientation.z + o.orientation.z,
        );
        self.scale += o.scale;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            center: self.center.scale(s),
            orientation: Quat::new(
                self.orientation.w * s,
                self.orientation.x * s,
                self.orientation.y * s,
                self.orientation.z * s,
            ),
            scale: self.scale.scale(s),
        }
    }
}

/// Smallest-to-largest eigenvalue ratio below which a propagated covariance
/// counts as degenerate.
pub const DEGENERATE_RATIO: f64 = 1e-12;

/// Full per-Gaussian forward map: cascade, delta, covariance propagation.
/// `layers` lists `(params, centroid)` of the Gaussian's cluster in every
/// layer, coarsest first.
pub fn forward_gaussian<T: Real>(
    index: usize,
    g: &GaussianState,
    layers: &[(ClusterDeformParams<T>, Vec3)],
    delta: &PerGaussianDelta<T>,
    opts: &DeformOptions,
) -> Result<GaussianOutput<T>> {
    let mut x = Vec3::<T>::lift(g.center);
    let mut jac = Mat3::<T>::identity();
    for (params, centroid) in layers {
        let (next, jl) = layer_eval(params, Vec3::lift(*centroid), x, opts.form);
        jac = jl.mul_mat(&jac);
        x = next;
    }
    let center = x + delta.d_center;

    let (base_q, base_s) = if opts.propagate_covariance {
        propagate(index, g, &jac)?
    } else {
        (Quat::lift(g.orientation), Vec3::lift(g.scale))
    };

    let orientation = delta.d_rotation.normalized().mul(base_q);
    let ls = delta.d_log_scale;
    let scale = Vec3::new(base_s.x * ls.x.exp(), base_s.y * ls.y.exp(), base_s.z * ls.z.exp());
    Ok(GaussianOutput {
        center,
        orientation,
        scale,
    })
}

fn gaussian_layers<'a>(
    cascade: &'a CascadeDeform,
    hierarchy: &'a ClusterHierarchy,
    i: usize,
) -> impl Iterator<Item = (&'a ClusterDeformParams, Vec3, usize, usize)> + 'a {
    (0..hierarchy.num_layers()).map(move |k| {
        let c = hierarchy.assignments[k][i] as usize;
        (&cascade.layers[k][c], hierarchy.centroids[k][c], k, c)
    })
}

/// New orientation and scales of `Σ' = J Σ Jᵀ`.
///
/// Works in the Gaussian's own frame: with `L = I + Rᵀ(J − I)R` and
/// `M = L·diag(s)`, `Σ' = R M Mᵀ Rᵀ`. `MᵀM` is diagonalized starting from the
/// identity so axis k of the result stays attached to axis k of the input,
/// and a zero deformation reproduces the input bit for bit.
fn propagate<T: Real>(index: usize, g: &GaussianState, jac: &Mat3<T>) -> Result<(Quat<T>, Vec3<T>)> {
    let r = Mat3::<T>::lift(&g.orientation.normalized().to_mat_unit());
    let mut dev = *jac;
    for (k, row) in dev.m.iter_mut().enumerate() {
        row[k] = row[k] - T::cst(1.0);
    }
    let mut local = r.transpose().mul_mat(&dev).mul_mat(&r);
    for (k, row) in local.m.iter_mut().enumerate() {
        row[k] = row[k] + T::cst(1.0);
    }
    let s0 = Vec3::<T>::lift(g.scale).to_array();
    let mut m = local;
    for row in m.m.iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * s0[c];
        }
    }
    let a = m.transpose().mul_mat(&m);
    let (lam, w) = T::sym_eigen(&a);
    let lv = lam.value();
    let (lo, hi) = (lv.x.min(lv.y).min(lv.z), lv.max_component());
    let reference = hi.max(g.scale.max_component().powi(2));
    if !(lo > DEGENERATE_RATIO * reference) || !lo.is_finite() {
        return Err(Error::DegenerateCovariance {
            index,
            ratio: lo / reference,
        });
    }
    let s = [lam.x.sqrt(), lam.y.sqrt(), lam.z.sqrt()];
    // U = L·diag(s0)·W·diag(1/s); the middle factor is formed entrywise.
    let mut mid = w;
    for (i, row) in mid.m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * (s0[i] / s[j]);
        }
    }
    let mut u = local.mul_mat(&mid);
    if u.det().val() < 0.0 {
        for row in u.m.iter_mut() {
            row[2] = -row[2];
        }
    }
    let q = Quat::<T>::lift(g.orientation).mul(Quat::from_mat(&u));
    Ok((q, Vec3::new(s[0], s[1], s[2])))
}

/// Deformed outputs of every Gaussian (values only).
pub fn cascade_outputs(
    cascade: &CascadeDeform,
    hierarchy: &ClusterHierarchy,
    set: &GaussianSet,
    opts: &DeformOptions,
) -> Result<Vec<GaussianOutput>> {
    cascade.check_bound(hierarchy, set.len())?;
    set.gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let layers: Vec<(ClusterDeformParams, Vec3)> = gaussian_layers(cascade, hierarchy, i)
                .map(|(p, c, _, _)| (*p, c))
                .collect();
            forward_gaussian(i, g, &layers, &cascade.deltas[i], opts)
        })
        .collect()
}

/// Applies the cascade to every Gaussian; the returned set is the next frame.
pub fn cascade_apply(
    cascade: &CascadeDeform,
    hierarchy: &ClusterHierarchy,
    set: &GaussianSet,
    opts: &DeformOptions,
) -> Result<GaussianSet> {
    let outs = cascade_outputs(cascade, hierarchy, set, opts)?;
    Ok(apply_outputs(set, &outs))
}

pub fn apply_outputs(set: &GaussianSet, outs: &[GaussianOutput]) -> GaussianSet {
    let gaussians = set
        .gaussians
        .iter()
        .zip(outs)
        .map(|(g, o)| GaussianState {
            center: o.center,
            orientation: o.orientation,
            scale: o.scale,
            color: g.color,
            cluster_ids: g.cluster_ids.clone(),
        })
        .collect();
    GaussianSet::new(gaussians, set.frame_index + 1)
}

/// Accumulated cascade Jacobian `J_K ⋯ J_1` at a Gaussian's center.
pub fn cascade_jacobian(
    cascade: &CascadeDeform,
    hierarchy: &ClusterHierarchy,
    i: usize,
    x: Vec3,
    form: LayerForm,
) -> Mat3 {
    let mut x = x;
    let mut jac = Mat3::identity();
    for (p, c, _, _) in gaussian_layers(cascade, hierarchy, i) {
        let (next, jl) = layer_eval(p, c, x, form);
        jac = jl.mul_mat(&jac);
        x = next;
    }
    jac
}

fn var_params(p: &ClusterDeformParams) -> ClusterDeformParams<Var> {
    ClusterDeformParams {
        rotation: Quat::from_array(p.rotation.to_array().map(Var::input)),
        translation: Vec3::from_array(p.translation.to_array().map(Var::input)),
        scale_dir: Vec3::from_array(p.scale_dir.to_array().map(Var::input)),
        scale_bias: Var::input(p.scale_bias),
    }
}

fn var_delta(d: &PerGaussianDelta) -> PerGaussianDelta<Var> {
    PerGaussianDelta {
        d_center: Vec3::from_array(d.d_center.to_array().map(Var::input)),
        d_rotation: Quat::from_array(d.d_rotation.to_array().map(Var::input)),
        d_log_scale: Vec3::from_array(d.d_log_scale.to_array().map(Var::input)),
    }
}

fn read_params(adj: &ad::Adjoints, p: &ClusterDeformParams<Var>) -> ClusterDeformParams {
    ClusterDeformParams {
        rotation: Quat::from_array(p.rotation.to_array().map(|v| adj.wrt(v))),
        translation: Vec3::from_array(p.translation.to_array().map(|v| adj.wrt(v))),
        scale_dir: Vec3::from_array(p.scale_dir.to_array().map(|v| adj.wrt(v))),
        scale_bias: adj.wrt(p.scale_bias),
    }
}

fn read_delta(adj: &ad::Adjoints, d: &PerGaussianDelta<Var>) -> PerGaussianDelta {
    PerGaussianDelta {
        d_center: Vec3::from_array(d.d_center.to_array().map(|v| adj.wrt(v))),
        d_rotation: Quat::from_array(d.d_rotation.to_array().map(|v| adj.wrt(v))),
        d_log_scale: Vec3::from_array(d.d_log_scale.to_array().map(|v| adj.wrt(v))),
    }
}

/// Gradient of `⟨grad, output⟩` w.r.t. the Gaussian's layer parameters and
/// its delta, via one taped forward and reverse sweep.
pub fn gaussian_vjp(
    index: usize,
    g: &GaussianState,
    layers: &[(ClusterDeformParams, Vec3)],
    delta: &PerGaussianDelta,
    opts: &DeformOptions,
    grad: &OutputGrad,
) -> Result<(Vec<ClusterDeformParams>, PerGaussianDelta)> {
    ad::reset();
    let vlayers: Vec<(ClusterDeformParams<Var>, Vec3)> =
        layers.iter().map(|(p, c)| (var_params(p), *c)).collect();
    let vdelta = var_delta(delta);
    let out = forward_gaussian(index, g, &vlayers, &vdelta, opts)?;
    let mut seeds = Vec::with_capacity(10);
    seeds.extend(out.center.to_array().into_iter().zip(grad.center.to_array()));
    seeds.extend(out.orientation.to_array().into_iter().zip(grad.orientation.to_array()));
    seeds.extend(out.scale.to_array().into_iter().zip(grad.scale.to_array()));
    let adj = ad::backward(&seeds);
    let lg = vlayers.iter().map(|(p, _)| read_params(&adj, p)).collect();
    let dg = read_delta(&adj, &vdelta);
    ad::reset();
    Ok((lg, dg))
}

fn add_params(acc: &mut ClusterDeformParams, g: &ClusterDeformParams) {
    let mut q = acc.rotation.to_array();
    for (a, b) in q.iter_mut().zip(g.rotation.to_array()) {
        *a += b;
    }
    acc.rotation = Quat::from_array(q);
    acc.translation += g.translation;
    acc.scale_dir += g.scale_dir;
    acc.scale_bias += g.scale_bias;
}

/// Pulls per-Gaussian output gradients back onto every cascade parameter.
/// Per-Gaussian work runs in parallel; the reduction runs in index order so
/// the result does not depend on the thread count.
pub fn cascade_backward(
    cascade: &CascadeDeform,
    hierarchy: &ClusterHierarchy,
    set: &GaussianSet,
    opts: &DeformOptions,
    grads: &[OutputGrad],
) -> Result<CascadeDeform> {
    cascade.check_bound(hierarchy, set.len())?;
    if grads.len() != set.len() {
        return Err(Error::ShapeMismatch("one output gradient per gaussian".into()));
    }
    let per: Vec<(Vec<ClusterDeformParams>, PerGaussianDelta)> = set
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let layers: Vec<(ClusterDeformParams, Vec3)> = gaussian_layers(cascade, hierarchy, i)
                .map(|(p, c, _, _)| (*p, c))
                .collect();
            gaussian_vjp(i, g, &layers, &cascade.deltas[i], opts, &grads[i])
        })
        .collect::<Result<_>>()?;

    let mut out = cascade.zeros_like();
    for (i, (lg, dg)) in per.into_iter().enumerate() {
        for (k, g) in lg.iter().enumerate() {
            let c = hierarchy.assignments[k][i] as usize;
            add_params(&mut out.layers[k][c], g);
        }
        out.deltas[i] = dg;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::build_hierarchy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    fn rand_params(rng: &mut ChaCha8Rng) -> ClusterDeformParams {
        ClusterDeformParams {
            rotation: Quat::new(1.0, rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)),
            translation: rand_vec(rng, 0.3),
            scale_dir: rand_vec(rng, 1.0),
            scale_bias: rng.random_range(-0.5..0.5),
        }
    }

    fn fd_jacobian(p: &ClusterDeformParams, c: Vec3, x: Vec3, h: f64) -> Mat3 {
        let mut j = Mat3::zeros();
        for col in 0..3 {
            let mut e = [0.0; 3];
            e[col] = h;
            let e = Vec3::from_array(e);
            let d = (layer_apply(p, c, x + e) - layer_apply(p, c, x - e)).scale(0.5 / h);
            for row in 0..3 {
                j.m[row][col] = d.to_array()[row];
            }
        }
        j
    }

    #[test]
    fn zero_params_are_identity() {
        let p = ClusterDeformParams::identity();
        let c = Vec3::new(0.3, -0.2, 0.9);
        let x = Vec3::new(1.0, 2.0, -3.0);
        assert!((layer_apply(&p, c, x) - x).norm() < 1e-15);
        assert!(layer_jacobian(&p, c, x).sub(&Mat3::identity()).frobenius() < 1e-15);
    }

    #[test]
    fn saturated_bias_doubles_rigid_motion() {
        let p = ClusterDeformParams {
            rotation: Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.3),
            translation: Vec3::new(0.1, 0.0, 0.0),
            scale_dir: Vec3::ZERO,
            scale_bias: 20.0,
        };
        let c = Vec3::new(1.0, 1.0, 0.0);
        let x = Vec3::new(1.5, 0.7, 0.2);
        let s = layer_sigma(&p, c, x);
        assert!(s > 0.0 && s <= 2.0 && (s - 2.0).abs() < 1e-15);
        let want = c + (p.rotation.rotate(x - c) + p.translation).scale(2.0);
        assert!((layer_apply(&p, c, x) - want).norm() < 1e-12);
        let s_neg = layer_sigma(&ClusterDeformParams { scale_bias: -20.0, ..p }, c, x);
        assert!(s_neg >= 0.0 && s_neg < 1e-15);
    }

    #[test]
    fn quarter_turn_example() {
        let h = 0.5f64.sqrt();
        let p = ClusterDeformParams {
            rotation: Quat::new(h, 0.0, 0.0, h),
            translation: Vec3::new(1.0, 0.0, 0.0),
            scale_dir: Vec3::ZERO,
            scale_bias: 0.0,
        };
        let y = layer_apply(&p, Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0));
        assert!((y - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn constant_scaling_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = rand_params(&mut rng);
        p.scale_dir = Vec3::ZERO;
        let want = p.rotation.normalized().to_mat_unit().scale(p.scale_bias.tanh() + 1.0);
        let got = layer_jacobian(&p, rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0));
        assert!(got.sub(&want).frobenius() < 1e-15);
    }

    #[test]
    fn layer_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p = rand_params(&mut rng);
            let c = rand_vec(&mut rng, 1.0);
            let x = rand_vec(&mut rng, 1.0);
            let an = layer_jacobian(&p, c, x);
            let fd = fd_jacobian(&p, c, x, 1e-5);
            assert!(an.sub(&fd).frobenius() <= 1e-5 * an.frobenius().max(1.0));
        }
    }

    #[test]
    fn literal_form_is_offset_by_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = rand_params(&mut rng);
        let c = rand_vec(&mut rng, 1.0);
        let x = rand_vec(&mut rng, 1.0);
        let (a, ja) = layer_eval(&p, c, x, LayerForm::Anchored);
        let (l, jl) = layer_eval(&p, c, x, LayerForm::Literal);
        assert!((a - c - l).norm() < 1e-14);
        assert_eq!(ja, jl);
    }

    fn scene(n: usize, seed: u64) -> GaussianSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs = (0..n)
            .map(|_| {
                let q = Quat::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalized();
                GaussianState::new(
                    rand_vec(&mut rng, 1.0),
                    q,
                    Vec3::new(
                        rng.random_range(0.02..0.03),
                        rng.random_range(0.012..0.018),
                        rng.random_range(0.005..0.009),
                    ),
                )
            })
            .collect();
        GaussianSet::new(gs, 0)
    }

    #[test]
    fn zero_cascade_is_identity() {
        let set = scene(120, 4);
        let h = build_hierarchy(&set, &[2, 6, 20], 0).unwrap();
        let cas = cascade_zero(&h, set.len());
        let out = cascade_apply(&cas, &h, &set, &DeformOptions::default()).unwrap();
        assert_eq!(out.frame_index, 1);
        for (a, b) in set.gaussians.iter().zip(&out.gaussians) {
            assert_eq!(a.center, b.center);
            assert_eq!(a.orientation, b.orientation);
            assert_eq!(a.scale, b.scale);
        }
    }

    #[test]
    fn parameter_count() {
        let set = scene(60, 5);
        let h = build_hierarchy(&set, &[2, 5, 12], 0).unwrap();
        let cas = cascade_zero(&h, set.len());
        // Per cluster: quaternion 4 + translation 3 + direction 3 + bias 1.
        assert_eq!(cas.param_count(), (2 + 5 + 12) * 11 + 60 * 10);
        let json = serde_json::to_string(&cas).unwrap();
        let back: CascadeDeform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cas);
    }

    #[test]
    fn stacked_translations_add() {
        let set = scene(40, 6);
        let h = build_hierarchy(&set, &[1, 4], 0).unwrap();
        let mut cas = cascade_zero(&h, set.len());
        let t1 = Vec3::new(0.1, -0.2, 0.05);
        let t2 = Vec3::new(-0.03, 0.07, 0.2);
        cas.layers[0][0].translation = t1;
        for p in cas.layers[1].iter_mut() {
            p.translation = t2;
        }
        let out = cascade_apply(&cas, &h, &set, &DeformOptions::default()).unwrap();
        for (a, b) in set.gaussians.iter().zip(&out.gaussians) {
            assert!((b.center - (a.center + t1 + t2)).norm() < 1e-12);
            assert!((a.scale - b.scale).norm() < 1e-12);
        }
    }

    #[test]
    fn global_rotation_rotates_covariances() {
        let set = scene(80, 7);
        let h = build_hierarchy(&set, &[1, 3, 9], 0).unwrap();
        let mut cas = cascade_zero(&h, set.len());
        let rot = Quat::from_axis_angle(Vec3::new(0.2, 1.0, -0.4), 0.7);
        cas.layers[0][0].rotation = rot;
        let out = cascade_apply(&cas, &h, &set, &DeformOptions::default()).unwrap();
        let c = h.centroids[0][0];
        for (a, b) in set.gaussians.iter().zip(&out.gaussians) {
            // Direct rigid-transform oracle.
            assert!((b.center - (c + rot.rotate(a.center - c))).norm() < 1e-12);
            assert!(b.orientation.distance(rot.mul(a.orientation)) < 1e-7);
            let r = rot.to_mat_unit();
            let want = r.mul_mat(&a.covariance()).mul_mat(&r.transpose());
            assert!(b.covariance().sub(&want).frobenius() < 1e-12);
        }
    }

    #[test]
    fn composed_rotations_about_shared_centroid() {
        let set = scene(50, 8);
        let h = build_hierarchy(&set, &[1, 1, 1], 0).unwrap();
        let mut cas = cascade_zero(&h, set.len());
        let qs = [
            Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 0.3),
            Quat::from_axis_angle(Vec3::new(0.0, 1.0, 1.0), -0.5),
            Quat::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.2),
        ];
        for k in 0..3 {
            cas.layers[k][0].rotation = qs[k];
        }
        let composed = qs[2].mul(qs[1]).mul(qs[0]);
        let out = cascade_apply(&cas, &h, &set, &DeformOptions::default()).unwrap();
        for (a, b) in set.gaussians.iter().zip(&out.gaussians) {
            assert!(b.orientation.distance(composed.mul(a.orientation)) < 1e-7);
        }
    }

    #[test]
    fn disabled_propagation_keeps_shape() {
        let set = scene(30, 9);
        let h = build_hierarchy(&set, &[1, 3], 0).unwrap();
        let mut cas = cascade_zero(&h, set.len());
        cas.layers[0][0].rotation = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 1.0);
        cas.layers[0][0].scale_bias = 0.4;
        let opts = DeformOptions {
            propagate_covariance: false,
            ..Default::default()
        };
        let out = cascade_apply(&cas, &h, &set, &opts).unwrap();
        for (a, b) in set.gaussians.iter().zip(&out.gaussians) {
            assert!(a.orientation.distance(b.orientation) < 1e-15);
            assert_eq!(a.scale, b.scale);
        }
    }

    #[test]
    fn degenerate_jacobian_is_reported() {
        let set = scene(10, 10);
        let h = build_hierarchy(&set, &[1], 0).unwrap();
        let mut cas = cascade_zero(&h, set.len());
        cas.layers[0][0].scale_bias = -40.0;
        let err = cascade_apply(&cas, &h, &set, &DeformOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateCovariance { index: 0, .. }));
    }

    #[test]
    fn cascade_jacobian_matches_finite_differences() {
        let set = scene(60, 11);
        let h = build_hierarchy(&set, &[2, 4, 8], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut cas = cascade_zero(&h, set.len());
        for layer in cas.layers.iter_mut() {
            for p in layer.iter_mut() {
                *p = rand_params(&mut rng);
            }
        }
        let f = |x: Vec3, i: usize| {
            let mut x = x;
            for k in 0..3 {
                let c = h.assignments[k][i] as usize;
                x = layer_apply(&cas.layers[k][c], h.centroids[k][c], x);
            }
            x
        };
        for i in 0..set.len() {
            let x = set.gaussians[i].center;
            let an = cascade_jacobian(&cas, &h, i, x, LayerForm::Anchored);
            let hstep = 1e-5;
            let mut fd = Mat3::zeros();
            for col in 0..3 {
                let mut e = [0.0; 3];
                e[col] = hstep;
                let e = Vec3::from_array(e);
                let d = (f(x + e, i) - f(x - e, i)).scale(0.5 / hstep);
                for row in 0..3 {
                    fd.m[row][col] = d.to_array()[row];
                }
            }
            assert!(an.sub(&fd).frobenius() <= 1e-5 * an.frobenius().max(1.0));
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let set = scene(30, 13);
        let h = build_hierarchy(&set, &[2, 5, 10], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut cas = cascade_zero(&h, set.len());
        for layer in cas.layers.iter_mut() {
            for p in layer.iter_mut() {
                *p = rand_params(&mut rng);
                p.scale_dir = p.scale_dir.scale(0.3);
            }
        }
        for d in cas.deltas.iter_mut() {
            d.d_center = rand_vec(&mut rng, 0.01);
            d.d_rotation = Quat::new(1.0, 0.05, -0.02, 0.03);
            d.d_log_scale = rand_vec(&mut rng, 0.1);
        }
        let opts = DeformOptions::default();
        let i = 3;
        let g = &set.gaussians[i];
        let layers: Vec<(ClusterDeformParams, Vec3)> = gaussian_layers(&cas, &h, i)
            .map(|(p, c, _, _)| (*p, c))
            .collect();
        let grad = OutputGrad {
            center: Vec3::new(0.3, -0.5, 0.2),
            orientation: Quat::new(0.1, 0.7, -0.4, 0.2),
            scale: Vec3::new(2.0, -1.0, 0.5),
        };
        let objective = |layers: &[(ClusterDeformParams, Vec3)], d: &PerGaussianDelta| {
            let o = forward_gaussian(i, g, layers, d, &opts).unwrap();
            // Sign-fix orientation against the unperturbed output.
            o.center.dot(grad.center) + o.orientation.dot(grad.orientation) + o.scale.dot(grad.scale)
        };
        let (lg, dg) = gaussian_vjp(i, g, &layers, &cas.deltas[i], &opts, &grad).unwrap();
        let h_ = 1e-6;
        for k in 0..3 {
            for slot in 0..CLUSTER_PARAMS {
                let bump = |s: f64| {
                    let mut l = layers.clone();
                    let p = &mut l[k].0;
                    match slot {
                        0..=3 => {
                            let mut a = p.rotation.to_array();
                            a[slot] += s;
                            p.rotation = Quat::from_array(a);
                        }
                        4..=6 => {
                            let mut a = p.translation.to_array();
                            a[slot - 4] += s;
                            p.translation = Vec3::from_array(a);
                        }
                        7..=9 => {
                            let mut a = p.scale_dir.to_array();
                            a[slot - 7] += s;
                            p.scale_dir = Vec3::from_array(a);
                        }
                        _ => p.scale_bias += s,
                    }
                    objective(&l, &cas.deltas[i])
                };
                let fd = (bump(h_) - bump(-h_)) / (2.0 * h_);
                let g = &lg[k];
                let an = [
                    g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z,
                    g.translation.x, g.translation.y, g.translation.z,
                    g.scale_dir.x, g.scale_dir.y, g.scale_dir.z, g.scale_bias,
                ][slot];
                assert!((an - fd).abs() <= 1e-5 * fd.abs().max(1.0), "layer {k} slot {slot}: {an} vs {fd}");
            }
        }
        let d0 = cas.deltas[i];
        let an = [
            dg.d_center.x, dg.d_center.y, dg.d_center.z,
            dg.d_rotation.w, dg.d_rotation.x, dg.d_rotation.y, dg.d_rotation.z,
            dg.d_log_scale.x, dg.d_log_scale.y, dg.d_log_scale.z,
        ];
        for slot in 0..DELTA_PARAMS {
            let bump = |s: f64| {
                let mut d = d0;
                match slot {
                    0..=2 => {
                        let mut a = d.d_center.to_array();
                        a[slot] += s;
                        d.d_center = Vec3::from_array(a);
                    }
                    3..=6 => {
                        let mut a = d.d_rotation.to_array();
                        a[slot - 3] += s;
                        d.d_rotation = Quat::from_array(a);
                    }
                    _ => {
                        let mut a = d.d_log_scale.to_array();
                        a[slot - 7] += s;
                        d.d_log_scale = Vec3::from_array(a);
                    }
                }
                objective(&layers, &d)
            };
            let fd = (bump(h_) - bump(-h_)) / (2.0 * h_);
            assert!((an[slot] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "delta slot {slot}: {} vs {fd}", an[slot]);
        }
    }
}
