//! Seeded synthetic articulated scenes with exact ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, GaussianState};
use crate::loss::DataObservation;
use crate::math::{polar_rotation, Mat3, Quat, Vec3};
use crate::track::PinholeCamera;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Spoked wheel spinning about a horizontal axle on a static stand.
    Wheel,
    /// Two pendulums swinging out of phase under a static bar.
    Pendulum,
    /// Static base with two hinged links.
    TwoLinkArm,
    /// Sheet under a travelling sine wave (non-rigid).
    ClothWave,
    /// Two spheres translating in opposite directions.
    TwoBlobs,
    /// Box stretched along x about its center (non-rigid).
    Stretch,
}

impl SceneKind {
    pub const ALL: [SceneKind; 6] = [
        SceneKind::Wheel,
        SceneKind::Pendulum,
        SceneKind::TwoLinkArm,
        SceneKind::ClothWave,
        SceneKind::TwoBlobs,
        SceneKind::Stretch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Wheel => "wheel",
            SceneKind::Pendulum => "pendulum",
            SceneKind::TwoLinkArm => "two_link_arm",
            SceneKind::ClothWave => "cloth_wave",
            SceneKind::TwoBlobs => "two_blobs",
            SceneKind::Stretch => "stretch",
        }
    }

    /// Number of distinct part labels the generator emits.
    pub fn num_parts(self) -> usize {
        match self {
            SceneKind::Wheel | SceneKind::TwoBlobs => 2,
            SceneKind::Pendulum | SceneKind::TwoLinkArm => 3,
            SceneKind::ClothWave | SceneKind::Stretch => 1,
        }
    }

    pub fn is_rigid(self) -> bool {
        !matches!(self, SceneKind::ClothWave | SceneKind::Stretch)
    }
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("kind: unknown scene kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n_gaussians: usize,
    pub n_frames: usize,
    /// Degrees per frame for rotating kinds; hundredths of a scene unit per
    /// frame for `two_blobs`; percent per frame for `stretch`; wave phase in
    /// degrees per frame for `cloth_wave`.
    pub motion: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, n_gaussians: usize, n_frames: usize, motion: f64, seed: u64) -> Self {
        Self {
            kind,
            n_gaussians,
            n_frames,
            motion,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gaussians < 10 {
            return Err(Error::Config(format!("n_gaussians: must be at least 10, got {}", self.n_gaussians)));
        }
        if self.n_frames < 2 {
            return Err(Error::Config(format!("n_frames: must be at least 2, got {}", self.n_frames)));
        }
        if !self.motion.is_finite() {
            return Err(Error::Config("motion: must be finite".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma: must be finite and non-negative".into()));
        }
        if self.kind == SceneKind::Stretch && self.motion <= -100.0 {
            return Err(Error::Config("motion: stretch rate must exceed -100 percent".into()));
        }
        Ok(())
    }
}

/// Generated scene: frame-0 Gaussians, per-frame observations and exact
/// ground truth. All per-frame vectors are indexed by frame, frame 0 first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSequence {
    pub spec: SceneSpec,
    pub frame0: GaussianSet,
    pub observations: Vec<DataObservation>,
    pub gt_centers: Vec<Vec<Vec3>>,
    /// Rotation of each Gaussian's neighbourhood relative to frame 0.
    pub gt_rotations: Vec<Vec<Quat>>,
    pub part_labels: Vec<u32>,
    pub cameras: Vec<PinholeCamera>,
}

impl SceneSequence {
    pub fn n_frames(&self) -> usize {
        self.gt_centers.len()
    }

    /// Observations of frames `1..`, the input of the online fit.
    pub fn fit_inputs(&self) -> &[DataObservation] {
        &self.observations[1..]
    }

    /// Indices of Gaussians carrying `label`.
    pub fn part(&self, label: u32) -> Vec<usize> {
        (0..self.part_labels.len()).filter(|&i| self.part_labels[i] == label).collect()
    }

    /// Truncated copy holding the first `n` frames.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.clamp(2, self.n_frames());
        let mut s = self.clone();
        s.spec.n_frames = n;
        s.observations.truncate(n);
        s.gt_centers.truncate(n);
        s.gt_rotations.truncate(n);
        s
    }
}

/// Rigid map `x ↦ rot·x + trans`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Rigid {
    rot: Quat,
    trans: Vec3,
}

impl Rigid {
    const IDENTITY: Rigid = Rigid {
        rot: Quat::IDENTITY,
        trans: Vec3::ZERO,
    };

    fn about(axis: Vec3, angle: f64, pivot: Vec3) -> Self {
        let rot = Quat::from_axis_angle(axis, angle);
        Rigid {
            rot,
            trans: pivot - rot.rotate(pivot),
        }
    }

    fn translation(d: Vec3) -> Self {
        Rigid {
            rot: Quat::IDENTITY,
            trans: d,
        }
    }

    fn apply(&self, x: Vec3) -> Vec3 {
        self.rot.rotate(x) + self.trans
    }

    /// `self ∘ inner`.
    fn then_after(&self, inner: &Rigid) -> Rigid {
        Rigid {
            rot: self.rot.mul(inner.rot).normalized(),
            trans: self.apply(inner.trans),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    /// Surface of an axis-aligned box.
    Box { lo: Vec3, hi: Vec3 },
    /// Lateral surface of a cylinder from `a` to `b`.
    Cylinder { a: Vec3, b: Vec3, radius: f64 },
    /// Surface of a sphere.
    Sphere { center: Vec3, radius: f64 },
    /// Torus with the given axis.
    Torus { center: Vec3, axis: Vec3, major: f64, minor: f64 },
    /// Solid ball, uniform in volume.
    Ball { center: Vec3, radius: f64 },
    /// Rectangle in the plane `z = 0` spanning `[-hx, hx] × [-hy, hy]`.
    Sheet { hx: f64, hy: f64 },
}

fn orthonormal_pair(axis: Vec3) -> (Vec3, Vec3) {
    let a = axis.scale(1.0 / axis.norm());
    let helper = if a.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let u = a.cross(helper);
    let u = u.scale(1.0 / u.norm());
    (u, a.cross(u))
}

impl Shape {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match *self {
            Shape::Box { lo, hi } => {
                let d = hi - lo;
                let areas = [d.y * d.z, d.x * d.z, d.x * d.y];
                let total = 2.0 * (areas[0] + areas[1] + areas[2]);
                let mut pick = rng.random::<f64>() * total;
                let mut face = 0;
                for (f, a) in areas.iter().enumerate() {
                    if pick < 2.0 * a {
                        face = f;
                        break;
                    }
                    pick -= 2.0 * a;
                    face = f;
                }
                let side = rng.random::<bool>();
                let mut p = [
                    lo.x + rng.random::<f64>() * d.x,
                    lo.y + rng.random::<f64>() * d.y,
                    lo.z + rng.random::<f64>() * d.z,
                ];
                p[face] = if side { hi.to_array()[face] } else { lo.to_array()[face] };
                Vec3::from_array(p)
            }
            Shape::Cylinder { a, b, radius } => {
                let (u, v) = orthonormal_pair(b - a);
                let s: f64 = rng.random();
                let th = rng.random::<f64>() * 2.0 * PI;
                a + (b - a).scale(s) + u.scale(radius * th.cos()) + v.scale(radius * th.sin())
            }
            Shape::Sphere { center, radius } => center + unit_vector(rng).scale(radius),
            Shape::Ball { center, radius } => {
                center + unit_vector(rng).scale(radius * rng.random::<f64>().cbrt())
            }
            Shape::Torus {
                center,
                axis,
                major,
                minor,
            } => {
                let (u, v) = orthonormal_pair(axis);
                let a = axis.scale(1.0 / axis.norm());
                // Rejection on the tube angle makes the density uniform in area.
                let phi = loop {
                    let phi = rng.random::<f64>() * 2.0 * PI;
                    if rng.random::<f64>() * (major + minor) <= major + minor * phi.cos() {
                        break phi;
                    }
                };
                let th = rng.random::<f64>() * 2.0 * PI;
                let radial = u.scale(th.cos()) + v.scale(th.sin());
                center + radial.scale(major + minor * phi.cos()) + a.scale(minor * phi.sin())
            }
            Shape::Sheet { hx, hy } => Vec3::new(
                (2.0 * rng.random::<f64>() - 1.0) * hx,
                (2.0 * rng.random::<f64>() - 1.0) * hy,
                0.0,
            ),
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v.scale(1.0 / n);
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if let Ok(q) = q.try_normalized() {
            return q;
        }
    }
}

/// Splits `n` proportionally to `weights` (largest remainder), at least
/// `min_each` per entry.
fn allocate(n: usize, weights: &[f64], min_each: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let spare = n - min_each * weights.len();
    let raw: Vec<f64> = weights.iter().map(|w| w / total * spare as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize + min_each).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

struct Part {
    label: u32,
    weight: f64,
    pieces: Vec<(Shape, f64)>,
}

/// Frame-0 scales before jitter; anisotropic so that orientation is
/// observable through the covariance.
pub const BASE_SCALE: [f64; 3] = [0.012, 0.008, 0.004];

/// Parts are kept apart by more than the typical neighbor-graph radius so
/// that regularizer edges rarely straddle two independently moving parts.
const WHEEL_AXLE_HEIGHT: f64 = 0.9;

fn layout(kind: SceneKind) -> Vec<Part> {
    let v = Vec3::new;
    match kind {
        SceneKind::Wheel => {
            let hub = v(0.0, 0.0, WHEEL_AXLE_HEIGHT);
            let mut wheel = vec![
                (
                    Shape::Torus {
                        center: hub,
                        axis: v(0.0, 1.0, 0.0),
                        major: 0.5,
                        minor: 0.03,
                    },
                    0.55,
                ),
                (
                    Shape::Cylinder {
                        a: hub - v(0.0, 0.05, 0.0),
                        b: hub + v(0.0, 0.05, 0.0),
                        radius: 0.06,
                    },
                    0.05,
                ),
            ];
            // Five spokes at irregular angles so the wheel has no exact
            // rotational symmetry.
            for (k, deg) in [10.0f64, 80.0, 160.0, 215.0, 290.0].into_iter().enumerate() {
                let a = deg.to_radians();
                let dir = v(a.cos(), 0.0, a.sin());
                wheel.push((
                    Shape::Cylinder {
                        a: hub + dir.scale(0.07),
                        b: hub + dir.scale(0.47),
                        radius: 0.012 + 0.002 * k as f64,
                    },
                    0.08,
                ));
            }
            let stand = vec![
                (
                    Shape::Box {
                        lo: v(-0.4, -0.5, 0.0),
                        hi: v(0.4, 0.5, 0.05),
                    },
                    0.5,
                ),
                (
                    Shape::Cylinder {
                        a: v(0.0, 0.45, 0.05),
                        b: v(0.0, 0.45, WHEEL_AXLE_HEIGHT),
                        radius: 0.02,
                    },
                    0.25,
                ),
                (
                    Shape::Cylinder {
                        a: v(0.0, -0.45, 0.05),
                        b: v(0.0, -0.45, WHEEL_AXLE_HEIGHT),
                        radius: 0.02,
                    },
                    0.25,
                ),
            ];
            vec![
                Part {
                    label: 0,
                    weight: 0.7,
                    pieces: wheel,
                },
                Part {
                    label: 1,
                    weight: 0.3,
                    pieces: stand,
                },
            ]
        }
        SceneKind::Pendulum => {
            let bar = Part {
                label: 0,
                weight: 0.2,
                pieces: vec![(
                    Shape::Cylinder {
                        a: v(-0.6, 0.0, 1.0),
                        b: v(0.6, 0.0, 1.0),
                        radius: 0.02,
                    },
                    1.0,
                )],
            };
            let bob = |x: f64, label: u32, len: f64| Part {
                label,
                weight: 0.4,
                pieces: vec![
                    (
                        Shape::Cylinder {
                            a: v(x, 0.0, 0.8),
                            b: v(x, 0.0, 1.0 - len),
                            radius: 0.015,
                        },
                        0.35,
                    ),
                    (
                        Shape::Sphere {
                            center: v(x, 0.0, 1.0 - len - 0.08),
                            radius: 0.08,
                        },
                        0.65,
                    ),
                ],
            };
            vec![bar, bob(-0.45, 1, 0.55), bob(0.45, 2, 0.45)]
        }
        SceneKind::TwoLinkArm => vec![
            Part {
                label: 0,
                weight: 0.25,
                pieces: vec![(
                    Shape::Box {
                        lo: v(-0.15, -0.1, 0.0),
                        hi: v(-0.05, 0.1, 0.3),
                    },
                    1.0,
                )],
            },
            Part {
                label: 1,
                weight: 0.4,
                pieces: vec![(
                    Shape::Box {
                        lo: v(0.07, -0.04, 0.31),
                        hi: v(0.44, 0.04, 0.39),
                    },
                    1.0,
                )],
            },
            Part {
                label: 2,
                weight: 0.35,
                pieces: vec![(
                    Shape::Box {
                        lo: v(0.57, -0.03, 0.32),
                        hi: v(0.95, 0.03, 0.38),
                    },
                    1.0,
                )],
            },
        ],
        SceneKind::ClothWave => vec![Part {
            label: 0,
            weight: 1.0,
            pieces: vec![(Shape::Sheet { hx: 0.5, hy: 0.4 }, 1.0)],
        }],
        SceneKind::TwoBlobs => {
            let blob = |x: f64, label: u32| Part {
                label,
                weight: 0.5,
                pieces: vec![(
                    Shape::Ball {
                        center: v(x, 0.0, 0.5),
                        radius: 0.2,
                    },
                    1.0,
                )],
            };
            vec![blob(-0.35, 0), blob(0.35, 1)]
        }
        SceneKind::Stretch => vec![Part {
            label: 0,
            weight: 1.0,
            pieces: vec![(
                Shape::Box {
                    lo: v(-0.3, -0.1, 0.4),
                    hi: v(0.3, 0.1, 0.6),
                },
                1.0,
            )],
        }],
    }
}

/// Oscillation period in frames of the swinging kinds.
pub const SWING_PERIOD: f64 = 24.0;

/// Swing angle (radians) relative to frame 0 of an oscillation with peak
/// angular speed `speed_deg` per frame.
fn swing(speed_deg: f64, t: f64, phase: f64) -> f64 {
    let amp = speed_deg.to_radians() * SWING_PERIOD / (2.0 * PI);
    amp * ((2.0 * PI * t / SWING_PERIOD + phase).sin() - phase.sin())
}

const CLOTH_AMPLITUDE: f64 = 0.06;
const CLOTH_WAVENUMBER: f64 = 2.0 * PI / 0.8;
const CLOTH_HEIGHT: f64 = 0.5;

fn cloth_height(x: f64, phase: f64) -> f64 {
    CLOTH_HEIGHT + CLOTH_AMPLITUDE * (CLOTH_WAVENUMBER * x - phase).sin()
}

/// Per-part rigid motion at frame `t` for the rigid kinds.
fn rigid_motion(kind: SceneKind, motion: f64, label: u32, t: f64) -> Rigid {
    let v = Vec3::new;
    match kind {
        SceneKind::Wheel => match label {
            0 => Rigid::about(v(0.0, 1.0, 0.0), (motion * t).to_radians(), v(0.0, 0.0, WHEEL_AXLE_HEIGHT)),
            _ => Rigid::IDENTITY,
        },
        SceneKind::Pendulum => match label {
            1 => Rigid::about(v(1.0, 0.0, 0.0), swing(motion, t, 0.0), v(-0.45, 0.0, 1.0)),
            2 => Rigid::about(v(1.0, 0.0, 0.0), swing(motion, t, PI / 2.0), v(0.45, 0.0, 1.0)),
            _ => Rigid::IDENTITY,
        },
        SceneKind::TwoLinkArm => {
            let shoulder = v(0.0, 0.0, 0.35);
            let elbow = v(0.5, 0.0, 0.35);
            let first = Rigid::about(v(0.0, 1.0, 0.0), swing(motion, t, 0.0), shoulder);
            match label {
                1 => first,
                2 => first.then_after(&Rigid::about(v(0.0, 1.0, 0.0), swing(motion, t, PI / 3.0), elbow)),
                _ => Rigid::IDENTITY,
            }
        }
        SceneKind::TwoBlobs => {
            let d = motion / 100.0 * t;
            Rigid::translation(v(0.0, if label == 0 { d } else { -d }, 0.0))
        }
        SceneKind::ClothWave | SceneKind::Stretch => Rigid::IDENTITY,
    }
}

/// Ground-truth position and local rotation of a frame-0 point at frame `t`.
fn moved(kind: SceneKind, motion: f64, label: u32, x0: Vec3, t: f64) -> Result<(Vec3, Quat)> {
    match kind {
        SceneKind::ClothWave => {
            let phase = motion.to_radians() * t;
            let dz = cloth_height(x0.x, phase) - cloth_height(x0.x, 0.0);
            let slope = CLOTH_AMPLITUDE
                * CLOTH_WAVENUMBER
                * ((CLOTH_WAVENUMBER * x0.x - phase).cos() - (CLOTH_WAVENUMBER * x0.x).cos());
            let f = Mat3 {
                m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [slope, 0.0, 1.0]],
            };
            let r = polar_rotation(&f)?;
            Ok((Vec3::new(x0.x, x0.y, x0.z + dz), Quat::from_mat(&r).normalized()))
        }
        SceneKind::Stretch => {
            let f = (1.0 + motion / 100.0).powf(t);
            Ok((Vec3::new(x0.x * f, x0.y, x0.z), Quat::IDENTITY))
        }
        _ => {
            let m = rigid_motion(kind, motion, label, t);
            Ok((m.apply(x0), m.rot))
        }
    }
}

/// Ring of eight cameras around the scene, looking at its middle.
pub fn camera_ring(target: Vec3, radius: f64, height: f64) -> Result<Vec<PinholeCamera>> {
    (0..8)
        .map(|k| {
            let a = 2.0 * PI * (k as f64 + 0.5) / 8.0;
            let eye = target + Vec3::new(radius * a.cos(), radius * a.sin(), height);
            PinholeCamera::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0), 500.0, 640, 480)
        })
        .collect()
}

/// Builds the scene described by `spec`. Deterministic per seed.
pub fn generate(spec: &SceneSpec) -> Result<SceneSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let parts = layout(spec.kind);
    let counts = allocate(spec.n_gaussians, &parts.iter().map(|p| p.weight).collect::<Vec<_>>(), 3);
    let mut centers = Vec::with_capacity(spec.n_gaussians);
    let mut labels = Vec::with_capacity(spec.n_gaussians);
    for (part, &count) in parts.iter().zip(&counts) {
        let piece_counts = allocate(count, &part.pieces.iter().map(|p| p.1).collect::<Vec<_>>(), 0);
        for ((shape, _), &c) in part.pieces.iter().zip(&piece_counts) {
            for _ in 0..c {
                let mut p = shape.sample(&mut rng);
                if spec.kind == SceneKind::ClothWave {
                    p.z = cloth_height(p.x, 0.0);
                }
                centers.push(p);
                labels.push(part.label);
            }
        }
    }
    let gaussians: Vec<GaussianState> = centers
        .iter()
        .zip(&labels)
        .map(|(c, &l)| {
            let jitter = |b: f64, rng: &mut ChaCha8Rng| b * (0.9 + 0.2 * rng.random::<f64>());
            let scale = Vec3::new(
                jitter(BASE_SCALE[0], &mut rng),
                jitter(BASE_SCALE[1], &mut rng),
                jitter(BASE_SCALE[2], &mut rng),
            );
            let mut g = GaussianState::new(*c, random_rotation(&mut rng), scale);
            g.color = part_color(l);
            g
        })
        .collect();
    let frame0 = GaussianSet::new(gaussians, 0);

    let mut gt_centers = Vec::with_capacity(spec.n_frames);
    let mut gt_rotations = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let mut cs = Vec::with_capacity(centers.len());
        let mut rs = Vec::with_capacity(centers.len());
        for (c, &l) in centers.iter().zip(&labels) {
            let (x, r) = if t == 0 { (*c, Quat::IDENTITY) } else { moved(spec.kind, spec.motion, l, *c, t as f64)? };
            cs.push(x);
            rs.push(r);
        }
        gt_centers.push(cs);
        gt_rotations.push(rs);
    }
    let observations = gt_centers.iter().map(|c| DataObservation::with_identity(c.clone())).collect();
    let (lo, hi) = bounds(&centers);
    let mid = (lo + hi).scale(0.5);
    let cameras = camera_ring(mid, 3.0, 1.0)?;
    let seq = SceneSequence {
        spec: spec.clone(),
        frame0,
        observations,
        gt_centers,
        gt_rotations,
        part_labels: labels,
        cameras,
    };
    if spec.noise_sigma > 0.0 {
        return perturb(&seq, spec.noise_sigma, spec.seed ^ NOISE_STREAM);
    }
    Ok(seq)
}

const NOISE_STREAM: u64 = 0x6e6f_6973_6521;

fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for p in points {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

/// Distinct display color per part label.
pub fn part_color(label: u32) -> Vec3 {
    const PALETTE: [[f64; 3]; 8] = [
        [0.90, 0.30, 0.25],
        [0.25, 0.55, 0.90],
        [0.30, 0.80, 0.35],
        [0.95, 0.75, 0.20],
        [0.65, 0.35, 0.85],
        [0.20, 0.80, 0.80],
        [0.90, 0.50, 0.70],
        [0.55, 0.55, 0.55],
    ];
    Vec3::from_array(PALETTE[label as usize % PALETTE.len()])
}

/// Adds i.i.d. normal noise of std `sigma` to every observed coordinate of
/// every frame except frame 0; ground truth is untouched.
pub fn perturb(seq: &SceneSequence, sigma: f64, seed: u64) -> Result<SceneSequence> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("noise sigma must be finite and non-negative"));
    }
    let mut out = seq.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for obs in out.observations.iter_mut().skip(1) {
        for p in obs.points.iter_mut() {
            let mut n = || sigma * rng.sample::<f64, _>(StandardNormal);
            *p = *p + Vec3::new(n(), n(), n());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kabsch_residual(a: &[Vec3], b: &[Vec3]) -> f64 {
        // Independent oracle: the best rigid fit of `a` onto `b` via the
        // polar factor of the cross-covariance.
        let n = a.len() as f64;
        let ca = a.iter().fold(Vec3::ZERO, |s, p| s + *p).scale(1.0 / n);
        let cb = b.iter().fold(Vec3::ZERO, |s, p| s + *p).scale(1.0 / n);
        let mut h = Mat3::zeros();
        for (p, q) in a.iter().zip(b) {
            h = h.add(&(*q - cb).outer(*p - ca));
        }
        let r = polar_rotation(&h).unwrap();
        a.iter()
            .zip(b)
            .map(|(p, q)| (r.mul_vec(*p - ca) + cb - *q).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_motion_is_static() {
        for kind in SceneKind::ALL {
            let s = generate(&SceneSpec::new(kind, 60, 4, 0.0, 3)).unwrap();
            for t in 1..4 {
                assert_eq!(s.gt_centers[t], s.gt_centers[0], "{kind:?}");
                assert_eq!(s.observations[t].points, s.frame0.centers());
            }
        }
    }

    #[test]
    fn wheel_full_revolution() {
        let s = generate(&SceneSpec::new(SceneKind::Wheel, 200, 37, 10.0, 1)).unwrap();
        let err = s.gt_centers[36]
            .iter()
            .zip(&s.gt_centers[0])
            .map(|(a, b)| (*a - *b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        // Halfway round, wheel points actually moved.
        let wheel = s.part(0);
        let i = wheel[0];
        assert!((s.gt_centers[18][i] - s.gt_centers[0][i]).norm() > 0.1);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec::new(SceneKind::Pendulum, 80, 5, 4.0, 11);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SceneSpec { seed: 12, ..spec };
        assert_ne!(generate(&other).unwrap().frame0, generate(&SceneSpec::new(SceneKind::Pendulum, 80, 5, 4.0, 11)).unwrap().frame0);
    }

    #[test]
    fn rigid_parts_move_rigidly() {
        for kind in [SceneKind::Wheel, SceneKind::Pendulum, SceneKind::TwoLinkArm, SceneKind::TwoBlobs] {
            let s = generate(&SceneSpec::new(kind, 150, 6, 7.0, 5)).unwrap();
            for label in 0..kind.num_parts() as u32 {
                let idx = s.part(label);
                assert!(idx.len() >= 3);
                let a: Vec<Vec3> = idx.iter().map(|&i| s.gt_centers[0][i]).collect();
                for t in 1..6 {
                    let b: Vec<Vec3> = idx.iter().map(|&i| s.gt_centers[t][i]).collect();
                    assert!(kabsch_residual(&a, &b) < 1e-12, "{kind:?} part {label}");
                    // The stored rotation maps frame-0 offsets to frame-t offsets.
                    let r = s.gt_rotations[t][idx[0]];
                    let (p0, q0) = (a[0], b[0]);
                    for (p, q) in a.iter().zip(&b).skip(1) {
                        assert!((r.rotate(*p - p0) - (*q - q0)).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn labels_and_counts() {
        for kind in SceneKind::ALL {
            let s = generate(&SceneSpec::new(kind, 97, 2, 3.0, 0)).unwrap();
            assert_eq!(s.frame0.len(), 97);
            assert_eq!(s.part_labels.len(), 97);
            let max = *s.part_labels.iter().max().unwrap() as usize;
            assert_eq!(max + 1, kind.num_parts());
            assert_eq!(s.cameras.len(), 8);
            s.frame0.validate().unwrap();
        }
    }

    #[test]
    fn swings_start_at_rest_pose() {
        for kind in [SceneKind::Pendulum, SceneKind::TwoLinkArm] {
            let s = generate(&SceneSpec::new(kind, 120, 3, 6.0, 8)).unwrap();
            // Consecutive frames differ by at most the peak angular speed.
            for t in 1..3 {
                for i in 0..120 {
                    let step = s.gt_rotations[t][i].angle_to(s.gt_rotations[t - 1][i]).to_degrees();
                    assert!(step <= 2.0 * 6.0 + 1e-9, "{kind:?} {step}");
                }
            }
            assert_eq!(swing(6.0, 0.0, 1.0), 0.0);
        }
    }

    #[test]
    fn blobs_move_apart() {
        let s = generate(&SceneSpec::new(SceneKind::TwoBlobs, 40, 3, 5.0, 2)).unwrap();
        for i in 0..40 {
            let d = s.gt_centers[2][i] - s.gt_centers[0][i];
            let expect = if s.part_labels[i] == 0 { 0.1 } else { -0.1 };
            assert!((d.y - expect).abs() < 1e-12 && d.x == 0.0 && d.z == 0.0);
        }
    }

    #[test]
    fn cloth_rotation_is_polar_factor() {
        let s = generate(&SceneSpec::new(SceneKind::ClothWave, 50, 3, 20.0, 4)).unwrap();
        for t in 1..3 {
            for i in 0..50 {
                let q = s.gt_rotations[t][i];
                assert!((q.norm() - 1.0).abs() < 1e-12);
                // Rotation about y only: the sheet tilts in the xz plane.
                assert!(q.x.abs() < 1e-12 && q.z.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stretch_scales_x_only() {
        let s = generate(&SceneSpec::new(SceneKind::Stretch, 30, 3, 10.0, 4)).unwrap();
        for i in 0..30 {
            let (a, b) = (s.gt_centers[0][i], s.gt_centers[2][i]);
            assert!((b.x - 1.21 * a.x).abs() < 1e-12 && b.y == a.y && b.z == a.z);
        }
    }

    #[test]
    fn cameras_see_the_scene() {
        let s = generate(&SceneSpec::new(SceneKind::TwoLinkArm, 100, 2, 3.0, 0)).unwrap();
        for cam in &s.cameras {
            for p in &s.gt_centers[0] {
                assert!(cam.in_image(&cam.project(*p)));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SceneSpec::new(SceneKind::Wheel, 9, 5, 1.0, 0)).is_err());
        assert!(generate(&SceneSpec::new(SceneKind::Wheel, 10, 1, 1.0, 0)).is_err());
        assert!(generate(&SceneSpec::new(SceneKind::Wheel, 10, 2, f64::NAN, 0)).is_err());
        let bad: std::result::Result<SceneSpec, _> =
            serde_json::from_str(r#"{"kind":"spiral","n_gaussians":10,"n_frames":2,"motion":1}"#);
        assert!(bad.unwrap_err().to_string().contains("spiral"));
    }

    #[test]
    fn perturb_examples() {
        let s = generate(&SceneSpec::new(SceneKind::TwoBlobs, 400, 6, 2.0, 9)).unwrap();
        assert_eq!(perturb(&s, 0.0, 1).unwrap(), s);
        let sigma = 0.01;
        let p = perturb(&s, sigma, 1).unwrap();
        assert_eq!(p, perturb(&s, sigma, 1).unwrap());
        assert_eq!(p.gt_centers, s.gt_centers);
        // Monte-Carlo oracle for the mean norm of an isotropic normal vector.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mc: f64 = (0..200_000)
            .map(|_| {
                let mut n = || sigma * rng.sample::<f64, _>(StandardNormal);
                Vec3::new(n(), n(), n()).norm()
            })
            .sum::<f64>()
            / 200_000.0;
        let mut total = 0.0;
        let mut count = 0.0;
        for t in 1..6 {
            for (a, b) in p.observations[t].points.iter().zip(&p.gt_centers[t]) {
                total += (*a - *b).norm();
                count += 1.0;
            }
        }
        let mean = total / count;
        assert!((mean / mc - 1.0).abs() < 0.05, "{mean} vs {mc}");
    }
}
