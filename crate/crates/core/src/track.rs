//! Pinhole projection, candidate selection and median trajectory error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::{Mat3, Quat, Vec3};

/// World-to-camera pinhole model: `x_cam = R·x + t`, `u = fx·x/z + cx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Quat,
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

/// Minimum camera-space depth of a visible point.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

impl PinholeCamera {
    /// Camera at `eye` looking at `target`; image `v` grows along `-up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: u32, height: u32) -> Result<Self> {
        let f = target - eye;
        if f.norm() == 0.0 {
            return Err(Error::invalid("camera eye equals target"));
        }
        let f = f.scale(1.0 / f.norm());
        let x = f.cross(up);
        if x.norm() < 1e-12 {
            return Err(Error::invalid("camera up is parallel to the view direction"));
        }
        let x = x.scale(1.0 / x.norm());
        let y = f.cross(x);
        let r = Mat3 {
            m: [x.to_array(), y.to_array(), f.to_array()],
        };
        let q = Quat::from_mat(&r).normalized();
        let cam = Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation: q,
            translation: -r.mul_vec(eye),
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera needs positive focal lengths and a non-empty image"));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn to_camera(&self, x: Vec3) -> Vec3 {
        self.rotation.rotate(x) + self.translation
    }

    pub fn project(&self, x: Vec3) -> Projection {
        let c = self.to_camera(x);
        if c.z <= MIN_DEPTH {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                depth: c.z,
                valid: false,
            };
        }
        Projection {
            u: self.fx * c.x / c.z + self.cx,
            v: self.fy * c.y / c.z + self.cy,
            depth: c.z,
            valid: true,
        }
    }

    /// World point at pixel `(u, v)` and camera depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let c = Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.rotation.conj().rotate(c - self.translation)
    }

    pub fn in_image(&self, p: &Projection) -> bool {
        p.valid && p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }
}

/// Pixel positions of one tracked point over time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Track2D {
    pub uv: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl Track2D {
    pub fn len(&self) -> usize {
        self.uv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uv.is_empty()
    }

    pub fn push(&mut self, p: &Projection) {
        self.uv.push([p.u, p.v]);
        self.valid.push(p.valid && p.u.is_finite() && p.v.is_finite());
    }

    /// Projection of Gaussian `index` in every frame of `trajectory`.
    pub fn of_gaussian(trajectory: &[GaussianSet], index: usize, camera: &PinholeCamera) -> Self {
        let mut t = Track2D::default();
        for set in trajectory {
            t.push(&camera.project(set.gaussians[index].center));
        }
        t
    }

    pub fn of_points(points: &[Vec3], camera: &PinholeCamera) -> Self {
        let mut t = Track2D::default();
        for p in points {
            t.push(&camera.project(*p));
        }
        t
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over co-valid frames of the pixel error, divided by `image_diag`.
pub fn mte(pred: &Track2D, gt: &Track2D, image_diag: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "track lengths {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    if !(image_diag > 0.0) {
        return Err(Error::invalid("image diagonal must be positive"));
    }
    let mut errs: Vec<f64> = (0..pred.len())
        .filter(|&t| pred.valid[t] && gt.valid[t])
        .map(|t| (pred.uv[t][0] - gt.uv[t][0]).hypot(pred.uv[t][1] - gt.uv[t][1]))
        .collect();
    if errs.is_empty() {
        return Err(Error::invalid("tracks share no valid frame"));
    }
    Ok(median(&mut errs) / image_diag)
}

/// Default candidate radius in pixels.
pub const CANDIDATE_RADIUS: f64 = 10.0;

/// Among Gaussians whose frame-0 projection lies within `radius` pixels of
/// the first ground-truth pixel, the one with the lowest full-sequence MTE.
/// Ties go to the lower index.
pub fn select_candidate(
    trajectory: &[GaussianSet],
    camera: &PinholeCamera,
    gt: &Track2D,
    radius: f64,
) -> Result<(usize, f64)> {
    let first = trajectory.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
    if gt.is_empty() || !gt.valid[0] {
        return Err(Error::invalid("ground-truth track has no valid first frame"));
    }
    let [u0, v0] = gt.uv[0];
    let diag = camera.diagonal();
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in first.gaussians.iter().enumerate() {
        let p = camera.project(g.center);
        if !p.valid || (p.u - u0).hypot(p.v - v0) > radius {
            continue;
        }
        let pred = Track2D::of_gaussian(trajectory, i, camera);
        let Ok(e) = mte(&pred, gt, diag) else { continue };
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((i, e));
        }
    }
    best.ok_or(Error::NoCandidate { u: u0, v: v0, radius })
}
