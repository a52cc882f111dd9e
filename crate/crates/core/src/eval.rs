//! Metrics of a fitted trajectory against generator ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::{Quat, Vec3};
use crate::optim::mean_center_error;
use crate::track::{mte, select_candidate, PinholeCamera, Track2D};

/// Geometric accuracy of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetrics {
    /// Mean center error of frames `1..`.
    pub center_error_per_frame: Vec<f64>,
    pub mean_center_error: f64,
    pub final_center_error: f64,
    /// Largest Gaussian axis over all fitted frames.
    pub max_axis: f64,
    /// Median orientation deviation in degrees over all Gaussians and
    /// fitted frames.
    pub orientation_deviation_deg: f64,
    /// The same median restricted to each part label.
    pub part_orientation_deviation_deg: Vec<f64>,
}

fn check_frames(trajectory: &[GaussianSet], frames: usize) -> Result<()> {
    if trajectory.len() != frames {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has {} frames, ground truth {frames}",
            trajectory.len()
        )));
    }
    if trajectory.len() < 2 {
        return Err(Error::invalid("need at least one fitted frame"));
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Angle in degrees between the fitted orientation change `q_t q_0⁻¹` of
/// Gaussian `i` and its true rotation at frame `t`.
pub fn orientation_change_error_deg(trajectory: &[GaussianSet], gt_rotations: &[Vec<Quat>], t: usize, i: usize) -> f64 {
    let q0 = trajectory[0].gaussians[i].orientation.normalized();
    let qt = trajectory[t].gaussians[i].orientation.normalized();
    qt.mul(q0.conj()).angle_to(gt_rotations[t][i]).to_degrees()
}

/// Median orientation deviation over `indices` and frames `1..`.
pub fn orientation_deviation_deg(trajectory: &[GaussianSet], gt_rotations: &[Vec<Quat>], indices: &[usize]) -> Result<f64> {
    check_frames(trajectory, gt_rotations.len())?;
    let devs = (1..trajectory.len())
        .flat_map(|t| indices.iter().map(move |&i| (t, i)))
        .map(|(t, i)| orientation_change_error_deg(trajectory, gt_rotations, t, i))
        .collect();
    Ok(median(devs))
}

/// Largest scale axis of any Gaussian in frames `1..`.
pub fn max_axis(trajectory: &[GaussianSet]) -> f64 {
    trajectory
        .iter()
        .skip(1)
        .flat_map(|s| s.gaussians.iter())
        .map(|g| g.scale.max_component())
        .fold(0.0, f64::max)
}

pub fn fit_metrics(
    trajectory: &[GaussianSet],
    gt_centers: &[Vec<Vec3>],
    gt_rotations: &[Vec<Quat>],
    labels: &[u32],
) -> Result<FitMetrics> {
    check_frames(trajectory, gt_centers.len())?;
    let n = trajectory[0].len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} gaussians", labels.len())));
    }
    let per_frame: Vec<f64> = (1..trajectory.len())
        .map(|t| mean_center_error(&trajectory[t], &gt_centers[t]))
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let parts = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let part_dev = (0..parts as u32)
        .map(|l| {
            let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == l).collect();
            orientation_deviation_deg(trajectory, gt_rotations, &idx)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitMetrics {
        mean_center_error: per_frame.iter().sum::<f64>() / per_frame.len() as f64,
        final_center_error: *per_frame.last().unwrap(),
        center_error_per_frame: per_frame,
        max_axis: max_axis(trajectory),
        orientation_deviation_deg: orientation_deviation_deg(trajectory, gt_rotations, &all)?,
        part_orientation_deviation_deg: part_dev,
    })
}

/// Ground-truth points used as tracking keypoints: those that move and stay
/// inside the image in every frame. At most `count` are drawn, seeded, and
/// returned in ascending order.
pub fn pick_keypoints(gt_centers: &[Vec<Vec3>], camera: &PinholeCamera, count: usize, seed: u64) -> Vec<usize> {
    let Some(first) = gt_centers.first() else { return Vec::new() };
    let pool: Vec<usize> = (0..first.len())
        .filter(|&i| {
            let moves = gt_centers.iter().any(|f| (f[i] - first[i]).norm() > 1e-6);
            moves && gt_centers.iter().all(|f| camera.in_image(&camera.project(f[i])))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = count.min(pool.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    picked.sort_unstable();
    picked
}

/// Projected ground-truth tracks of `keypoints`.
pub fn gt_tracks(gt_centers: &[Vec<Vec3>], camera: &PinholeCamera, keypoints: &[usize]) -> Vec<Track2D> {
    keypoints
        .iter()
        .map(|&i| Track2D::of_points(&gt_centers.iter().map(|f| f[i]).collect::<Vec<_>>(), camera))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub track: usize,
    pub gaussian: usize,
    /// Fraction of the image diagonal.
    pub mte: f64,
}

/// Candidate selection and MTE for every ground-truth track.
pub fn evaluate_tracks(
    trajectory: &[GaussianSet],
    camera: &PinholeCamera,
    gt: &[Track2D],
    radius: f64,
) -> Result<Vec<TrackResult>> {
    gt.par_iter()
        .enumerate()
        .map(|(k, track)| {
            if track.len() != trajectory.len() {
                return Err(Error::ShapeMismatch(format!(
                    "track {k} has {} frames, trajectory {}",
                    track.len(),
                    trajectory.len()
                )));
            }
            let (gaussian, mte) = select_candidate(trajectory, camera, track, radius)?;
            Ok(TrackResult { track: k, gaussian, mte })
        })
        .collect()
}

pub fn mean_mte(results: &[TrackResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(|r| r.mte).sum::<f64>() / results.len() as f64
}

/// MTE of the tracks produced by a fixed Gaussian identity, skipping
/// candidate selection.
pub fn identity_mte(trajectory: &[GaussianSet], camera: &PinholeCamera, gt: &Track2D, gaussian: usize) -> Result<f64> {
    mte(&Track2D::of_gaussian(trajectory, gaussian, camera), gt, camera.diagonal())
}
