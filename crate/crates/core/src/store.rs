//! On-disk layout of scene and fit directories. Field orders are listed in
//! `docs/FORMATS.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{gt_tracks, pick_keypoints, FitMetrics};
use crate::gaussian::GaussianSet;
use crate::io::{gaussians_ply, points_ply, read_csv, read_gaussians_ply, read_json, read_points_ply, trajectory_rows, write_bytes, write_csv, write_json};
use crate::loss::{DataObservation, LossBreakdown};
use crate::math::{Quat, Vec3};
use crate::optim::{FitReport, TrainConfig};
use crate::scenegen::{part_color, SceneSequence, SceneSpec};
use crate::track::{PinholeCamera, Track2D};

pub const SCENE_JSON: &str = "scene.json";
pub const GAUSSIANS0_PLY: &str = "gaussians0.ply";
pub const FRAMES_DIR: &str = "frames";
pub const GT_TRAJECTORY_CSV: &str = "gt_trajectory.csv";
pub const LABELS_CSV: &str = "labels.csv";
pub const GT_TRACKS_CSV: &str = "gt_tracks.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const LOSSES_CSV: &str = "losses.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CHECKPOINTS_DIR: &str = "checkpoints";

/// Keypoints written with every generated scene.
pub const DEFAULT_TRACKS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub spec: SceneSpec,
    pub cameras: Vec<PinholeCamera>,
    /// Camera used for the ground-truth tracks.
    pub track_camera: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtRow {
    pub frame: usize,
    pub gaussian: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub gaussian: usize,
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub track: usize,
    pub frame: usize,
    pub u: f64,
    pub v: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub frame: usize,
    /// Iterations before the update; the row with `iteration ==
    /// iters_per_frame` holds the loss of the emitted frame.
    pub iteration: usize,
    pub total: f64,
    pub rigid: f64,
    pub iso: f64,
    pub rot: f64,
    pub scale: f64,
    pub data: f64,
}

fn loss_row(frame: usize, iteration: usize, b: &LossBreakdown) -> LossRow {
    LossRow {
        frame,
        iteration,
        total: b.total,
        rigid: b.rigid,
        iso: b.iso,
        rot: b.rot,
        scale: b.scale,
        data: b.data,
    }
}

pub fn frame_file(dir: &Path, prefix: &str, t: usize, ext: &str) -> PathBuf {
    dir.join(format!("{prefix}_{t:04}.{ext}"))
}

fn check_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found")))
    }
}

/// Writes a generated scene; tracks come from `track_camera`.
pub fn write_scene(dir: &Path, seq: &SceneSequence, track_camera: usize) -> Result<()> {
    let camera = seq
        .cameras
        .get(track_camera)
        .ok_or_else(|| Error::Config(format!("track.camera: no camera {track_camera}")))?;
    write_json(
        &dir.join(SCENE_JSON),
        &SceneFile {
            spec: seq.spec.clone(),
            cameras: seq.cameras.clone(),
            track_camera,
        },
    )?;
    write_bytes(&dir.join(GAUSSIANS0_PLY), gaussians_ply(&seq.frame0, None).as_bytes())?;
    let colors: Vec<Vec3> = seq.part_labels.iter().map(|&l| part_color(l)).collect();
    for (t, obs) in seq.observations.iter().enumerate() {
        let path = frame_file(&dir.join(FRAMES_DIR), "frame", t, "ply");
        write_bytes(&path, points_ply(&obs.points, &colors).as_bytes())?;
    }
    let mut gt = Vec::new();
    for (t, (cs, rs)) in seq.gt_centers.iter().zip(&seq.gt_rotations).enumerate() {
        for (i, (c, r)) in cs.iter().zip(rs).enumerate() {
            gt.push(GtRow {
                frame: t,
                gaussian: i,
                x: c.x,
                y: c.y,
                z: c.z,
                qw: r.w,
                qx: r.x,
                qy: r.y,
                qz: r.z,
            });
        }
    }
    write_csv(&dir.join(GT_TRAJECTORY_CSV), &gt)?;
    let labels: Vec<LabelRow> = seq
        .part_labels
        .iter()
        .enumerate()
        .map(|(gaussian, &label)| LabelRow { gaussian, label })
        .collect();
    write_csv(&dir.join(LABELS_CSV), &labels)?;
    let keys = pick_keypoints(&seq.gt_centers, camera, DEFAULT_TRACKS, seq.spec.seed);
    write_csv(&dir.join(GT_TRACKS_CSV), &track_rows(&gt_tracks(&seq.gt_centers, camera, &keys)))
}

pub fn track_rows(tracks: &[Track2D]) -> Vec<TrackRow> {
    let mut rows = Vec::new();
    for (k, tr) in tracks.iter().enumerate() {
        for t in 0..tr.len() {
            rows.push(TrackRow {
                track: k,
                frame: t,
                u: tr.uv[t][0],
                v: tr.uv[t][1],
                valid: tr.valid[t],
            });
        }
    }
    rows
}

pub fn tracks_from_rows(rows: &[TrackRow]) -> Vec<Track2D> {
    let mut out: Vec<Track2D> = Vec::new();
    for r in rows {
        if r.track >= out.len() {
            out.resize(r.track + 1, Track2D::default());
        }
        out[r.track].uv.push([r.u, r.v]);
        out[r.track].valid.push(r.valid);
    }
    out
}

/// A scene directory loaded back into memory. Frame-0 colors are quantized
/// to 8 bits by the PLY format.
pub struct LoadedScene {
    pub file: SceneFile,
    pub sequence: SceneSequence,
    pub gt_tracks: Vec<Track2D>,
}

impl LoadedScene {
    pub fn track_camera(&self) -> &PinholeCamera {
        &self.file.cameras[self.file.track_camera]
    }
}

pub fn read_scene(dir: &Path) -> Result<LoadedScene> {
    check_dir(dir)?;
    let file: SceneFile = read_json(&dir.join(SCENE_JSON))?;
    if file.track_camera >= file.cameras.len() {
        return Err(Error::Config(format!("track_camera: no camera {}", file.track_camera)));
    }
    let frame0 = read_gaussians_ply(&dir.join(GAUSSIANS0_PLY), 0)?;
    let n = frame0.len();
    let mut observations = Vec::with_capacity(file.spec.n_frames);
    for t in 0..file.spec.n_frames {
        let points = read_points_ply(&frame_file(&dir.join(FRAMES_DIR), "frame", t, "ply"))?;
        observations.push(if points.len() == n {
            DataObservation::with_identity(points)
        } else {
            DataObservation::unmatched(points)
        });
    }
    let gt_path = dir.join(GT_TRAJECTORY_CSV);
    let rows: Vec<GtRow> = read_csv(&gt_path)?;
    let mut gt_centers = vec![Vec::with_capacity(n); file.spec.n_frames];
    let mut gt_rotations = vec![Vec::with_capacity(n); file.spec.n_frames];
    for r in &rows {
        let ok = r.frame < file.spec.n_frames && r.gaussian == gt_centers[r.frame].len();
        if !ok {
            return Err(Error::Parse {
                path: gt_path,
                msg: format!("row for frame {} gaussian {} out of order", r.frame, r.gaussian),
            });
        }
        gt_centers[r.frame].push(Vec3::new(r.x, r.y, r.z));
        gt_rotations[r.frame].push(Quat::new(r.qw, r.qx, r.qy, r.qz));
    }
    if gt_centers.iter().any(|f| f.len() != n) {
        return Err(Error::Parse {
            path: gt_path,
            msg: format!("expected {n} rows per frame"),
        });
    }
    let labels = read_labels(&dir.join(LABELS_CSV), n)?;
    let gt_tracks = tracks_from_rows(&read_csv(&dir.join(GT_TRACKS_CSV))?);
    let sequence = SceneSequence {
        spec: file.spec.clone(),
        frame0,
        observations,
        gt_centers,
        gt_rotations,
        part_labels: labels,
        cameras: file.cameras.clone(),
    };
    Ok(LoadedScene {
        file,
        sequence,
        gt_tracks,
    })
}

pub fn read_labels(path: &Path, n: usize) -> Result<Vec<u32>> {
    let rows: Vec<LabelRow> = read_csv(path)?;
    if rows.len() != n || rows.iter().enumerate().any(|(i, r)| r.gaussian != i) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: format!("expected labels for gaussians 0..{n} in order"),
        });
    }
    Ok(rows.into_iter().map(|r| r.label).collect())
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let rows: Vec<LabelRow> = labels
        .iter()
        .enumerate()
        .map(|(gaussian, &label)| LabelRow { gaussian, label })
        .collect();
    write_csv(path, &rows)
}

/// `summary.json` of a fit directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub n_gaussians: usize,
    pub n_frames: usize,
    pub final_loss: Vec<LossBreakdown>,
    /// Present when the scene carries ground truth.
    pub metrics: Option<FitMetrics>,
}

pub fn write_fit(dir: &Path, report: &FitReport, summary: &FitSummary) -> Result<()> {
    let ck = dir.join(CHECKPOINTS_DIR);
    write_json(&ck.join("hierarchy.json"), &report.hierarchy)?;
    for (k, c) in report.checkpoints.iter().enumerate() {
        write_json(&frame_file(&ck, "frame", k + 1, "json"), c)?;
    }
    write_csv(&dir.join(TRAJECTORY_CSV), &trajectory_rows(&report.trajectory))?;
    let mut losses = Vec::new();
    for f in &report.frames {
        for (it, b) in f.losses.iter().enumerate() {
            losses.push(loss_row(f.frame, it, b));
        }
        losses.push(loss_row(f.frame, f.iterations, &f.final_loss));
    }
    write_csv(&dir.join(LOSSES_CSV), &losses)?;
    write_json(&dir.join(SUMMARY_JSON), summary)
}

/// Trajectory and summary of a fit directory.
pub fn read_fit(dir: &Path) -> Result<(Vec<GaussianSet>, FitSummary)> {
    check_dir(dir)?;
    let traj = crate::io::read_trajectory_csv(&dir.join(TRAJECTORY_CSV))?;
    let summary: FitSummary = read_json(&dir.join(SUMMARY_JSON))?;
    Ok((traj, summary))
}
