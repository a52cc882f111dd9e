//! Command line front end: run configuration, subcommands and exit codes.
//!
//! Precedence for every setting is flag, then `GAUSSCADE_*` environment
//! variable, then the `--config` JSON document, then built-in defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_tracks, fit_metrics, mean_mte, FitMetrics, TrackResult};
use crate::gaussian::GaussianSet;
use crate::io::{gaussians_ply, read_json, read_text, render_scatter, write_bytes, write_csv, write_json};
use crate::optim::{fit_observations, TrainConfig};
use crate::scenegen::{generate, part_color, SceneKind, SceneSpec};
use crate::seg::{ari, build_features, segment, SegParams};
use crate::store::{frame_file, read_fit, read_scene, write_fit, write_labels, write_scene, FitSummary, LoadedScene, LABELS_CSV};
use crate::track::CANDIDATE_RADIUS;

pub const RUN_LOG: &str = "run.log";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const SEGMENT_JSON: &str = "segment.json";
pub const MTE_CSV: &str = "mte.csv";
pub const TRACK_JSON: &str = "track.json";
pub const EVAL_JSON: &str = "eval.json";
pub const REPRO_CSV: &str = "repro.csv";

#[derive(Parser, Debug)]
#[command(name = "gausscade", version, about = "Cascaded deformation fitting for dynamic Gaussian scenes")]
pub struct Cli {
    #[command(flatten)]
    pub opts: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalOpts {
    /// Run configuration (JSON).
    #[arg(long, global = true, env = "GAUSSCADE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "GAUSSCADE_OUT")]
    pub out: Option<PathBuf>,
    /// Seed for scene generation, clustering and segmentation.
    #[arg(long, global = true, env = "GAUSSCADE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "GAUSSCADE_THREADS")]
    pub threads: Option<usize>,
    /// Comma list of layer sizes, coarsest first, or a single count N that
    /// keeps the finest N configured layers.
    #[arg(long, global = true, env = "GAUSSCADE_LAYERS")]
    pub layers: Option<String>,
    /// Iterations per frame; a comma list makes `fit` run a sweep.
    #[arg(long, global = true, env = "GAUSSCADE_ITERS")]
    pub iters: Option<String>,
    #[arg(long = "max-scale", global = true, env = "GAUSSCADE_MAX_SCALE")]
    pub max_scale: Option<f64>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate a synthetic scene directory.
    Generate,
    /// Fit the cascade to every frame of a scene.
    Fit {
        #[arg(long, env = "GAUSSCADE_SCENE")]
        scene: Option<PathBuf>,
    },
    /// Cluster fitted trajectories into parts.
    Segment {
        #[arg(long, env = "GAUSSCADE_SCENE")]
        scene: Option<PathBuf>,
        #[arg(long, env = "GAUSSCADE_FIT")]
        fit: Option<PathBuf>,
        /// Number of parts.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Track ground-truth keypoints with fitted Gaussians.
    Track {
        #[arg(long, env = "GAUSSCADE_SCENE")]
        scene: Option<PathBuf>,
        #[arg(long, env = "GAUSSCADE_FIT")]
        fit: Option<PathBuf>,
    },
    /// Aggregate fit, segmentation and tracking metrics into one JSON.
    Eval {
        #[arg(long, env = "GAUSSCADE_SCENE")]
        scene: Option<PathBuf>,
        #[arg(long, env = "GAUSSCADE_FIT")]
        fit: Option<PathBuf>,
    },
    /// Generate, fit with the configured and the single finest layer,
    /// segment, track and evaluate every scene kind in the config.
    Repro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackOptions {
    pub camera: usize,
    pub radius: f64,
    /// Write one overlay image per frame.
    pub overlays: bool,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            camera: 0,
            radius: CANDIDATE_RADIUS,
            overlays: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproOptions {
    pub kinds: Vec<SceneKind>,
    pub n_gaussians: usize,
    pub n_frames: usize,
    pub motion: f64,
    pub noise_sigma: f64,
}

impl Default for ReproOptions {
    fn default() -> Self {
        Self {
            kinds: vec![SceneKind::Wheel, SceneKind::Pendulum, SceneKind::TwoLinkArm, SceneKind::TwoBlobs],
            n_gaussians: 800,
            n_frames: 5,
            motion: 15.0,
            noise_sigma: 0.0,
        }
    }
}

/// Complete JSON run document. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scene to build with `generate`.
    pub scene: Option<SceneSpec>,
    pub scene_dir: Option<PathBuf>,
    pub fit_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Overrides the scene, clustering and segmentation seeds.
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub seg: SegParams,
    /// Defaults to the scene kind's part count.
    pub k_parts: Option<usize>,
    pub track: TrackOptions,
    pub repro: ReproOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.scene {
            s.validate().map_err(|e| prefix("scene", e))?;
        }
        self.train.validate().map_err(|e| prefix("train", e))?;
        self.seg.validate().map_err(|e| prefix("seg", e))?;
        if self.k_parts == Some(0) {
            return Err(Error::Config("k_parts: must be at least 1".into()));
        }
        if !(self.track.radius > 0.0) {
            return Err(Error::Config("track.radius: must be positive".into()));
        }
        let r = &self.repro;
        SceneSpec {
            kind: SceneKind::Wheel,
            n_gaussians: r.n_gaussians,
            n_frames: r.n_frames,
            motion: r.motion,
            noise_sigma: r.noise_sigma,
            seed: 0,
        }
        .validate()
        .map_err(|e| prefix("repro", e))
    }
}

fn prefix(field: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{field}.{m}")),
        other => Error::Config(format!("{field}: {other}")),
    }
}

/// Applies the layer rule: a list is literal; a single count `n` no larger
/// than the configured layer count keeps the finest `n` layers; any other
/// single number is a one-layer size.
pub fn parse_layers(arg: &str, configured: &[usize]) -> Result<Vec<usize>> {
    let bad = |m: String| Error::Config(format!("layers: {m}"));
    let list = arg
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad(format!("`{s}` is not a non-negative integer"))))
        .collect::<Result<Vec<_>>>()?;
    if list.iter().any(|&v| v == 0) {
        return Err(bad("sizes and counts must be positive".into()));
    }
    if list.len() == 1 && !arg.contains(',') && list[0] <= configured.len() {
        return Ok(configured[configured.len() - list[0]..].to_vec());
    }
    Ok(list)
}

pub fn parse_iters(arg: &str) -> Result<Vec<usize>> {
    let list = arg
        .split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Config(format!("iters: `{s}` is not a positive integer"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(list)
}

/// Configuration after merging flags, environment and file.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub out: PathBuf,
    /// Iteration counts for `fit`; more than one runs a sweep.
    pub iters: Vec<usize>,
    pub threads: Option<usize>,
}

pub fn resolve(opts: &GlobalOpts) -> Result<Resolved> {
    let mut cfg: RunConfig = match &opts.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seed = Some(s);
    }
    if let Some(s) = cfg.seed {
        cfg.train.seed = s;
        if let Some(spec) = cfg.scene.as_mut() {
            spec.seed = s;
        }
    }
    if let Some(l) = &opts.layers {
        cfg.train.layer_sizes = parse_layers(l, &cfg.train.layer_sizes)?;
    }
    let iters = match &opts.iters {
        Some(s) => parse_iters(s)?,
        None => vec![cfg.train.iters_per_frame],
    };
    cfg.train.iters_per_frame = iters[0];
    if let Some(m) = opts.max_scale {
        cfg.train.max_scale = m;
    }
    if opts.threads == Some(0) {
        return Err(Error::Config("threads: must be at least 1".into()));
    }
    cfg.validate()?;
    let out = opts.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok(Resolved {
        config: cfg,
        out,
        iters,
        threads: opts.threads,
    })
}

fn need(path: &Option<PathBuf>, fallback: &Option<PathBuf>, field: &str) -> Result<PathBuf> {
    path.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("{field}: required (flag or config)")))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let r = resolve(&cli.opts)?;
    let start = Instant::now();
    let result = match r.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?
            .install(|| dispatch(&cli.command, &r)),
        None => dispatch(&cli.command, &r),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    // Timing lives only here so every other output stays reproducible.
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let line = format!(
        "{stamp} {:?} threads={:?} seconds={:.3} {status}\n",
        cli.command,
        r.threads,
        start.elapsed().as_secs_f64()
    );
    if r.out.is_dir() {
        append_log(&r.out, &line);
    }
    result
}

fn append_log(dir: &Path, line: &str) {
    use std::io::Write;
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(dir.join(RUN_LOG)) {
        let _ = f.write_all(line.as_bytes());
    }
}

fn dispatch(command: &Command, r: &Resolved) -> Result<()> {
    let cfg = &r.config;
    match command {
        Command::Generate => {
            let spec = cfg
                .scene
                .as_ref()
                .ok_or_else(|| Error::Config("scene: required for generate".into()))?;
            cmd_generate(spec, &cfg.track, &r.out)?;
            println!("scene written to {}", r.out.display());
        }
        Command::Fit { scene } => {
            let dir = need(scene, &cfg.scene_dir, "scene_dir")?;
            let loaded = read_scene(&dir)?;
            if r.iters.len() == 1 {
                let m = cmd_fit(&loaded, &cfg.train, &r.out)?;
                println!("fit written to {} (mean center error {:.6})", r.out.display(), m.mean_center_error);
            } else {
                cmd_fit_sweep(&loaded, &cfg.train, &r.iters, &r.out)?;
                println!("sweep written to {}", r.out.join(CONVERGENCE_CSV).display());
            }
        }
        Command::Segment { scene, fit, k } => {
            let fit = need(fit, &cfg.fit_dir, "fit_dir")?;
            let scene = scene.clone().or_else(|| cfg.scene_dir.clone());
            let loaded = scene.as_deref().map(read_scene).transpose()?;
            let s = cmd_segment(&fit, loaded.as_ref(), k.or(cfg.k_parts), &cfg.seg, cfg.train.seed, &r.out)?;
            match s.ari {
                Some(a) => println!("{} parts, ARI {a:.4}", s.k_parts),
                None => println!("{} parts", s.k_parts),
            }
        }
        Command::Track { scene, fit } => {
            let loaded = read_scene(&need(scene, &cfg.scene_dir, "scene_dir")?)?;
            let fit = need(fit, &cfg.fit_dir, "fit_dir")?;
            let s = cmd_track(&loaded, &fit, &cfg.track, &r.out)?;
            println!("{} tracks, mean MTE {:.5}%", s.n_tracks, 100.0 * s.mean_mte);
        }
        Command::Eval { scene, fit } => {
            let loaded = read_scene(&need(scene, &cfg.scene_dir, "scene_dir")?)?;
            let fit = need(fit, &cfg.fit_dir, "fit_dir")?;
            let e = cmd_eval(&loaded, &fit, cfg, &r.out)?;
            println!("{}", to_pretty(&e)?);
        }
        Command::Repro => {
            let rows = cmd_repro(cfg, &r.out)?;
            print!("{}", repro_table(&rows));
        }
    }
    Ok(())
}

fn to_pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

pub fn cmd_generate(spec: &SceneSpec, track: &TrackOptions, out: &Path) -> Result<()> {
    let seq = generate(spec)?;
    write_scene(out, &seq, track.camera)
}

/// Fits `loaded` with `train` and writes the fit directory.
pub fn cmd_fit(loaded: &LoadedScene, train: &TrainConfig, out: &Path) -> Result<FitMetrics> {
    let seq = &loaded.sequence;
    let summary_of = |traj: &[GaussianSet], losses, metrics| FitSummary {
        scene: seq.spec.clone(),
        train: train.clone(),
        n_gaussians: seq.frame0.len(),
        n_frames: traj.len(),
        final_loss: losses,
        metrics,
    };
    match fit_observations(&seq.frame0, seq.fit_inputs(), train) {
        Ok(report) => {
            let metrics = fit_metrics(&report.trajectory, &seq.gt_centers, &seq.gt_rotations, &seq.part_labels)?;
            let losses = report.frames.iter().map(|f| f.final_loss).collect();
            write_fit(out, &report, &summary_of(&report.trajectory, losses, Some(metrics.clone())))?;
            Ok(metrics)
        }
        Err(partial) => {
            let p = *partial;
            let losses = p.report.frames.iter().map(|f| f.final_loss).collect();
            write_fit(out, &p.report, &summary_of(&p.report.trajectory, losses, None))?;
            Err(p.error)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub iters: usize,
    pub mean_center_error: f64,
    pub final_center_error: f64,
    pub final_total_loss: f64,
}

/// One fit per entry of `iters` in `out/iters_NNNN`, plus the convergence
/// table.
pub fn cmd_fit_sweep(loaded: &LoadedScene, train: &TrainConfig, iters: &[usize], out: &Path) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    for &n in iters {
        let cfg = TrainConfig {
            iters_per_frame: n,
            ..train.clone()
        };
        let dir = out.join(format!("iters_{n:04}"));
        let m = cmd_fit(loaded, &cfg, &dir)?;
        let (_, summary) = read_fit(&dir)?;
        let total = summary.final_loss.last().map_or(0.0, |b| b.total);
        rows.push(ConvergenceRow {
            iters: n,
            mean_center_error: m.mean_center_error,
            final_center_error: m.final_center_error,
            final_total_loss: total,
        });
    }
    write_csv(&out.join(CONVERGENCE_CSV), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSummary {
    pub k_parts: usize,
    pub params: SegParams,
    /// Against the scene's part labels when a scene is given.
    pub ari: Option<f64>,
}

pub fn segment_trajectory(
    traj: &[GaussianSet],
    k: usize,
    params: &SegParams,
    seed: u64,
    truth: Option<&[u32]>,
) -> Result<(Vec<u32>, SegmentSummary)> {
    let features = build_features(traj, params)?;
    let labels = segment(&features, k, seed)?;
    let ari = truth.map(|t| ari(&labels, t)).transpose()?;
    Ok((
        labels,
        SegmentSummary {
            k_parts: k,
            params: *params,
            ari,
        },
    ))
}

pub fn cmd_segment(
    fit: &Path,
    scene: Option<&LoadedScene>,
    k: Option<usize>,
    params: &SegParams,
    seed: u64,
    out: &Path,
) -> Result<SegmentSummary> {
    let (traj, summary) = read_fit(fit)?;
    let k = k.unwrap_or(summary.scene.kind.num_parts());
    let truth = scene.map(|s| s.sequence.part_labels.as_slice());
    let (labels, s) = segment_trajectory(&traj, k, params, seed, truth)?;
    write_labels(&out.join(LABELS_CSV), &labels)?;
    write_json(&out.join(SEGMENT_JSON), &s)?;
    let colors: Vec<_> = labels.iter().map(|&l| part_color(l)).collect();
    for (t, set) in traj.iter().enumerate() {
        let path = frame_file(&out.join("frames"), "seg", t, "ply");
        write_bytes(&path, gaussians_ply(set, Some(&colors)).as_bytes())?;
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSummary {
    pub camera: usize,
    pub n_tracks: usize,
    /// Fractions of the image diagonal.
    pub mean_mte: f64,
    pub max_mte: f64,
}

fn track_summary(camera: usize, results: &[TrackResult]) -> TrackSummary {
    TrackSummary {
        camera,
        n_tracks: results.len(),
        mean_mte: mean_mte(results),
        max_mte: results.iter().map(|r| r.mte).fold(0.0, f64::max),
    }
}

pub fn cmd_track(loaded: &LoadedScene, fit: &Path, opts: &TrackOptions, out: &Path) -> Result<TrackSummary> {
    let (traj, _) = read_fit(fit)?;
    let cam_index = loaded.file.track_camera;
    let camera = loaded.track_camera();
    let results = evaluate_tracks(&traj, camera, &loaded.gt_tracks, opts.radius)?;
    write_csv(&out.join(MTE_CSV), &results)?;
    let s = track_summary(cam_index, &results);
    write_json(&out.join(TRACK_JSON), &s)?;
    if opts.overlays {
        let colors: Vec<_> = loaded.sequence.part_labels.iter().map(|&l| part_color(l).scale(0.5)).collect();
        for (t, set) in traj.iter().enumerate() {
            let mut img = render_scatter(camera, &set.centers(), &colors);
            for (res, gt) in results.iter().zip(&loaded.gt_tracks) {
                if gt.valid[t] {
                    img.disc(gt.uv[t][0], gt.uv[t][1], 4, [40, 220, 60]);
                }
                let p = camera.project(set.gaussians[res.gaussian].center);
                if p.valid {
                    img.disc(p.u, p.v, 2, [240, 40, 40]);
                }
            }
            img.write_ppm(&frame_file(&out.join("overlays"), "overlay", t, "ppm"))?;
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub scene: SceneSpec,
    pub layer_sizes: Vec<usize>,
    pub iters_per_frame: usize,
    pub fit: FitMetrics,
    pub segmentation: SegmentSummary,
    pub tracking: TrackSummary,
}

/// Recomputes every metric of a fit and writes `eval.json`, which is read
/// back through the schema before returning.
pub fn cmd_eval(loaded: &LoadedScene, fit: &Path, cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let (traj, summary) = read_fit(fit)?;
    let seq = &loaded.sequence;
    let fit_m = fit_metrics(&traj, &seq.gt_centers, &seq.gt_rotations, &seq.part_labels)?;
    let k = cfg.k_parts.unwrap_or(seq.spec.kind.num_parts());
    let (_, seg) = segment_trajectory(&traj, k, &cfg.seg, summary.train.seed, Some(&seq.part_labels))?;
    let results = evaluate_tracks(&traj, loaded.track_camera(), &loaded.gt_tracks, cfg.track.radius)?;
    let report = EvalReport {
        scene: seq.spec.clone(),
        layer_sizes: summary.train.layer_sizes.clone(),
        iters_per_frame: summary.train.iters_per_frame,
        fit: fit_m,
        segmentation: seg,
        tracking: track_summary(loaded.file.track_camera, &results),
    };
    let path = out.join(EVAL_JSON);
    write_json(&path, &report)?;
    let back: EvalReport = crate::io::parse_json(&read_text(&path)?)?;
    if back != report {
        return Err(Error::Parse {
            path,
            msg: "eval report does not round-trip".into(),
        });
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproRow {
    pub scene: String,
    /// Layer sizes joined by `-`.
    pub layers: String,
    pub mean_center_error: f64,
    pub final_center_error: f64,
    pub orientation_deviation_deg: f64,
    pub max_axis: f64,
    pub ari: f64,
    pub mean_mte: f64,
}

/// Full pipeline per scene kind. Writes `scenes/`, `fits/`, `segment/`,
/// `track/`, `eval/` and the comparison table `repro.csv` under `out`.
pub fn cmd_repro(cfg: &RunConfig, out: &Path) -> Result<Vec<ReproRow>> {
    let seed = cfg.seed.unwrap_or(cfg.train.seed);
    let full = cfg.train.layer_sizes.clone();
    let finest = vec![*full.last().expect("validated layer sizes")];
    let mut rows = Vec::new();
    for &kind in &cfg.repro.kinds {
        let name = kind.name();
        let spec = SceneSpec {
            kind,
            n_gaussians: cfg.repro.n_gaussians,
            n_frames: cfg.repro.n_frames,
            motion: cfg.repro.motion,
            noise_sigma: cfg.repro.noise_sigma,
            seed,
        };
        let scene_dir = out.join("scenes").join(name);
        cmd_generate(&spec, &cfg.track, &scene_dir)?;
        let loaded = read_scene(&scene_dir)?;
        let mut variants = vec![full.clone()];
        if finest != full {
            variants.push(finest.clone());
        }
        for layers in variants {
            let tag = format!("{name}_k{}", layers.len());
            let train = TrainConfig {
                layer_sizes: layers.clone(),
                ..cfg.train.clone()
            };
            let fit_dir = out.join("fits").join(&tag);
            cmd_fit(&loaded, &train, &fit_dir)?;
            if layers == full {
                let k = cfg.k_parts.or(Some(kind.num_parts()));
                cmd_segment(&fit_dir, Some(&loaded), k, &cfg.seg, train.seed, &out.join("segment").join(&tag))?;
                cmd_track(&loaded, &fit_dir, &cfg.track, &out.join("track").join(&tag))?;
            }
            let e = cmd_eval(&loaded, &fit_dir, cfg, &out.join("eval").join(&tag))?;
            rows.push(ReproRow {
                scene: name.to_string(),
                layers: layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-"),
                mean_center_error: e.fit.mean_center_error,
                final_center_error: e.fit.final_center_error,
                orientation_deviation_deg: e.fit.orientation_deviation_deg,
                max_axis: e.fit.max_axis,
                ari: e.segmentation.ari.unwrap_or(f64::NAN),
                mean_mte: e.tracking.mean_mte,
            });
        }
    }
    write_csv(&out.join(REPRO_CSV), &rows)?;
    Ok(rows)
}

/// Markdown rendering of the repro table.
pub fn repro_table(rows: &[ReproRow]) -> String {
    let mut s = String::from("| scene | layers | mean err | final err | orient dev (deg) | max axis | ARI | MTE (%) |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.6} | {:.6} | {:.3} | {:.4} | {:.4} | {:.4} |",
            r.scene,
            r.layers,
            r.mean_center_error,
            r.final_center_error,
            r.orientation_deviation_deg,
            r.max_axis,
            r.ari,
            100.0 * r.mean_mte
        );
    }
    s
}
