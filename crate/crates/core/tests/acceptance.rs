//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances are pinned below.

use std::collections::HashMap;
use std::time::Instant;

use gausscade::cli::main_with;
use gausscade::cluster::build_hierarchy;
use gausscade::deform::{cascade_jacobian, cascade_outputs, cascade_zero, layer_apply, layer_jacobian, CascadeDeform, ClusterDeformParams, DeformOptions, LayerForm};
use gausscade::eval::{evaluate_tracks, gt_tracks, max_axis, mean_mte, orientation_deviation_deg, pick_keypoints};
use gausscade::gaussian::{covariance_from, decompose_covariance, GaussianSet, GaussianState};
use gausscade::loss::{loss_value, total_loss, DataObservation, LossContext, LossWeights, NeighborGraph};
use gausscade::math::{jacobi_eigen, Mat3, Quat, Vec3};
use gausscade::optim::{class_layout, fit_observations, flatten, mean_center_error, unflatten, FitReport, ParamClass, TrainConfig};
use gausscade::scenegen::{generate, SceneKind, SceneSequence, SceneSpec};
use gausscade::seg::{ari, build_features, rigid_subpart_rotation_check, segment, MovedPoints, SegParams, SUBPART_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criterion 1.
const GRAD_INSTANCES: usize = 20;
const GRAD_GAUSSIANS: usize = 60;
const GRAD_REL_TOL: f64 = 1e-4;
/// Finite-difference step relative to the scene scale.
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET_S: f64 = 60.0;
// Criterion 2.
const JAC_REL_TOL: f64 = 1e-5;
const COV_CASES: usize = 1000;
const ROUND_TRIP_TOL: f64 = 1e-7;
const JAC_BUDGET_S: f64 = 30.0;
// Articulated scenes shared by criteria 3, 4, 6 and 7.
const SCENE_N: usize = 800;
const SCENE_FRAMES: usize = 5;
const SCENE_MOTION: f64 = 15.0;
const SCENE_SEED: u64 = 1;
// Criterion 3.
const ORIENT_MAX_DEG: f64 = 5.0;
const ORIENT_ABLATION_MIN_DEG: f64 = 20.0;
// Criterion 4.
const K_RATIO_MIN: f64 = 1.5;
const K_BUDGET_S: f64 = 600.0;
// Criterion 5.
const SWEEP: [usize; 5] = [10, 40, 100, 400, 2000];
const PLATEAU_NOISE: f64 = 0.002;
const PLATEAU_REL: f64 = 0.20;
const MONOTONE_SLACK: f64 = 0.10;
// Criterion 6.
const MIN_TRACKS: usize = 10;
const TRACKS: usize = 16;
const MTE_MAX: f64 = 0.01;
const MTE_MAX_SYMMETRIC: f64 = 0.20;
// Criterion 7.
const ARI_MIN: f64 = 0.95;
const LEMMA_CASES: usize = 100;
// Criterion 8.
const STRETCH_N: usize = 400;
const STRETCH_FRAMES: usize = 30;
const STRETCH_RATE: f64 = 10.0;
const MAX_SCALE: f64 = 0.02;
const MAX_SCALE_OFF: f64 = 2.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn rand_unit_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.norm() > 0.2 {
            return q.normalized();
        }
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> GaussianSet {
    let gs = (0..n)
        .map(|_| {
            let s = Vec3::new(
                rng.random_range(0.005..0.03),
                rng.random_range(0.005..0.03),
                rng.random_range(0.005..0.03),
            );
            GaussianState::new(rand_vec(rng, 0.5), rand_unit_quat(rng), s)
        })
        .collect();
    GaussianSet::new(gs, 0)
}

fn random_cascade(rng: &mut ChaCha8Rng, like: &CascadeDeform, with_deltas: bool) -> CascadeDeform {
    let mut c = like.clone();
    for layer in c.layers.iter_mut() {
        for p in layer.iter_mut() {
            *p = ClusterDeformParams {
                rotation: Quat::new(1.0 + rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
                translation: rand_vec(rng, 0.05),
                scale_dir: rand_vec(rng, 0.8),
                scale_bias: rng.random_range(-0.3..0.3),
            };
        }
    }
    if with_deltas {
        for d in c.deltas.iter_mut() {
            d.d_center = rand_vec(rng, 0.01);
            d.d_rotation = Quat::new(1.0 + rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            d.d_log_scale = rand_vec(rng, 0.2);
        }
    }
    c
}

/// Gradient of the full objective against central differences for every
/// parameter class.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let classes = [
        ParamClass::Rotation,
        ParamClass::Translation,
        ParamClass::ScaleDir,
        ParamClass::ScaleBias,
        ParamClass::DeltaCenter,
        ParamClass::DeltaRotation,
        ParamClass::DeltaScale,
    ];
    let mut worst = [0.0f64; 7];
    let mut straddled = 0usize;
    let mut entries = 0usize;
    for inst in 0..GRAD_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst as u64);
        let prev = random_set(&mut rng, GRAD_GAUSSIANS);
        let frame0: Vec<Vec3> = prev.centers().iter().map(|c| *c + rand_vec(&mut rng, 0.02)).collect();
        let h = build_hierarchy(&prev, &[3, 8, 20], inst as u64).unwrap();
        let cascade = random_cascade(&mut rng, &cascade_zero(&h, prev.len()), true);
        let graph = NeighborGraph::build(&frame0, 8, 2000.0, prev.scene_scale()).unwrap();
        // Alternate matched and unmatched data terms.
        let obs = if inst % 2 == 0 {
            DataObservation::with_identity(prev.centers().iter().map(|c| *c + rand_vec(&mut rng, 0.05)).collect())
        } else {
            DataObservation::unmatched((0..40).map(|_| rand_vec(&mut rng, 0.5)).collect())
        };
        let ctx = LossContext {
            frame0: &frame0,
            prev: &prev,
            graph: &graph,
            obs: &obs,
            weights: LossWeights::default(),
            max_scale: 0.02,
        };
        let opts = DeformOptions::default();
        let (_, grads) = total_loss(&ctx, &cascade, &h, &opts).unwrap();
        let analytic = flatten(&grads);
        let x0 = flatten(&cascade);
        let layout = class_layout(&cascade);
        let step = GRAD_STEP * prev.scene_scale();
        entries += x0.len();
        let mut diff_sq = [0.0f64; 7];
        let mut ref_sq = [0.0f64; 7];
        let central = |k: usize, step: f64| {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[k] += step;
            xm[k] -= step;
            let fp = loss_value(&ctx, &unflatten(&xp, &cascade), &h, &opts).unwrap().total;
            let fm = loss_value(&ctx, &unflatten(&xm, &cascade), &h, &opts).unwrap().total;
            (fp - fm) / (2.0 * step)
        };
        for k in 0..x0.len() {
            let mut fd = central(k, step);
            // A stencil that straddles a non-smooth point makes halving the
            // step change the estimate by far more than O(h²). Such points are
            // eigen-axis label switches in the covariance decomposition (the
            // per-axis scale delta moves to another axis), L1 and hinge kinks,
            // and Chamfer nearest-neighbour switches. Those entries are
            // re-checked with smaller steps.
            let mut h_k = step;
            while (central(k, h_k / 2.0) - fd).abs() > 1e-7 + 1e-4 * fd.abs() && h_k > step * 1e-4 {
                h_k /= 10.0;
                fd = central(k, h_k);
            }
            if h_k < step {
                straddled += 1;
            }
            let c = classes.iter().position(|&c| c == layout[k]).unwrap();
            diff_sq[c] += (analytic[k] - fd).powi(2);
            ref_sq[c] += fd * fd;
        }
        for c in 0..7 {
            worst[c] = worst[c].max(diff_sq[c].sqrt() / ref_sq[c].sqrt().max(1e-12));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let per: Vec<String> = classes.iter().zip(&worst).map(|(c, w)| format!("{} {w:.1e}", c.name())).collect();
    outcome(
        max < GRAD_REL_TOL && secs < GRAD_BUDGET_S,
        format!(
            "max relative error {max:.2e} (tol {GRAD_REL_TOL:.0e}) over {GRAD_INSTANCES} instances; {}; {straddled} of {entries} stencils straddled a jump and used a smaller step; {secs:.1}s",
            per.join(", ")
        ),
    )
}

fn fd_jac(f: &dyn Fn(Vec3) -> Vec3, x: Vec3, h: f64) -> Mat3 {
    let mut j = Mat3::zeros();
    for c in 0..3 {
        let mut e = [0.0; 3];
        e[c] = h;
        let e = Vec3::from_array(e);
        let d = (f(x + e) - f(x - e)).scale(0.5 / h);
        for r in 0..3 {
            j.m[r][c] = d.to_array()[r];
        }
    }
    j
}

fn sandwich(j: &Mat3, s: &Mat3) -> Mat3 {
    j.mul_mat(s).mul_mat(&j.transpose())
}

/// Layer and cascade Jacobians, propagated covariances, decomposition.
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut jac_err: f64 = 0.0;
    for _ in 0..200 {
        let like = CascadeDeform {
            layers: vec![vec![ClusterDeformParams::identity()]],
            deltas: vec![],
        };
        let p = random_cascade(&mut rng, &like, false).layers[0][0];
        let c = rand_vec(&mut rng, 0.5);
        let x = rand_vec(&mut rng, 0.5);
        let j = layer_jacobian(&p, c, x);
        let fd = fd_jac(&|y| layer_apply(&p, c, y), x, 1e-6);
        jac_err = jac_err.max(j.sub(&fd).frobenius() / fd.frobenius());
    }
    let set = random_set(&mut rng, COV_CASES);
    let h = build_hierarchy(&set, &[4, 16, 64], 2).unwrap();
    let cascade = random_cascade(&mut rng, &cascade_zero(&h, set.len()), false);
    let outs = cascade_outputs(&cascade, &h, &set, &DeformOptions::default()).unwrap();
    let mut asym: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut cov_err: f64 = 0.0;
    for (i, (g, o)) in set.gaussians.iter().zip(&outs).enumerate() {
        let j = cascade_jacobian(&cascade, &h, i, g.center, LayerForm::Anchored);
        if i < 200 {
            let through = |y: Vec3| {
                let mut y = y;
                for k in 0..h.num_layers() {
                    let cl = h.assignments[k][i] as usize;
                    y = layer_apply(&cascade.layers[k][cl], h.centroids[k][cl], y);
                }
                y
            };
            let fd = fd_jac(&through, g.center, 1e-6);
            jac_err = jac_err.max(j.sub(&fd).frobenius() / fd.frobenius());
        }
        let s = covariance_from(o.orientation, o.scale);
        asym = asym.max(s.max_asymmetry());
        let (vals, _) = jacobi_eigen(s.m);
        min_eig = min_eig.min(vals.iter().cloned().fold(f64::INFINITY, f64::min));
        let oracle = sandwich(&j, &covariance_from(g.orientation, g.scale));
        cov_err = cov_err.max(s.sub(&oracle).frobenius() / oracle.frobenius());
    }
    let mut rt: f64 = 0.0;
    for _ in 0..COV_CASES {
        let q = rand_unit_quat(&mut rng);
        let sc = Vec3::new(rng.random_range(0.001..1.0), rng.random_range(0.001..1.0), rng.random_range(0.001..1.0));
        let s = covariance_from(q, sc);
        let (q2, s2) = decompose_covariance(&s).unwrap();
        rt = rt.max(covariance_from(q2, s2).sub(&s).frobenius());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = jac_err < JAC_REL_TOL && asym == 0.0 && min_eig > 0.0 && cov_err < 1e-9 && rt < ROUND_TRIP_TOL && secs < JAC_BUDGET_S;
    outcome(
        pass,
        format!(
            "jacobian rel err {jac_err:.1e} (tol {JAC_REL_TOL:.0e}); {COV_CASES} covariances: asymmetry {asym:.1e}, min eigenvalue {min_eig:.1e}, vs JSJ^T {cov_err:.1e}; round trip {rt:.1e} (tol {ROUND_TRIP_TOL:.0e}); {secs:.1}s"
        ),
    )
}

struct Fits {
    scenes: HashMap<SceneKind, SceneSequence>,
    k3: HashMap<SceneKind, FitReport>,
}

fn scene(kind: SceneKind, n: usize, frames: usize, motion: f64, noise: f64) -> SceneSequence {
    let mut spec = SceneSpec::new(kind, n, frames, motion, SCENE_SEED);
    spec.noise_sigma = noise;
    generate(&spec).unwrap()
}

fn fit(seq: &SceneSequence, cfg: &TrainConfig) -> FitReport {
    fit_observations(&seq.frame0, seq.fit_inputs(), cfg).map_err(|p| p.error).unwrap()
}

fn mean_error(seq: &SceneSequence, rep: &FitReport) -> f64 {
    let e: Vec<f64> = (1..seq.n_frames())
        .map(|t| mean_center_error(&rep.trajectory[t], &seq.gt_centers[t]))
        .collect();
    e.iter().sum::<f64>() / e.len() as f64
}

fn finest_only() -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        layer_sizes: vec![*d.layer_sizes.last().unwrap()],
        ..d
    }
}

fn criterion_3(fits: &Fits) -> Outcome {
    let seq = &fits.scenes[&SceneKind::Wheel];
    let wheel = seq.part(0);
    let with = orientation_deviation_deg(&fits.k3[&SceneKind::Wheel].trajectory, &seq.gt_rotations, &wheel).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.deform.propagate_covariance = false;
    let without = orientation_deviation_deg(&fit(seq, &cfg).trajectory, &seq.gt_rotations, &wheel).unwrap();
    outcome(
        with < ORIENT_MAX_DEG && without > ORIENT_ABLATION_MIN_DEG,
        format!("wheel median deviation {with:.3} deg with propagation (< {ORIENT_MAX_DEG}), {without:.2} deg without (> {ORIENT_ABLATION_MIN_DEG})"),
    )
}

fn criterion_4(fits: &Fits, k3_secs: f64) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [SceneKind::Wheel, SceneKind::Pendulum, SceneKind::TwoLinkArm] {
        let seq = &fits.scenes[&kind];
        let e3 = mean_error(seq, &fits.k3[&kind]);
        let e1 = mean_error(seq, &fit(seq, &finest_only()));
        let ratio = e1 / e3;
        pass &= ratio >= K_RATIO_MIN;
        parts.push(format!("{} K3 {e3:.2e} K1 {e1:.2e} ratio {ratio:.1}", kind.name()));
    }
    let secs = k3_secs + start.elapsed().as_secs_f64();
    outcome(pass && secs < K_BUDGET_S, format!("{} (min {K_RATIO_MIN}); {secs:.0}s", parts.join("; ")))
}

fn criterion_5() -> Outcome {
    let seq = scene(SceneKind::Pendulum, SCENE_N, SCENE_FRAMES, SCENE_MOTION, PLATEAU_NOISE);
    let errs: Vec<f64> = SWEEP
        .iter()
        .map(|&n| {
            let cfg = TrainConfig {
                iters_per_frame: n,
                ..TrainConfig::default()
            };
            mean_error(&seq, &fit(&seq, &cfg))
        })
        .collect();
    let at = |n: usize| errs[SWEEP.iter().position(|&s| s == n).unwrap()];
    let plateau = rel(at(100), at(2000));
    let monotone = errs.windows(2).all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK));
    let curve: Vec<String> = SWEEP.iter().zip(&errs).map(|(n, e)| format!("{n}:{e:.2e}")).collect();
    outcome(
        plateau < PLATEAU_REL && monotone,
        format!(
            "pendulum (noise {PLATEAU_NOISE}) errors {}; 100 vs 2000 differ by {:.1}% (< {:.0}%); monotone within {:.0}%: {monotone}",
            curve.join(" "),
            100.0 * plateau,
            100.0 * PLATEAU_REL,
            100.0 * MONOTONE_SLACK
        ),
    )
}

fn criterion_6(fits: &Fits) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, bound) in [
        (SceneKind::Pendulum, MTE_MAX),
        (SceneKind::TwoLinkArm, MTE_MAX),
        (SceneKind::Wheel, MTE_MAX_SYMMETRIC),
    ] {
        let seq = &fits.scenes[&kind];
        let cam = &seq.cameras[0];
        let keys = pick_keypoints(&seq.gt_centers, cam, TRACKS, SCENE_SEED);
        let tracks = gt_tracks(&seq.gt_centers, cam, &keys);
        let res = evaluate_tracks(&fits.k3[&kind].trajectory, cam, &tracks, 10.0).unwrap();
        let m = mean_mte(&res);
        pass &= res.len() >= MIN_TRACKS && m < bound;
        parts.push(format!("{} {} tracks MTE {:.4}% (< {}%)", kind.name(), res.len(), 100.0 * m, 100.0 * bound));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_7(fits: &Fits) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [SceneKind::TwoBlobs, SceneKind::TwoLinkArm] {
        let seq = &fits.scenes[&kind];
        let feats = build_features(&fits.k3[&kind].trajectory, &SegParams::default()).unwrap();
        let labels = segment(&feats, kind.num_parts(), 0).unwrap();
        let a = ari(&labels, &seq.part_labels).unwrap();
        pass &= a >= ARI_MIN;
        parts.push(format!("{} ARI {a:.4}", kind.name()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lemma_ok = 0;
    for _ in 0..LEMMA_CASES {
        let n = rng.random_range(8..40);
        let pts: Vec<Vec3> = (0..n).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let q = rand_unit_quat(&mut rng);
        let t = rand_vec(&mut rng, 2.0);
        let moved: Vec<Vec3> = pts.iter().map(|p| q.rotate(*p) + t).collect();
        let cut = rng.random_range(3..n - 3);
        let a = MovedPoints {
            before: &pts[..cut],
            after: &moved[..cut],
        };
        let b = MovedPoints {
            before: &pts[cut..],
            after: &moved[cut..],
        };
        let accepted = matches!(rigid_subpart_rotation_check(a, b, SUBPART_TOL), Ok((true, _)));
        // Negative control: the second subset moves with another rotation.
        let q2 = q.mul(Quat::from_axis_angle(rand_vec(&mut rng, 1.0), 0.3));
        let other: Vec<Vec3> = pts[cut..].iter().map(|p| q2.rotate(*p) + t).collect();
        let c = MovedPoints {
            before: &pts[cut..],
            after: &other,
        };
        let rejected = matches!(rigid_subpart_rotation_check(a, c, SUBPART_TOL), Ok((false, _)));
        if accepted && rejected {
            lemma_ok += 1;
        }
    }
    pass &= lemma_ok == LEMMA_CASES;
    parts.push(format!("rigid-subpart lemma {lemma_ok}/{LEMMA_CASES} within {SUBPART_TOL:.0e} with non-rigid controls rejected"));
    outcome(pass, format!("{} (min ARI {ARI_MIN})", parts.join("; ")))
}

fn criterion_8() -> Outcome {
    let seq = scene(SceneKind::Stretch, STRETCH_N, STRETCH_FRAMES, STRETCH_RATE, 0.0);
    let run = |m: f64| {
        let cfg = TrainConfig {
            max_scale: m,
            ..TrainConfig::default()
        };
        max_axis(&fit(&seq, &cfg).trajectory)
    };
    let on = run(MAX_SCALE);
    let off = run(MAX_SCALE_OFF);
    let bound = 2.0 * MAX_SCALE;
    outcome(
        on <= bound && off > 10.0 * bound,
        format!("stretch max axis {on:.4} with max_scale {MAX_SCALE} (<= {bound}), {off:.3} with {MAX_SCALE_OFF} (> {})", 10.0 * bound),
    )
}

fn files_under(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("repro.json");
    std::fs::write(&cfg, r#"{"repro": {"n_gaussians": 300, "n_frames": 3, "motion": 15}}"#).unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let code = main_with([
            "gausscade".as_ref(),
            "repro".as_ref(),
            "--config".as_ref(),
            cfg.as_os_str(),
            "--seed".as_ref(),
            "5".as_ref(),
            "--threads".as_ref(),
            threads.as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        if code != 0 {
            return outcome(false, format!("repro exited with {code}"));
        }
        outs.push(out);
    }
    let a = files_under(&outs[0]);
    let b = files_under(&outs[1]);
    let checked: Vec<_> = a
        .iter()
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json" | "ply" | "ppm")))
        .collect();
    let mut differing = Vec::new();
    for p in &checked {
        if std::fs::read(outs[0].join(p)).ok() != std::fs::read(outs[1].join(p)).ok() {
            differing.push(p.display().to_string());
        }
    }
    let same_set = a.iter().filter(|p| !p.ends_with("run.log")).eq(b.iter().filter(|p| !p.ends_with("run.log")));
    outcome(
        differing.is_empty() && same_set && !checked.is_empty(),
        format!("{} output files compared across --threads 1 and 4; {} differ", checked.len(), differing.len()),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} [{name}]: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient correctness", criterion_1());
    report(2, "jacobian and covariance correctness", criterion_2());

    let start = Instant::now();
    let mut fits = Fits {
        scenes: HashMap::new(),
        k3: HashMap::new(),
    };
    for kind in [SceneKind::Wheel, SceneKind::Pendulum, SceneKind::TwoLinkArm, SceneKind::TwoBlobs] {
        let seq = scene(kind, SCENE_N, SCENE_FRAMES, SCENE_MOTION, 0.0);
        fits.k3.insert(kind, fit(&seq, &TrainConfig::default()));
        fits.scenes.insert(kind, seq);
    }
    let k3_secs = start.elapsed().as_secs_f64();

    report(3, "entangled covariance", criterion_3(&fits));
    report(4, "K ablation", criterion_4(&fits, k3_secs));
    report(5, "convergence plateau", criterion_5());
    report(6, "tracking", criterion_6(&fits));
    report(7, "segmentation", criterion_7(&fits));
    report(8, "scale-loss ablation", criterion_8());
    report(9, "determinism", criterion_9());

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
