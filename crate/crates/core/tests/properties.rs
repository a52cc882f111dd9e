use gausscade::cluster::build_hierarchy;
use gausscade::deform::{cascade_outputs, cascade_zero, DeformOptions};
use gausscade::gaussian::{covariance_from, decompose_covariance, GaussianSet, GaussianState};
use gausscade::loss::{isometry_loss, outputs_of, rigidity_loss, rotation_loss, scale_loss, NeighborGraph};
use gausscade::math::{Quat, Vec3};
use gausscade::loss::DataObservation;
use gausscade::optim::{fit_observations, flatten, TrainConfig};
use gausscade::scenegen::{generate, SceneKind, SceneSpec};
use gausscade::seg::{build_features, procrustes_rotation, segment, SegParams};
use gausscade::track::{mte, Track2D};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_quat(rng: &mut ChaCha8Rng) -> Quat {
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

fn point(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_set(seed: u64, n: usize) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n)
        .map(|_| {
            let s = Vec3::new(rng.random_range(0.005..0.03), rng.random_range(0.005..0.03), rng.random_range(0.005..0.03));
            GaussianState::new(point(&mut rng), unit_quat(&mut rng), s)
        })
        .collect();
    GaussianSet::new(gs, 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_round_trip(seed in any::<u64>(), a in 1e-3f64..2.0, b in 1e-3f64..2.0, c in 1e-3f64..2.0) {
        let q = unit_quat(&mut ChaCha8Rng::seed_from_u64(seed));
        let s = covariance_from(q, Vec3::new(a, b, c));
        let (q2, s2) = decompose_covariance(&s).unwrap();
        prop_assert!(covariance_from(q2, s2).sub(&s).frobenius() < 1e-7);
    }

    #[test]
    fn quaternion_products_stay_unit(seed in any::<u64>(), steps in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = Quat::identity();
        for _ in 0..steps {
            q = q.mul(unit_quat(&mut rng));
            prop_assert!((q.norm() - 1.0).abs() < 1e-9 * steps as f64);
        }
    }

    #[test]
    fn hierarchy_is_nested_consistent_and_deterministic(seed in 0u64..1000, n in 40usize..150) {
        let set = random_set(seed, n);
        let sizes = [3, 9, 27];
        let h = build_hierarchy(&set, &sizes, seed).unwrap();
        prop_assert!(h.is_nested());
        for (k, &size) in sizes.iter().enumerate() {
            let mut sum = vec![Vec3::zeros(); size];
            let mut count = vec![0usize; size];
            for (i, g) in set.gaussians.iter().enumerate() {
                let c = h.assignments[k][i] as usize;
                sum[c] = sum[c] + g.center;
                count[c] += 1;
            }
            for c in 0..size {
                prop_assert!(count[c] > 0);
                prop_assert!(sum[c].scale(1.0 / count[c] as f64).distance(h.centroids[k][c]) < 1e-9);
            }
        }
        let again = build_hierarchy(&set, &sizes, seed).unwrap();
        prop_assert_eq!(again.assignments, h.assignments);
    }

    #[test]
    fn zero_cascade_is_exact_identity(seed in 0u64..1000) {
        let set = random_set(seed, 60);
        let h = build_hierarchy(&set, &[2, 6, 18], seed).unwrap();
        let out = cascade_outputs(&cascade_zero(&h, set.len()), &h, &set, &DeformOptions::default()).unwrap();
        for (o, g) in out.iter().zip(&set.gaussians) {
            prop_assert_eq!(o.center, g.center);
            prop_assert_eq!(o.scale, g.scale);
            prop_assert_eq!(o.orientation.to_array(), g.orientation.to_array());
        }
    }

    #[test]
    fn shared_rotation_composes_orientations(seed in 0u64..1000) {
        let set = random_set(seed, 50);
        let h = build_hierarchy(&set, &[1, 1, 1], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut cascade = cascade_zero(&h, set.len());
        let mut total = Quat::identity();
        for layer in cascade.layers.iter_mut() {
            let q = unit_quat(&mut rng);
            layer[0].rotation = q;
            total = q.mul(total);
        }
        let out = cascade_outputs(&cascade, &h, &set, &DeformOptions::default()).unwrap();
        for (o, g) in out.iter().zip(&set.gaussians) {
            prop_assert!(o.orientation.distance(total.mul(g.orientation)) < 1e-7);
        }
    }

    #[test]
    fn regularizers_vanish_and_are_rigid_invariant(seed in 0u64..1000) {
        let set = random_set(seed, 60);
        let graph = NeighborGraph::from_set(&set, 8, 2000.0).unwrap();
        let frame0 = set.centers();
        let prev = outputs_of(&set);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = unit_quat(&mut rng);
        let t = point(&mut rng);
        let rigid: Vec<_> = prev
            .iter()
            .map(|o| {
                let mut m = *o;
                m.center = q.rotate(o.center) + t;
                m.orientation = q.mul(o.orientation);
                m
            })
            .collect();
        prop_assert_eq!(rigidity_loss(&prev, &prev, &graph).value, 0.0);
        prop_assert_eq!(rotation_loss(&prev, &prev, &graph).value, 0.0);
        prop_assert_eq!(isometry_loss(&frame0, &prev, &graph).value, 0.0);
        prop_assert!(rigidity_loss(&prev, &rigid, &graph).value < 1e-12);
        prop_assert!(rotation_loss(&prev, &rigid, &graph).value < 1e-12);
        prop_assert!(isometry_loss(&frame0, &rigid, &graph).value < 1e-12);
        prop_assert!(scale_loss(&rigid, 0.05).value == 0.0);

        // A jittered frame, and the same frame moved rigidly as a whole.
        let jittered: Vec<_> = prev
            .iter()
            .map(|o| {
                let mut m = *o;
                m.center = o.center + point(&mut rng).scale(0.01);
                m.orientation = unit_quat(&mut rng);
                m
            })
            .collect();
        let moved: Vec<_> = jittered
            .iter()
            .map(|o| {
                let mut m = *o;
                m.center = q.rotate(o.center) + t;
                m.orientation = q.mul(o.orientation);
                m
            })
            .collect();
        let r0 = rigidity_loss(&prev, &jittered, &graph).value;
        let r1 = rigidity_loss(&prev, &moved, &graph).value;
        let o0 = rotation_loss(&prev, &jittered, &graph).value;
        let o1 = rotation_loss(&prev, &moved, &graph).value;
        prop_assert!(r0 >= 0.0 && o0 >= 0.0);
        prop_assert!((r0 - r1).abs() < 1e-9, "{r0} {r1}");
        prop_assert!((o0 - o1).abs() < 1e-9, "{o0} {o1}");
    }

    #[test]
    fn segmentation_ignores_uniform_lambda_scale(seed in 0u64..200, factor in 0.1f64..10.0) {
        let seq = generate(&SceneSpec::new(SceneKind::Pendulum, 90, 3, 15.0, seed)).unwrap();
        let traj: Vec<GaussianSet> = (0..3)
            .map(|t| {
                let gs = seq.frame0.gaussians.iter().enumerate()
                    .map(|(i, g)| GaussianState::new(seq.gt_centers[t][i], seq.gt_rotations[t][i].mul(g.orientation), g.scale))
                    .collect();
                GaussianSet::new(gs, t)
            })
            .collect();
        let base = SegParams::default();
        let scaled = SegParams {
            lambda_p: base.lambda_p * factor,
            lambda_r: base.lambda_r * factor,
            lambda_p0: base.lambda_p0 * factor,
            ..base
        };
        let a = segment(&build_features(&traj, &base).unwrap(), 3, seed).unwrap();
        let b = segment(&build_features(&traj, &scaled).unwrap(), 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mte_is_invariant_under_pixel_rigid_motion(seed in any::<u64>(), angle in -3.0f64..3.0, du in -50.0f64..50.0, dv in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 7;
        let mk = |rng: &mut ChaCha8Rng| Track2D {
            uv: (0..n).map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)]).collect(),
            valid: vec![true; n],
        };
        let pred = mk(&mut rng);
        let gt = mk(&mut rng);
        let (s, c) = angle.sin_cos();
        let move_track = |t: &Track2D| Track2D {
            uv: t.uv.iter().map(|[u, v]| [c * u - s * v + du, s * u + c * v + dv]).collect(),
            valid: t.valid.clone(),
        };
        let diag = 800.0;
        let a = mte(&pred, &gt, diag).unwrap();
        let b = mte(&move_track(&pred), &move_track(&gt), diag).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert_eq!(mte(&gt, &gt, diag).unwrap(), 0.0);
    }

    #[test]
    fn generated_parts_move_rigidly(seed in 0u64..500, kind in prop_oneof![
        Just(SceneKind::Wheel), Just(SceneKind::Pendulum), Just(SceneKind::TwoLinkArm), Just(SceneKind::TwoBlobs)
    ]) {
        let seq = generate(&SceneSpec::new(kind, 60, 3, 20.0, seed)).unwrap();
        for label in 0..kind.num_parts() as u32 {
            let idx = seq.part(label);
            let before: Vec<Vec3> = idx.iter().map(|&i| seq.gt_centers[0][i]).collect();
            for t in 1..seq.n_frames() {
                let after: Vec<Vec3> = idx.iter().map(|&i| seq.gt_centers[t][i]).collect();
                let q = procrustes_rotation(&before, &after).unwrap();
                let mean = |p: &[Vec3]| p.iter().fold(Vec3::zeros(), |a, b| a + *b).scale(1.0 / p.len() as f64);
                let (mb, ma) = (mean(&before), mean(&after));
                let worst = before.iter().zip(&after).map(|(b, a)| (q.rotate(*b - mb) + ma).distance(*a)).fold(0.0, f64::max);
                prop_assert!(worst < 1e-9, "part {label} frame {t}: residual {worst}");
            }
        }
    }
}

#[test]
fn static_sequence_keeps_parameters_near_zero() {
    let mut set = random_set(3, 80);
    for g in set.gaussians.iter_mut() {
        g.scale = g.scale.scale(0.5);
    }
    let obs: Vec<DataObservation> = (0..3).map(|_| DataObservation::with_identity(set.centers())).collect();
    let cfg = TrainConfig {
        layer_sizes: vec![2, 6, 18],
        iters_per_frame: 30,
        ..TrainConfig::default()
    };
    let report = fit_observations(&set, &obs, &cfg).map_err(|p| p.error).unwrap();
    assert_eq!(report.trajectory.len(), 4);
    for (t, frame) in report.trajectory.iter().enumerate() {
        assert_eq!(frame.len(), set.len(), "frame {t}");
    }
    let zero = flatten(&cascade_zero(&report.hierarchy, set.len()));
    for (t, c) in report.checkpoints.iter().enumerate() {
        let p = flatten(c);
        let dist = p.iter().zip(&zero).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-6, "transition {t}: parameter distance {dist}");
    }
}

#[test]
fn fits_are_bit_identical_across_runs() {
    let seq = generate(&SceneSpec::new(SceneKind::TwoBlobs, 120, 3, 10.0, 2)).unwrap();
    let cfg = TrainConfig {
        layer_sizes: vec![2, 6, 18],
        iters_per_frame: 15,
        ..TrainConfig::default()
    };
    let a = fit_observations(&seq.frame0, seq.fit_inputs(), &cfg).map_err(|p| p.error).unwrap();
    let b = fit_observations(&seq.frame0, seq.fit_inputs(), &cfg).map_err(|p| p.error).unwrap();
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert_eq!(flatten(x), flatten(y));
    }
    let losses = |r: &gausscade::optim::FitReport| r.frames.iter().flat_map(|f| f.losses.iter().map(|l| l.total)).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
}
