// 2D tracks from a fitted trajectory and their median trajectory error.

use std::error::Error;

use gausscade::eval::{evaluate_tracks, gt_tracks, mean_mte, pick_keypoints};
use gausscade::optim::{fit_observations, TrainConfig};
use gausscade::scenegen::{generate, SceneKind, SceneSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let seq = generate(&SceneSpec::new(SceneKind::Pendulum, 300, 3, 12.0, 2))?;
    let cfg = TrainConfig {
        layer_sizes: vec![4, 16, 64],
        iters_per_frame: 40,
        ..TrainConfig::default()
    };
    let report = fit_observations(&seq.frame0, seq.fit_inputs(), &cfg).map_err(|p| p.error)?;
    let camera = &seq.cameras[0];
    let keys = pick_keypoints(&seq.gt_centers, camera, 8, 0);
    let tracks = gt_tracks(&seq.gt_centers, camera, &keys);
    let results = evaluate_tracks(&report.trajectory, camera, &tracks, 10.0)?;
    for r in &results {
        println!("track {} -> gaussian {} (true {}), MTE {:.4}%", r.track, r.gaussian, keys[r.track], 100.0 * r.mte);
    }
    println!("mean MTE {:.4}% of the image diagonal", 100.0 * mean_mte(&results));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
