// Frame-by-frame fitting with a three-layer cascade and with only the
// finest layer.

use std::error::Error;

use gausscade::eval::fit_metrics;
use gausscade::optim::{fit_observations, TrainConfig};
use gausscade::scenegen::{generate, SceneKind, SceneSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let seq = generate(&SceneSpec::new(SceneKind::TwoLinkArm, 300, 3, 12.0, 1))?;
    for layers in [vec![4, 16, 64], vec![64]] {
        let cfg = TrainConfig {
            layer_sizes: layers.clone(),
            iters_per_frame: 40,
            ..TrainConfig::default()
        };
        let report = fit_observations(&seq.frame0, seq.fit_inputs(), &cfg).map_err(|p| p.error)?;
        let m = fit_metrics(&report.trajectory, &seq.gt_centers, &seq.gt_rotations, &seq.part_labels)?;
        let last = report.frames.last().unwrap();
        println!(
            "layers {layers:?}: final loss {:.3e}, mean center error {:.2e}, orientation deviation {:.2} deg",
            last.final_loss.total, m.mean_center_error, m.orientation_deviation_deg
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
