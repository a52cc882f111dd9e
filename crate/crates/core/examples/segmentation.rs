// Part segmentation from per-Gaussian trajectories.

use std::error::Error;

use gausscade::eval::orientation_deviation_deg;
use gausscade::gaussian::{GaussianSet, GaussianState};
use gausscade::scenegen::{generate, SceneKind, SceneSpec};
use gausscade::seg::{ari, build_features, segment, SegParams};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let seq = generate(&SceneSpec::new(SceneKind::TwoLinkArm, 300, 4, 15.0, 4))?;
    // The ground-truth motion stands in for a fitted trajectory here.
    let trajectory: Vec<GaussianSet> = (0..seq.n_frames())
        .map(|t| {
            let gs = seq
                .frame0
                .gaussians
                .iter()
                .enumerate()
                .map(|(i, g)| GaussianState::new(seq.gt_centers[t][i], seq.gt_rotations[t][i].mul(g.orientation), g.scale))
                .collect();
            GaussianSet::new(gs, t)
        })
        .collect();
    let all: Vec<usize> = (0..seq.frame0.len()).collect();
    println!("orientation deviation of the stand-in: {:.1e} deg", orientation_deviation_deg(&trajectory, &seq.gt_rotations, &all)?);

    for relative in [true, false] {
        let params = SegParams {
            relative_rotation: relative,
            ..SegParams::default()
        };
        let feats = build_features(&trajectory, &params)?;
        let labels = segment(&feats, SceneKind::TwoLinkArm.num_parts(), 0)?;
        println!("relative rotation {relative}: ARI {:.3}", ari(&labels, &seq.part_labels)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
