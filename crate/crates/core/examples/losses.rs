// Evaluating the regularizers and the data term for a candidate cascade.

use std::error::Error;

use gausscade::cluster::build_hierarchy;
use gausscade::deform::{cascade_zero, DeformOptions};
use gausscade::loss::{total_loss, DataObservation, LossContext, LossWeights, NeighborGraph};
use gausscade::math::Vec3;
use gausscade::scenegen::{generate, SceneKind, SceneSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let seq = generate(&SceneSpec::new(SceneKind::Pendulum, 300, 2, 10.0, 2))?;
    let prev = &seq.frame0;
    let frame0 = prev.centers();
    let graph = NeighborGraph::from_set(prev, 20, 2000.0)?;
    let h = build_hierarchy(prev, &[4, 16, 64], 0)?;
    let mut cascade = cascade_zero(&h, prev.len());

    for (name, obs) in [
        ("correspondence", seq.fit_inputs()[0].clone()),
        ("chamfer", DataObservation::unmatched(seq.gt_centers[1].clone())),
    ] {
        let ctx = LossContext {
            frame0: &frame0,
            prev,
            graph: &graph,
            obs: &obs,
            weights: LossWeights::default(),
            max_scale: 0.02,
        };
        let (zero, _) = total_loss(&ctx, &cascade, &h, &DeformOptions::default())?;
        println!("{name} at identity: {zero:?}");
    }

    // A uniform translation leaves rigidity and isometry at zero.
    for p in cascade.layers[0].iter_mut() {
        p.translation = Vec3::new(0.01, 0.0, 0.0);
    }
    let obs = seq.fit_inputs()[0].clone();
    let ctx = LossContext {
        frame0: &frame0,
        prev,
        graph: &graph,
        obs: &obs,
        weights: LossWeights::default(),
        max_scale: 0.02,
    };
    let (shifted, grads) = total_loss(&ctx, &cascade, &h, &DeformOptions::default())?;
    println!("after translation: {shifted:?}");
    println!("translation gradient of cluster 0: {:?}", grads.layers[0][0].translation);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
