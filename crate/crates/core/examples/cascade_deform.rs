// Applying a three-layer cascade to a Gaussian set and inspecting how
// centers, orientations and scales change.

use std::error::Error;

use gausscade::cluster::build_hierarchy;
use gausscade::deform::{cascade_jacobian, cascade_outputs, cascade_zero, DeformOptions, LayerForm};
use gausscade::math::{Quat, Vec3};
use gausscade::scenegen::{generate, SceneKind, SceneSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let seq = generate(&SceneSpec::new(SceneKind::Wheel, 300, 2, 10.0, 1))?;
    let set = &seq.frame0;
    let h = build_hierarchy(set, &[2, 8, 32], 0)?;
    let mut cascade = cascade_zero(&h, set.len());

    let zero = cascade_outputs(&cascade, &h, set, &DeformOptions::default())?;
    let same = zero.iter().zip(&set.gaussians).all(|(o, g)| o.center == g.center);
    println!("zero cascade is the identity: {same}");

    // Rotate the coarsest clusters and stretch one of them along x.
    for p in cascade.layers[0].iter_mut() {
        p.rotation = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.2);
    }
    cascade.layers[0][0].scale_dir = Vec3::new(0.5, 0.0, 0.0);
    let out = cascade_outputs(&cascade, &h, set, &DeformOptions::default())?;
    let moved = out.iter().zip(&set.gaussians).map(|(o, g)| o.center.distance(g.center)).fold(0.0, f64::max);
    let turned = out
        .iter()
        .zip(&set.gaussians)
        .map(|(o, g)| o.orientation.angle_to(g.orientation).to_degrees())
        .fold(0.0, f64::max);
    println!("largest center shift {moved:.4}, largest orientation change {turned:.2} deg");

    let j = cascade_jacobian(&cascade, &h, 0, set.gaussians[0].center, LayerForm::Anchored);
    println!("Jacobian determinant at Gaussian 0: {:.4}", j.det());

    let frozen = DeformOptions {
        propagate_covariance: false,
        ..DeformOptions::default()
    };
    let out2 = cascade_outputs(&cascade, &h, set, &frozen)?;
    println!(
        "without propagation orientation of Gaussian 0 is unchanged: {}",
        out2[0].orientation == set.gaussians[0].orientation
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
