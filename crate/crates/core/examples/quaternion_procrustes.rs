// Quaternion algebra and rotation recovery from corresponding point sets.

use std::error::Error;

use gausscade::math::{polar_rotation, quat_to_mat, Mat3, Quat, Vec3};
use gausscade::seg::procrustes_rotation;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let a = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.5);
    let b = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), -0.3);
    let ab = a.mul(b);
    let v = Vec3::new(0.2, -0.4, 1.0);
    let composed = a.rotate(b.rotate(v));
    println!("q_a q_b = {:?}", ab.to_array());
    println!("rotating twice vs once: {:.2e}", (ab.rotate(v) - composed).norm());

    let r = quat_to_mat(ab)?;
    println!("rotation matrix valid: {}", r.is_rotation(1e-12));

    // A noisy linear map still has a well-defined nearest rotation.
    let f = r.add(&Mat3::from_diag(Vec3::new(0.05, -0.02, 0.01)));
    let nearest = polar_rotation(&f)?;
    println!("polar factor is a rotation: {}", nearest.is_rotation(1e-10));

    let before: Vec<Vec3> = (0..12)
        .map(|i| {
            let s = i as f64;
            Vec3::new(s.sin(), (1.7 * s).cos(), 0.3 * s - 1.0)
        })
        .collect();
    let after: Vec<Vec3> = before.iter().map(|p| ab.rotate(*p) + Vec3::new(1.0, 2.0, 3.0)).collect();
    let recovered = procrustes_rotation(&before, &after)?;
    println!("recovered rotation differs by {:.2e} rad", recovered.angle_to(ab));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
