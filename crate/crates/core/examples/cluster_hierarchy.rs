// Nested coarse-to-fine clustering of Gaussian centers.

use std::error::Error;

use gausscade::cluster::{agglomerate, build_hierarchy, kmeans};
use gausscade::scenegen::{generate, SceneKind, SceneSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let seq = generate(&SceneSpec::new(SceneKind::TwoLinkArm, 400, 2, 10.0, 3))?;
    let centers = seq.frame0.centers();

    let (labels, centroids) = kmeans(&centers, 6, 0)?;
    let mut counts = vec![0usize; centroids.len()];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    println!("k-means cluster sizes {counts:?}");

    let merged = agglomerate(&centroids, 2)?;
    println!("six centroids merged into {:?}", merged);

    let h = build_hierarchy(&seq.frame0, &[4, 16, 64], 0)?;
    println!("layers {}, nested {}", h.num_layers(), h.is_nested());
    for (k, c) in h.centroids.iter().enumerate() {
        println!("layer {k}: {} clusters", c.len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
