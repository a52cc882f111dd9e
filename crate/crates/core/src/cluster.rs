//! Coarse-to-fine cluster hierarchy over Gaussian centers.
//!
//! The finest layer comes from k-means on the centers. Each coarser layer is
//! produced by average-linkage agglomerative clustering of the mean centers
//! of the next finer layer's clusters, so the partitions nest by
//! construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::Vec3;

#[derive(Clone, Copy, Debug)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Lloyd stops once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest inertia wins.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-7,
            n_init: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<u32>,
    /// Flat `k × dim` centroid matrix.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub inertia: f64,
}

impl KMeansResult {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means on 3D points with k-means++ seeding.
pub fn kmeans(points: &[Vec3], k: usize, seed: u64) -> Result<(Vec<u32>, Vec<Vec3>)> {
    let flat: Vec<f64> = points.iter().flat_map(|p| p.to_array()).collect();
    let res = kmeans_nd(&flat, 3, k, seed, KMeansOptions::default())?;
    let centroids = (0..k)
        .map(|c| {
            let v = res.centroid(c);
            Vec3::new(v[0], v[1], v[2])
        })
        .collect();
    Ok((res.assignments, centroids))
}

/// k-means over `n × dim` row-major data.
pub fn kmeans_nd(
    data: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<KMeansResult> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("data length is not a multiple of dim"));
    }
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds number of points {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..opts.n_init.max(1) {
        let run_seed: u64 = rng.random();
        let res = kmeans_single(data, dim, n, k, run_seed, opts)?;
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn kmeans_single(
    data: &[f64],
    dim: usize,
    n: usize,
    k: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<KMeansResult> {
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the number of distinct points (found {c})"
            )));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = i;
                break;
            }
        }
        if d2[pick] == 0.0 {
            pick = (0..n).rev().find(|&i| d2[i] > 0.0).expect("total > 0");
        }
        centroids.extend_from_slice(row(pick));
        let new = &centroids[c * dim..(c + 1) * dim].to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), new));
        }
    }

    let mut assignments = vec![u32::MAX; n];
    for iter in 0..=opts.max_iter {
        let mut changed = false;
        for i in 0..n {
            let p = row(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best as u32 {
                assignments[i] = best as u32;
                changed = true;
            }
        }
        if (!changed && iter > 0) || iter == opts.max_iter {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i] as usize;
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        // Empty clusters take the worst-fitting point of the largest cluster.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            let mean: Vec<f64> = sums[largest * dim..(largest + 1) * dim]
                .iter()
                .map(|s| s / counts[largest] as f64)
                .collect();
            let far = (0..n)
                .filter(|&i| assignments[i] as usize == largest)
                .fold((usize::MAX, -1.0), |(bi, bd), i| {
                    let d = sq_dist(row(i), &mean);
                    if d > bd {
                        (i, d)
                    } else {
                        (bi, bd)
                    }
                })
                .0;
            assignments[far] = c as u32;
            counts[largest] -= 1;
            counts[c] = 1;
            for j in 0..dim {
                sums[largest * dim + j] -= data[far * dim + j];
                sums[c * dim + j] = data[far * dim + j];
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            for j in 0..dim {
                let m = sums[c * dim + j] / counts[c] as f64;
                shift = shift.max((m - centroids[c * dim + j]).abs());
                centroids[c * dim + j] = m;
            }
        }
        if shift <= opts.tol {
            // Centroids are fixed; one more assignment pass settles labels.
            for i in 0..n {
                let p = row(i);
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                assignments[i] = best as u32;
            }
            break;
        }
    }

    let inertia = (0..n)
        .map(|i| {
            let c = assignments[i] as usize;
            sq_dist(row(i), &centroids[c * dim..(c + 1) * dim])
        })
        .sum();
    Ok(KMeansResult {
        assignments,
        centroids,
        dim,
        inertia,
    })
}

/// Average-linkage agglomerative clustering on Euclidean distance. Merges the
/// closest pair until `target_k` groups remain; ties go to the lowest index
/// pair. Groups are labelled in order of their lowest member index.
pub fn agglomerate(points: &[Vec3], target_k: usize) -> Result<Vec<u32>> {
    let n = points.len();
    if target_k < 1 {
        return Err(Error::invalid("target_k must be at least 1"));
    }
    if target_k > n {
        return Err(Error::invalid(format!(
            "target_k = {target_k} exceeds number of inputs {n}"
        )));
    }
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = points[i].distance(points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    // best[i]: closest active j > i.
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n];
    let recompute = |i: usize, dist: &[f64], active: &[bool]| -> (f64, usize) {
        let mut b = (f64::INFINITY, usize::MAX);
        for j in (i + 1)..n {
            if active[j] && dist[i * n + j] < b.0 {
                b = (dist[i * n + j], j);
            }
        }
        b
    };
    for i in 0..n {
        best[i] = recompute(i, &dist, &active);
    }

    let mut groups = n;
    while groups > target_k {
        let mut a = usize::MAX;
        let mut pick = (f64::INFINITY, usize::MAX);
        for i in 0..n {
            if active[i] && best[i].1 != usize::MAX && best[i].0 < pick.0 {
                pick = best[i];
                a = i;
            }
        }
        let b = pick.1;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for m in 0..n {
            if !active[m] || m == a || m == b {
                continue;
            }
            let d = (na * dist[a * n + m] + nb * dist[b * n + m]) / (na + nb);
            dist[a * n + m] = d;
            dist[m * n + a] = d;
        }
        active[b] = false;
        size[a] += size[b];
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        groups -= 1;

        best[a] = recompute(a, &dist, &active);
        for i in 0..n {
            if !active[i] || i == a {
                continue;
            }
            if best[i].1 == a || best[i].1 == b {
                best[i] = recompute(i, &dist, &active);
            } else if i < a {
                let d = dist[i * n + a];
                if d < best[i].0 || (d == best[i].0 && a < best[i].1) {
                    best[i] = (d, a);
                }
            }
        }
    }

    Ok(relabel(&owner))
}

/// Maps arbitrary labels to `0..k` in order of first appearance.
pub(crate) fn relabel<L: Copy + Eq + std::hash::Hash>(labels: &[L]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// K-layer nested partition of the Gaussians, coarsest layer first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterHierarchy {
    pub layer_sizes: Vec<usize>,
    /// `assignments[layer][gaussian]`.
    pub assignments: Vec<Vec<u32>>,
    /// `centroids[layer][cluster]`: mean of member centers.
    pub centroids: Vec<Vec<Vec3>>,
    /// `parent_map[layer][cluster]` is the parent in `layer - 1`; empty for
    /// the coarsest layer.
    pub parent_map: Vec<Vec<u32>>,
    pub seed: u64,
}

impl ClusterHierarchy {
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn num_gaussians(&self) -> usize {
        self.assignments.first().map_or(0, |a| a.len())
    }

    /// Recomputes every centroid as the mean of its members' current centers.
    pub fn refresh_centroids(&mut self, set: &GaussianSet) {
        for (layer, &k) in self.layer_sizes.iter().enumerate() {
            self.centroids[layer] = cluster_means(&set.centers(), &self.assignments[layer], k);
        }
    }

    /// Writes per-layer cluster ids into each Gaussian.
    pub fn annotate(&self, set: &mut GaussianSet) {
        for (i, g) in set.gaussians.iter_mut().enumerate() {
            g.cluster_ids = self.assignments.iter().map(|a| a[i]).collect();
        }
    }

    /// True when every finer partition refines the coarser one.
    pub fn is_nested(&self) -> bool {
        for layer in 1..self.num_layers() {
            let parents = &self.parent_map[layer];
            for (i, &c) in self.assignments[layer].iter().enumerate() {
                if parents[c as usize] != self.assignments[layer - 1][i] {
                    return false;
                }
            }
        }
        true
    }

    pub fn check_bound(&self, n: usize) -> Result<()> {
        if self.num_gaussians() != n {
            return Err(Error::ShapeMismatch(format!(
                "hierarchy covers {} gaussians, set has {n}",
                self.num_gaussians()
            )));
        }
        Ok(())
    }
}

fn cluster_means(points: &[Vec3], labels: &[u32], k: usize) -> Vec<Vec3> {
    let mut sums = vec![Vec3::ZERO; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sums[l as usize] += *p;
        counts[l as usize] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| s.scale(1.0 / c.max(1) as f64))
        .collect()
}

pub fn validate_layer_sizes(sizes: &[usize], n: usize) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::invalid("at least one layer is required"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid(format!(
            "layer sizes must not decrease from coarsest to finest: {sizes:?}"
        )));
    }
    let finest = *sizes.last().unwrap();
    if finest > n {
        return Err(Error::invalid(format!(
            "finest layer size {finest} exceeds gaussian count {n}"
        )));
    }
    Ok(())
}

pub fn build_hierarchy(set: &GaussianSet, layer_sizes: &[usize], seed: u64) -> Result<ClusterHierarchy> {
    let n = set.len();
    validate_layer_sizes(layer_sizes, n)?;
    let centers = set.centers();
    let k_layers = layer_sizes.len();

    let mut assignments = vec![Vec::new(); k_layers];
    let mut parent_map = vec![Vec::new(); k_layers];
    let (fine, _) = kmeans(&centers, layer_sizes[k_layers - 1], seed)?;
    assignments[k_layers - 1] = fine;

    for layer in (0..k_layers - 1).rev() {
        let finer = &assignments[layer + 1];
        let means = cluster_means(&centers, finer, layer_sizes[layer + 1]);
        let parents = agglomerate(&means, layer_sizes[layer])?;
        assignments[layer] = finer.iter().map(|&c| parents[c as usize]).collect();
        parent_map[layer + 1] = parents;
    }

    let centroids = layer_sizes
        .iter()
        .zip(&assignments)
        .map(|(&k, a)| cluster_means(&centers, a, k))
        .collect();

    Ok(ClusterHierarchy {
        layer_sizes: layer_sizes.to_vec(),
        assignments,
        centroids,
        parent_map,
        seed,
    })
}

/// Rebuilds the hierarchy from the set's current centers, keeping sizes and
/// seed.
pub fn recluster(set: &GaussianSet, hierarchy: &ClusterHierarchy) -> Result<ClusterHierarchy> {
    build_hierarchy(set, &hierarchy.layer_sizes, hierarchy.seed)
}
