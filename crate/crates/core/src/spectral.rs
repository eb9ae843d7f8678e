//! Spectral clustering of single adjacency matrices, used to seed the
//! membership iteration.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{HardMembership, MembershipProbs, MultiNetwork};
use crate::rng::derive_seed;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

/// Which adjacency a spectral initialization is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitSource {
    Sample(usize),
    MeanAdjacency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub source: InitSource,
    /// Probability given to each non-assigned community.
    pub smoothing: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            source: InitSource::Sample(0),
            smoothing: 0.1,
        }
    }
}

/// Clusters the rows of the top-`k` eigenvectors of `D^-1/2 A D^-1/2`.
///
/// `adjacency` is a dense symmetric `n x n` row-major matrix (weights allowed,
/// so a mean adjacency works too). Isolated nodes use degree 1.
pub fn spectral_cluster(adjacency: &[f64], n: usize, k: usize, seed: u64) -> Result<HardMembership> {
    if k == 0 || k > n {
        return Err(invalid(format!("spectral clustering: k = {k} with {n} nodes")));
    }
    if adjacency.len() != n * n {
        return Err(invalid("spectral clustering: adjacency is not n x n"));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency[i * n + j] != adjacency[j * n + i] {
                return Err(invalid("spectral clustering: adjacency is not symmetric"));
            }
        }
    }
    if k == 1 {
        return HardMembership::new(vec![0; n], 1);
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = adjacency[i * n..(i + 1) * n].iter().sum();
            1.0 / if d > 0.0 { d } else { 1.0 }.sqrt()
        })
        .collect();
    let norm = DMatrix::from_fn(n, n, |i, j| {
        adjacency[i * n + j] * inv_sqrt_deg[i] * inv_sqrt_deg[j]
    });
    let eig = SymmetricEigen::new(norm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let embedding: Vec<Vec<f64>> = (0..n)
        .map(|i| order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect())
        .collect();
    let labels = kmeans(&embedding, k, seed);
    HardMembership::new(canonical_labels(&labels), k)
}

/// Convenience wrapper for a 0/1 layer.
pub fn spectral_cluster_layer(layer: &[u8], n: usize, k: usize, seed: u64) -> Result<HardMembership> {
    let a: Vec<f64> = layer.iter().map(|&v| f64::from(v)).collect();
    spectral_cluster(&a, n, k, seed)
}

/// Relabels so communities are numbered by first appearance.
pub(crate) fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |&z| z + 1)];
    let mut next = 0;
    labels
        .iter()
        .map(|&z| {
            *map[z].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with farthest-point seeding; the first center of each
/// restart is drawn from the seeded stream and the lowest inertia wins.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let first = rng.random_range(0..n);
        let mut centers = vec![points[first].clone()];
        let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
        while centers.len() < k {
            let mut far = 0;
            for i in 1..n {
                if min_d[i] > min_d[far] {
                    far = i;
                }
            }
            centers.push(points[far].clone());
            for (d, p) in min_d.iter_mut().zip(points) {
                *d = d.min(sq_dist(p, &points[far]));
            }
        }
        let mut labels = vec![usize::MAX; n];
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut arg = 0;
                let mut dmin = f64::INFINITY;
                for (c, ctr) in centers.iter().enumerate() {
                    let d = sq_dist(p, ctr);
                    if d < dmin {
                        dmin = d;
                        arg = c;
                    }
                }
                if labels[i] != arg {
                    labels[i] = arg;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &z) in points.iter().zip(&labels) {
                counts[z] += 1;
                for (s, v) in sums[z].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
        }
        let inertia: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &z)| sq_dist(p, &centers[z]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

/// Smoothed one-hot rows: the assigned community gets `1 - (k-1) * eps`.
pub fn init_alpha(labels: &HardMembership, k: usize, eps: f64) -> Result<MembershipProbs> {
    if labels.k() > k {
        return Err(invalid("labels use more communities than requested"));
    }
    if !(0.0..1.0 / k as f64).contains(&eps) {
        return Err(invalid(format!("smoothing {eps} outside [0, 1/k)")));
    }
    let main = 1.0 - (k - 1) as f64 * eps;
    let mut data = vec![eps; labels.len() * k];
    for (i, &z) in labels.labels().iter().enumerate() {
        data[i * k + z] = main;
    }
    MembershipProbs::new(labels.len(), k, data)
}

/// One spectral initialization as described by `spec`.
pub fn spectral_init(net: &MultiNetwork, k: usize, spec: InitSpec, seed: u64) -> Result<MembershipProbs> {
    let n = net.n_nodes();
    let labels = match spec.source {
        InitSource::Sample(m) => {
            if m >= net.n_samples() {
                return Err(invalid(format!("init sample {m} out of range")));
            }
            spectral_cluster_layer(net.layer(m), n, k, seed)?
        }
        InitSource::MeanAdjacency => spectral_cluster(&net.mean_adjacency(), n, k, seed)?,
    };
    init_alpha(&labels, k, spec.smoothing)
}

/// `n_inits` initializations from distinct individual samples, chosen by a
/// seeded shuffle (cycling when `n_inits > M`).
pub fn initial_memberships(
    net: &MultiNetwork,
    k: usize,
    n_inits: usize,
    smoothing: f64,
    seed: u64,
) -> Result<Vec<MembershipProbs>> {
    if n_inits == 0 {
        return Err(invalid("at least one initialization is required"));
    }
    let mut samples: Vec<usize> = (0..net.n_samples()).collect();
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5eed])));
    (0..n_inits)
        .map(|r| {
            let spec = InitSpec {
                source: InitSource::Sample(samples[r % samples.len()]),
                smoothing,
            };
            spectral_init(net, k, spec, derive_seed(seed, &[r as u64]))
        })
        .collect()
}
