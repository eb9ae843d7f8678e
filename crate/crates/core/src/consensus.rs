//! Per-layer community counts by greedy modularity, averaged into a consensus
//! number of communities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{pairs, HardMembership, MultiNetwork};
use crate::spectral::canonical_labels;

/// Layer filters applied before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerFilters {
    /// A layer is kept only if it has strictly fewer communities than this.
    pub max_k_per_layer: usize,
    /// A layer is kept only if its largest community is strictly larger than this.
    pub min_largest_community: usize,
}

impl Default for LayerFilters {
    fn default() -> Self {
        Self {
            max_k_per_layer: 10,
            min_largest_community: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub n_communities: usize,
    pub largest: usize,
    pub modularity: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusK {
    pub k: usize,
    pub mean_k: f64,
    pub kept_layers: Vec<usize>,
    pub layers: Vec<LayerSummary>,
}

/// Agglomerative modularity maximization: starting from singletons, merge the
/// connected pair with the largest modularity gain while the gain is positive.
/// Ties go to the lexicographically smallest community pair.
pub fn greedy_modularity(layer: &[u8], n: usize) -> (HardMembership, f64) {
    let edges: Vec<(usize, usize)> = pairs(n).filter(|&(i, j)| layer[i * n + j] == 1).collect();
    let labels: Vec<usize> = (0..n).collect();
    if edges.is_empty() {
        let k = n.max(1);
        return (HardMembership::new(labels, k).expect("valid singleton labels"), 0.0);
    }
    let two_m = 2.0 * edges.len() as f64;
    // e[a][b]: fraction of edge ends joining communities a and b.
    let mut e = vec![0.0; n * n];
    let mut a = vec![0.0; n];
    for &(i, j) in &edges {
        e[i * n + j] += 1.0 / two_m;
        e[j * n + i] += 1.0 / two_m;
        a[i] += 1.0 / two_m;
        a[j] += 1.0 / two_m;
    }
    let mut owner: Vec<usize> = (0..n).collect();
    let mut active: Vec<bool> = vec![true; n];
    let mut q: f64 = (0..n).map(|c| e[c * n + c] - a[c] * a[c]).sum();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for x in 0..n {
            if !active[x] {
                continue;
            }
            for y in (x + 1)..n {
                if !active[y] || e[x * n + y] == 0.0 {
                    continue;
                }
                let gain = 2.0 * (e[x * n + y] - a[x] * a[y]);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, x, y));
                }
            }
        }
        let Some((gain, x, y)) = best else { break };
        if gain <= 0.0 {
            break;
        }
        q += gain;
        for z in 0..n {
            e[x * n + z] += e[y * n + z];
        }
        for z in 0..n {
            e[z * n + x] += e[z * n + y];
        }
        for z in 0..n {
            e[y * n + z] = 0.0;
            e[z * n + y] = 0.0;
        }
        a[x] += a[y];
        a[y] = 0.0;
        active[y] = false;
        owner.iter_mut().filter(|o| **o == y).for_each(|o| *o = x);
    }
    let labels = canonical_labels(&owner);
    let k = labels.iter().max().map_or(1, |&z| z + 1);
    (HardMembership::new(labels, k).expect("valid labels"), q)
}

/// Averages per-layer greedy-modularity community counts over the layers that
/// pass `filters`.
pub fn consensus_k(net: &MultiNetwork, filters: LayerFilters) -> Result<ConsensusK> {
    let n = net.n_nodes();
    let layers: Vec<LayerSummary> = (0..net.n_samples())
        .into_par_iter()
        .map(|m| {
            let (labels, modularity) = greedy_modularity(net.layer(m), n);
            let sizes = labels.sizes();
            let n_communities = sizes.iter().filter(|&&s| s > 0).count();
            let largest = sizes.iter().copied().max().unwrap_or(0);
            LayerSummary {
                n_communities,
                largest,
                modularity,
                kept: n_communities < filters.max_k_per_layer
                    && largest > filters.min_largest_community,
            }
        })
        .collect();
    let kept_layers: Vec<usize> = layers
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kept)
        .map(|(m, _)| m)
        .collect();
    if kept_layers.is_empty() {
        return Err(Error::EstimationFailed(
            "every layer was removed by the community-count filters".into(),
        ));
    }
    let mean_k = kept_layers
        .iter()
        .map(|&m| layers[m].n_communities as f64)
        .sum::<f64>()
        / kept_layers.len() as f64;
    Ok(ConsensusK {
        k: (mean_k.round() as usize).max(1),
        mean_k,
        kept_layers,
        layers,
    })
}
