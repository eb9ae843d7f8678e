//! Multi-sample block-model networks with correlated within-community edges.
//!
//! Edges are thresholded latent normals. Within a community, latent
//! variables share one normal factor per sample (exchangeable), one factor
//! per edge group (grouped), or one factor per endpoint (hub). Between-community
//! edges are always independent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvn::{bvn_cdf, norm_inv};
use crate::error::{invalid, Error, Result};
use crate::model::{logistic, pairs, HardMembership, MultiNetwork};
use crate::rng::{derive_seed, stream_rng};

/// Bounds applied to edge probabilities after random effects.
pub const MU_CLIP: (f64, f64) = (0.01, 0.99);
const FEASIBILITY_TOL: f64 = 1e-9;

const TAG_SAMPLES: u64 = 1;
const TAG_EFFECTS: u64 = 2;
const TAG_GROUPS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorrelationStructure {
    Independent,
    /// Every pair of within-community edges has binary correlation `rho[k]`.
    Exchangeable { rho: Vec<f64> },
    /// Within-community edges are split into random groups sized so that a
    /// fraction `lambda` of edge pairs is correlated (with `rho[k]`).
    Grouped { rho: Vec<f64>, lambda: f64 },
    /// Edges sharing an endpoint have binary correlation `rho[k]`; others none.
    Hub { rho: Vec<f64> },
}

impl CorrelationStructure {
    fn rho(&self) -> Option<&[f64]> {
        match self {
            Self::Independent => None,
            Self::Exchangeable { rho } | Self::Grouped { rho, .. } | Self::Hub { rho } => Some(rho),
        }
    }
}

/// Relative community sizes of the two-community presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Balance {
    /// 20 / 20
    Balanced,
    /// 10 / 30
    Unbalanced,
}

impl Balance {
    pub fn sizes(self) -> Vec<usize> {
        match self {
            Self::Balanced => vec![20, 20],
            Self::Unbalanced => vec![10, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Nodes are assigned to communities in contiguous index ranges.
    pub community_sizes: Vec<usize>,
    pub n_samples: usize,
    /// Symmetric `K x K` block coefficients.
    pub beta: Vec<Vec<f64>>,
    pub within_range: (f64, f64),
    pub between_range: (f64, f64),
    pub correlation: CorrelationStructure,
    /// Standard deviation of the within-community random effects; 0 disables them.
    #[serde(default)]
    pub random_effect_sd: f64,
    #[serde(default = "default_groups")]
    pub n_groups: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_groups() -> usize {
    10
}

/// Output of [`sample_networks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub net: MultiNetwork,
    pub labels: HardMembership,
}

impl SimConfig {
    /// Near-zero covariate signal: `beta = [[1, 0], [0, 1.5]]`, all covariates in `[-0.2, 0.2]`.
    pub fn weak_signal(balance: Balance, n_samples: usize, rho: f64, seed: u64) -> Self {
        Self {
            community_sizes: balance.sizes(),
            n_samples,
            beta: vec![vec![1.0, 0.0], vec![0.0, 1.5]],
            within_range: (-0.2, 0.2),
            between_range: (-0.2, 0.2),
            correlation: exchangeable_or_independent(rho, 2),
            random_effect_sd: 0.0,
            n_groups: 10,
            seed,
        }
    }

    /// Separated covariates: `beta = [[0.3, 0.2], [0.2, 0.6]]`, within `[0.9, 1.1]`,
    /// between `[-0.8, -0.6]`.
    pub fn strong_signal(balance: Balance, n_samples: usize, rho: f64, seed: u64) -> Self {
        Self {
            community_sizes: balance.sizes(),
            n_samples,
            beta: vec![vec![0.3, 0.2], vec![0.2, 0.6]],
            within_range: (0.9, 1.1),
            between_range: (-0.8, -0.6),
            correlation: exchangeable_or_independent(rho, 2),
            random_effect_sd: 0.0,
            n_groups: 10,
            seed,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.community_sizes.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.community_sizes.len()
    }

    pub fn truth(&self) -> HardMembership {
        let labels = self
            .community_sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
            .collect();
        HardMembership::new(labels, self.k()).expect("validated community sizes")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.community_sizes.contains(&0) {
            return Err(invalid("community sizes must be nonempty and positive"));
        }
        if self.n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        if self.beta.len() != k || self.beta.iter().any(|r| r.len() != k) {
            return Err(invalid(format!("beta must be {k} x {k}")));
        }
        for q in 0..k {
            for l in 0..k {
                if !self.beta[q][l].is_finite() || self.beta[q][l] != self.beta[l][q] {
                    return Err(invalid("beta must be finite and symmetric"));
                }
            }
        }
        for (name, (a, b)) in [("within_range", self.within_range), ("between_range", self.between_range)] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(invalid(format!("{name} must satisfy lower <= upper")));
            }
        }
        if !(self.random_effect_sd >= 0.0 && self.random_effect_sd.is_finite()) {
            return Err(invalid("random_effect_sd must be finite and nonnegative"));
        }
        if self.n_groups == 0 {
            return Err(invalid("n_groups must be at least 1"));
        }
        if let Some(rho) = self.correlation.rho() {
            if rho.len() != k {
                return Err(invalid(format!("rho must have {k} entries")));
            }
            if rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(invalid("rho entries must lie in [0, 1]"));
            }
        }
        if let CorrelationStructure::Grouped { lambda, .. } = self.correlation {
            if !(lambda > 0.0 && lambda <= 1.0) {
                return Err(invalid("lambda must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// For each community, the group index of each of its within-community
    /// pairs (pairs in ascending `(i, j)` order). Empty unless the structure is grouped.
    pub fn within_groups(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let CorrelationStructure::Grouped { lambda, .. } = self.correlation else {
            return Ok(Vec::new());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[TAG_GROUPS]));
        Ok(self
            .community_sizes
            .iter()
            .map(|&s| {
                let e = s * (s - 1) / 2;
                let g = group_size(lambda, e);
                let mut order: Vec<usize> = (0..e).collect();
                order.shuffle(&mut rng);
                let mut group = vec![0; e];
                for (pos, &edge) in order.iter().enumerate() {
                    group[edge] = pos / g;
                }
                group
            })
            .collect())
    }
}

fn exchangeable_or_independent(rho: f64, k: usize) -> CorrelationStructure {
    if rho > 0.0 {
        CorrelationStructure::Exchangeable { rho: vec![rho; k] }
    } else {
        CorrelationStructure::Independent
    }
}

/// Group size giving a correlated-pair density of about `lambda` among `n_edges` edges.
pub fn group_size(lambda: f64, n_edges: usize) -> usize {
    ((lambda * n_edges.saturating_sub(1) as f64).round() as usize + 1).max(2)
}

/// Fraction of distinct edge pairs that share a group.
pub fn correlated_pair_density(groups: &[usize]) -> f64 {
    let e = groups.len();
    if e < 2 {
        return 0.0;
    }
    let mut counts = vec![0usize; groups.iter().max().map_or(0, |g| g + 1)];
    for &g in groups {
        counts[g] += 1;
    }
    let shared: usize = counts.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    shared as f64 / (e * (e - 1) / 2) as f64
}

/// Binary correlation of two edges obtained by thresholding standard normals
/// with latent correlation `delta` at `Phi^-1(mu1)` and `Phi^-1(mu2)`.
pub fn binary_correlation(mu1: f64, mu2: f64, delta: f64) -> f64 {
    let joint = bvn_cdf(norm_inv(mu1), norm_inv(mu2), delta);
    (joint - mu1 * mu2) / (mu1 * (1.0 - mu1) * mu2 * (1.0 - mu2)).sqrt()
}

/// Largest attainable binary correlation between Bernoulli(mu1) and Bernoulli(mu2).
pub fn max_binary_correlation(mu1: f64, mu2: f64) -> f64 {
    (mu1.min(mu2) - mu1 * mu2) / (mu1 * (1.0 - mu1) * mu2 * (1.0 - mu2)).sqrt()
}

/// Latent correlation `delta in [0, 1)` that yields binary correlation
/// `rho_target`, by bisection.
pub fn latent_threshold_solve(mu1: f64, mu2: f64, rho_target: f64) -> Result<f64> {
    for mu in [mu1, mu2] {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(invalid(format!("edge probability {mu} outside (0, 1)")));
        }
    }
    if !(0.0..=1.0).contains(&rho_target) {
        return Err(invalid(format!("target correlation {rho_target} outside [0, 1]")));
    }
    if rho_target == 0.0 {
        return Ok(0.0);
    }
    let max = max_binary_correlation(mu1, mu2);
    if rho_target >= max - FEASIBILITY_TOL {
        return Err(Error::Infeasible {
            context: format!("edge probabilities ({mu1}, {mu2})"),
            target: rho_target,
            max,
        });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binary_correlation(mu1, mu2, mid) < rho_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Random-effect group of sample `m` among `n_samples` split into `n_groups`
/// runs of consecutive samples.
pub fn effect_group(m: usize, n_samples: usize, n_groups: usize) -> usize {
    m * n_groups.min(n_samples) / n_samples
}

/// One `N(0, sigma^2)` shift per group.
pub fn random_effect_shifts(sigma: f64, n_groups: usize, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("random-effect sd must be finite and nonnegative"));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; n_groups]);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_groups).map(|_| normal.sample(&mut rng)).collect())
}

/// Adds `shift` to the within-community entries of a dense `N x N` edge
/// probability matrix and clips them to [`MU_CLIP`]. A zero shift changes nothing.
pub fn apply_random_effects(mu: &[f64], labels: &[usize], shift: f64) -> Vec<f64> {
    let n = labels.len();
    let mut out = mu.to_vec();
    if shift == 0.0 {
        return out;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && labels[i] == labels[j] {
                out[i * n + j] = (mu[i * n + j] + shift).clamp(MU_CLIP.0, MU_CLIP.1);
            }
        }
    }
    out
}

fn uniform_in(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    a + (b - a) * rng.random::<f64>()
}

fn draw_covariates(cfg: &SimConfig, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = labels.len();
    let mut x = vec![0.0; n * n];
    for (i, j) in pairs(n) {
        let range = if labels[i] == labels[j] {
            cfg.within_range
        } else {
            cfg.between_range
        };
        let v = uniform_in(rng, range);
        x[i * n + j] = v;
        x[j * n + i] = v;
    }
    x
}

/// Covariate matrices of every sample, as drawn by [`sample_networks`].
pub fn gen_covariates(cfg: &SimConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let labels = cfg.truth();
    let base = derive_seed(cfg.seed, &[TAG_SAMPLES]);
    Ok((0..cfg.n_samples)
        .into_par_iter()
        .map(|m| draw_covariates(cfg, labels.labels(), &mut stream_rng(base, m as u64)))
        .collect())
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws every sample, in parallel over samples with one random stream per sample.
pub fn sample_networks(cfg: &SimConfig) -> Result<Simulated> {
    cfg.validate()?;
    let truth = cfg.truth();
    let labels = truth.labels();
    let n = cfg.n_nodes();
    let k = cfg.k();
    let shifts = random_effect_shifts(
        cfg.random_effect_sd,
        cfg.n_groups,
        derive_seed(cfg.seed, &[TAG_EFFECTS]),
    )?;
    let groups = cfg.within_groups()?;
    let base = derive_seed(cfg.seed, &[TAG_SAMPLES]);

    let samples: Vec<Result<(Vec<u8>, Vec<f64>)>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|m| {
            let mut rng = stream_rng(base, m as u64);
            let x = draw_covariates(cfg, labels, &mut rng);
            let mut mu = vec![0.0; n * n];
            for (i, j) in pairs(n) {
                let v = logistic(cfg.beta[labels[i]][labels[j]] * x[i * n + j]);
                mu[i * n + j] = v;
                mu[j * n + i] = v;
            }
            let shift = shifts[effect_group(m, cfg.n_samples, cfg.n_groups)];
            let mu = apply_random_effects(&mu, labels, shift);
            let adj = draw_edges(cfg, labels, &mu, &groups, &mut rng)
                .map_err(|e| match e {
                    Error::Infeasible { context, target, max } => Error::Infeasible {
                        context: format!("sample {m}, {context}"),
                        target,
                        max,
                    },
                    other => other,
                })?;
            Ok((adj, x))
        })
        .collect();

    let mut layers = Vec::with_capacity(cfg.n_samples);
    let mut covariates = Vec::with_capacity(cfg.n_samples);
    for s in samples {
        let (a, x) = s?;
        layers.push(a);
        covariates.push(x);
    }
    debug_assert_eq!(truth.k(), k);
    Ok(Simulated {
        net: MultiNetwork::new(n, layers, Some(covariates))?,
        labels: truth,
    })
}

fn draw_edges(
    cfg: &SimConfig,
    labels: &[usize],
    mu: &[f64],
    groups: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u8>> {
    let n = labels.len();
    let k = cfg.k();
    // Latent correlation and shared factors per community.
    let mut delta = vec![0.0; k];
    if let Some(rho) = cfg.correlation.rho() {
        for c in 0..k {
            if rho[c] == 0.0 {
                continue;
            }
            let (mut s, mut cnt) = (0.0, 0usize);
            for (i, j) in pairs(n) {
                if labels[i] == c && labels[j] == c {
                    s += mu[i * n + j];
                    cnt += 1;
                }
            }
            if cnt < 2 {
                continue;
            }
            let mbar = s / cnt as f64;
            let d = latent_threshold_solve(mbar, mbar, rho[c]).map_err(|e| match e {
                Error::Infeasible { target, max, .. } => Error::Infeasible {
                    context: format!("block ({c}, {c}) with mean edge probability {mbar:.4}"),
                    target,
                    max,
                },
                other => other,
            })?;
            if matches!(cfg.correlation, CorrelationStructure::Hub { .. }) && d > 0.5 {
                return Err(Error::Infeasible {
                    context: format!("hub structure in community {c}"),
                    target: rho[c],
                    max: binary_correlation(mbar, mbar, 0.5),
                });
            }
            delta[c] = d;
        }
    }
    let factors: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let count = match &cfg.correlation {
                CorrelationStructure::Independent => 0,
                CorrelationStructure::Exchangeable { .. } => 1,
                CorrelationStructure::Grouped { .. } => groups[c].iter().max().map_or(0, |g| g + 1),
                CorrelationStructure::Hub { .. } => n,
            };
            (0..count).map(|_| std_normal(rng)).collect()
        })
        .collect();

    let mut within_pos = vec![0usize; k];
    let mut adj = vec![0u8; n * n];
    for (i, j) in pairs(n) {
        let p = mu[i * n + j];
        let c = labels[i];
        let same = c == labels[j];
        let y = if !same || delta[c] == 0.0 {
            if same {
                within_pos[c] += 1;
            }
            rng.random::<f64>() < p
        } else {
            let d = delta[c];
            let noise = std_normal(rng);
            let z = match &cfg.correlation {
                CorrelationStructure::Exchangeable { .. } => d.sqrt() * factors[c][0] + (1.0 - d).sqrt() * noise,
                CorrelationStructure::Grouped { .. } => {
                    let g = groups[c][within_pos[c]];
                    d.sqrt() * factors[c][g] + (1.0 - d).sqrt() * noise
                }
                CorrelationStructure::Hub { .. } => {
                    d.sqrt() * (factors[c][i] + factors[c][j]) + (1.0 - 2.0 * d).sqrt() * noise
                }
                CorrelationStructure::Independent => unreachable!("delta is zero without correlation"),
            };
            within_pos[c] += 1;
            z < norm_inv(p)
        };
        if y {
            adj[i * n + j] = 1;
            adj[j * n + i] = 1;
        }
    }
    Ok(adj)
}
