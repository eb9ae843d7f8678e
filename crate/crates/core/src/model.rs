//! Core value types: multi-sample networks, soft and hard memberships,
//! block parameters, and the per-edge marginal model.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Lower clamp applied to edge means before standardization.
pub const MU_EPS: f64 = 1e-9;

/// Number of unordered node pairs `i < j`.
#[inline]
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Row-major index of the pair `(i, j)`, `i < j`, in the strict upper triangle.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Iterator over `(i, j)` with `i < j`, in `pair_index` order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// `M` symmetric, unweighted adjacency matrices on a shared node set, with
/// optional real edge covariates (all ones when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiNetwork {
    n_nodes: usize,
    /// One dense `N x N` row-major 0/1 matrix per sample.
    layers: Vec<Vec<u8>>,
    covariates: Option<Vec<Vec<f64>>>,
}

impl MultiNetwork {
    pub fn new(
        n_nodes: usize,
        layers: Vec<Vec<u8>>,
        covariates: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(invalid("network must have at least one node"));
        }
        if layers.is_empty() {
            return Err(invalid("network must have at least one sample"));
        }
        let nn = n_nodes * n_nodes;
        for (m, a) in layers.iter().enumerate() {
            if a.len() != nn {
                return Err(invalid(format!(
                    "sample {m}: adjacency has {} entries, expected {nn}",
                    a.len()
                )));
            }
            for i in 0..n_nodes {
                if a[i * n_nodes + i] != 0 {
                    return Err(invalid(format!("sample {m}: self-loop at node {i}")));
                }
                for j in (i + 1)..n_nodes {
                    let (u, v) = (a[i * n_nodes + j], a[j * n_nodes + i]);
                    if u > 1 || v > 1 {
                        return Err(invalid(format!("sample {m}: non-binary entry at ({i}, {j})")));
                    }
                    if u != v {
                        return Err(invalid(format!("sample {m}: asymmetric entry at ({i}, {j})")));
                    }
                }
            }
        }
        if let Some(cov) = &covariates {
            if cov.len() != layers.len() {
                return Err(invalid(format!(
                    "{} covariate matrices for {} samples",
                    cov.len(),
                    layers.len()
                )));
            }
            for (m, x) in cov.iter().enumerate() {
                if x.len() != nn {
                    return Err(invalid(format!("sample {m}: covariate matrix has wrong size")));
                }
                for (i, j) in pairs(n_nodes) {
                    let (u, v) = (x[i * n_nodes + j], x[j * n_nodes + i]);
                    if !u.is_finite() || u != v {
                        return Err(invalid(format!(
                            "sample {m}: covariate at ({i}, {j}) is non-finite or asymmetric"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            n_nodes,
            layers,
            covariates,
        })
    }

    /// Builds a network from undirected edges `(m, i, j)`. Duplicates are rejected.
    pub fn from_edges(
        n_nodes: usize,
        n_samples: usize,
        edges: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self> {
        let mut layers = vec![vec![0u8; n_nodes * n_nodes]; n_samples];
        for (m, i, j) in edges {
            if m >= n_samples || i >= n_nodes || j >= n_nodes {
                return Err(invalid(format!("edge ({m}, {i}, {j}) out of range")));
            }
            if i == j {
                return Err(invalid(format!("edge ({m}, {i}, {j}) is a self-loop")));
            }
            let a = &mut layers[m];
            if a[i * n_nodes + j] != 0 {
                return Err(invalid(format!("duplicate edge ({m}, {i}, {j})")));
            }
            a[i * n_nodes + j] = 1;
            a[j * n_nodes + i] = 1;
        }
        Self::new(n_nodes, layers, None)
    }

    pub fn with_covariates(self, covariates: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.n_nodes, self.layers, Some(covariates))
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.layers.len()
    }

    #[inline]
    pub fn edge(&self, m: usize, i: usize, j: usize) -> u8 {
        self.layers[m][i * self.n_nodes + j]
    }

    #[inline]
    pub fn covariate(&self, m: usize, i: usize, j: usize) -> f64 {
        match &self.covariates {
            Some(c) => c[m][i * self.n_nodes + j],
            None => 1.0,
        }
    }

    pub fn has_covariates(&self) -> bool {
        self.covariates.is_some()
    }

    /// Dense row-major adjacency of sample `m`.
    pub fn layer(&self, m: usize) -> &[u8] {
        &self.layers[m]
    }

    pub fn covariate_layer(&self, m: usize) -> Option<&[f64]> {
        self.covariates.as_ref().map(|c| c[m].as_slice())
    }

    /// Undirected edges of sample `m` as `(i, j)` with `i < j`.
    pub fn edges(&self, m: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        pairs(self.n_nodes).filter(move |&(i, j)| self.edge(m, i, j) == 1)
    }

    /// Elementwise mean of the adjacency matrices.
    pub fn mean_adjacency(&self) -> Vec<f64> {
        let nn = self.n_nodes * self.n_nodes;
        let mut out = vec![0.0; nn];
        for a in &self.layers {
            for (o, &v) in out.iter_mut().zip(a) {
                *o += f64::from(v);
            }
        }
        let m = self.n_samples() as f64;
        out.iter_mut().for_each(|v| *v /= m);
        out
    }

    /// Degrees in the aggregated network (an edge is present if it appears in any sample).
    pub fn aggregated_degrees(&self) -> Vec<usize> {
        let n = self.n_nodes;
        let mut deg = vec![0; n];
        for (i, j) in pairs(n) {
            if self.layers.iter().any(|a| a[i * n + j] == 1) {
                deg[i] += 1;
                deg[j] += 1;
            }
        }
        deg
    }

    /// Restricts every sample to `nodes` (in the given order).
    pub fn induced(&self, nodes: &[usize]) -> Result<Self> {
        let n = self.n_nodes;
        if nodes.iter().any(|&v| v >= n) {
            return Err(invalid("induced subgraph node out of range"));
        }
        let k = nodes.len();
        let pick = |src: &[u8]| {
            let mut out = vec![0u8; k * k];
            for (a, &u) in nodes.iter().enumerate() {
                for (b, &v) in nodes.iter().enumerate() {
                    out[a * k + b] = src[u * n + v];
                }
            }
            out
        };
        let layers = self.layers.iter().map(|a| pick(a)).collect();
        let covariates = self.covariates.as_ref().map(|cs| {
            cs.iter()
                .map(|src| {
                    let mut out = vec![0.0; k * k];
                    for (a, &u) in nodes.iter().enumerate() {
                        for (b, &v) in nodes.iter().enumerate() {
                            out[a * k + b] = src[u * n + v];
                        }
                    }
                    out
                })
                .collect()
        });
        Self::new(k, layers, covariates)
    }

    /// Keeps only the listed samples, in the given order.
    pub fn select_samples(&self, samples: &[usize]) -> Result<Self> {
        if samples.iter().any(|&m| m >= self.n_samples()) {
            return Err(invalid("sample index out of range"));
        }
        let layers = samples.iter().map(|&m| self.layers[m].clone()).collect();
        let covariates = self
            .covariates
            .as_ref()
            .map(|c| samples.iter().map(|&m| c[m].clone()).collect());
        Self::new(self.n_nodes, layers, covariates)
    }
}

/// Row-stochastic `N x K` matrix of soft community assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipProbs {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl MembershipProbs {
    pub const ROW_TOL: f64 = 1e-12;

    pub fn new(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("membership needs at least one community"));
        }
        if data.len() != n * k {
            return Err(invalid(format!(
                "membership has {} entries, expected {}",
                data.len(),
                n * k
            )));
        }
        for i in 0..n {
            let row = &data[i * k..(i + 1) * k];
            if row.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(invalid(format!("membership row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_TOL {
                return Err(invalid(format!("membership row {i} sums to {s}")));
            }
        }
        Ok(Self { n, k, data })
    }

    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            data: vec![1.0 / k as f64; n * k],
        }
    }

    /// One-hot rows from hard labels.
    pub fn one_hot(labels: &HardMembership) -> Self {
        let (n, k) = (labels.len(), labels.k());
        let mut data = vec![0.0; n * k];
        for (i, &z) in labels.labels().iter().enumerate() {
            data[i * k + z] = 1.0;
        }
        Self { n, k, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, q: usize) -> f64 {
        self.data[i * self.k + q]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Replaces row `i`; the caller guarantees it lies on the simplex.
    pub(crate) fn set_row(&mut self, i: usize, row: &[f64]) {
        self.data[i * self.k..(i + 1) * self.k].copy_from_slice(row);
    }

    /// Row-wise argmax; ties go to the lowest community index.
    pub fn hard_labels(&self) -> HardMembership {
        let labels = (0..self.n)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for q in 1..self.k {
                    if row[q] > row[best] {
                        best = q;
                    }
                }
                best
            })
            .collect();
        HardMembership { labels, k: self.k }
    }

    /// `max_i max_q |a_iq - b_iq|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    /// Applies the community relabeling `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.n {
            for q in 0..self.k {
                data[i * self.k + perm[q]] = self.get(i, q);
            }
        }
        Self {
            n: self.n,
            k: self.k,
            data,
        }
    }
}

/// Hard community labels, 0-based, each in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardMembership {
    labels: Vec<usize>,
    k: usize,
}

impl HardMembership {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("labels need at least one community"));
        }
        if let Some((i, &z)) = labels.iter().enumerate().find(|(_, &z)| z >= k) {
            return Err(invalid(format!("node {i} has label {z}, expected < {k}")));
        }
        Ok(Self { labels, k })
    }

    /// Infers `k` as one more than the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(1, |z| z + 1);
        Self::new(labels, k)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &z in &self.labels {
            s[z] += 1;
        }
        s
    }

    /// Communities without any member.
    pub fn empty_communities(&self) -> Vec<usize> {
        self.sizes()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0)
            .map(|(q, _)| q)
            .collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            labels: self.labels.iter().map(|&z| perm[z]).collect(),
            k: self.k,
        }
    }
}

/// Symmetric `K x K` logistic block coefficients and per-community correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    k: usize,
    beta: Vec<f64>,
    rho: Vec<f64>,
}

impl BlockParams {
    pub fn new(k: usize, beta: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("params need at least one community"));
        }
        if beta.len() != k * k || rho.len() != k {
            return Err(invalid("beta must be k x k and rho length k"));
        }
        for q in 0..k {
            for l in 0..k {
                let b = beta[q * k + l];
                if !b.is_finite() {
                    return Err(invalid(format!("beta[{q}][{l}] is not finite")));
                }
                if b != beta[l * k + q] {
                    return Err(invalid(format!("beta is not symmetric at ({q}, {l})")));
                }
            }
        }
        if let Some(r) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(invalid(format!("rho {r} outside [0, 1]")));
        }
        Ok(Self { k, beta, rho })
    }

    /// All-zero coefficients and correlations.
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            beta: vec![0.0; k * k],
            rho: vec![0.0; k],
        }
    }

    /// Builds from nested rows; convenient for tests and configs.
    pub fn from_rows(beta: &[Vec<f64>], rho: &[f64]) -> Result<Self> {
        let k = beta.len();
        if beta.iter().any(|r| r.len() != k) {
            return Err(invalid("beta must be square"));
        }
        Self::new(k, beta.concat(), rho.to_vec())
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn beta(&self, q: usize, l: usize) -> f64 {
        self.beta[q * self.k + l]
    }

    #[inline]
    pub fn rho(&self, q: usize) -> f64 {
        self.rho[q]
    }

    pub fn beta_matrix(&self) -> &[f64] {
        &self.beta
    }

    pub fn rho_vec(&self) -> &[f64] {
        &self.rho
    }

    pub fn set_beta(&mut self, q: usize, l: usize, value: f64) {
        self.beta[q * self.k + l] = value;
        self.beta[l * self.k + q] = value;
    }

    /// Sets `rho_q`, clamped to `[0, 1]`.
    pub fn set_rho(&mut self, q: usize, value: f64) {
        self.rho[q] = value.clamp(0.0, 1.0);
    }

    pub fn with_rho(mut self, rho: &[f64]) -> Result<Self> {
        if rho.len() != self.k || rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("rho must have length k with entries in [0, 1]"));
        }
        self.rho.copy_from_slice(rho);
        Ok(self)
    }

    /// Applies the community relabeling `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut beta = vec![0.0; k * k];
        let mut rho = vec![0.0; k];
        for q in 0..k {
            rho[perm[q]] = self.rho[q];
            for l in 0..k {
                beta[perm[q] * k + perm[l]] = self.beta(q, l);
            }
        }
        Self { k, beta, rho }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Bernoulli log-probability of `y` under mean `logistic(eta)`.
#[inline]
pub fn bernoulli_logit_loglik(y: u8, eta: f64) -> f64 {
    if y == 1 {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

/// Block mean `exp(beta * x) / (1 + exp(beta * x))`.
pub fn block_mean(beta: f64, x: f64) -> Result<f64> {
    if !beta.is_finite() || !x.is_finite() {
        return Err(invalid(format!("block_mean: non-finite input ({beta}, {x})")));
    }
    Ok(logistic(beta * x))
}

/// `(y - mu) / sqrt(mu (1 - mu))` with `mu` clamped to `[MU_EPS, 1 - MU_EPS]`.
pub fn standardize_edge(y: u8, mu: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid(format!("standardize_edge: mean {mu} outside [0, 1]")));
    }
    if y > 1 {
        return Err(invalid(format!("standardize_edge: edge value {y} is not binary")));
    }
    Ok(standardize_unchecked(y, mu))
}

#[inline]
pub(crate) fn standardize_unchecked(y: u8, mu: f64) -> f64 {
    let mu = mu.clamp(MU_EPS, 1.0 - MU_EPS);
    (f64::from(y) - mu) / (mu * (1.0 - mu)).sqrt()
}
