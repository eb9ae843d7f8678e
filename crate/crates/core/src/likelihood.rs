//! Independent log-likelihood, within-community concordance, and the
//! Bahadur-approximate likelihood built from them.
//!
//! All evaluations accept soft memberships: an edge `(i, j)` enters block
//! `(q, l)` with weight `alpha_iq * alpha_jl`, and the concordance of
//! community `k` weights edge `(i, j)` by `alpha_ik * alpha_jk`. One-hot rows
//! recover the hard-label forms exactly.
//!
//! The pairwise concordance of community `k` in sample `m` is evaluated as
//! `S = T^2 - Q` with `T = sum_e w_e yhat_e` and `Q = sum_e (w_e yhat_e)^2`,
//! which equals the sum over ordered pairs of distinct edges in `O(N^2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{
    bernoulli_logit_loglik, logistic, pairs, standardize_unchecked, BlockParams, MembershipProbs,
    MultiNetwork,
};

/// Which Bahadur interaction terms enter the approximate likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationOrder {
    /// Marginal part only; the variational-EM objective.
    None,
    Second,
    Fourth,
}

impl CorrelationOrder {
    pub fn uses_correlation(self) -> bool {
        self != CorrelationOrder::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParts {
    pub marginal: f64,
    pub correlation: f64,
    pub total: f64,
}

/// Per-sample, per-community concordance sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcordanceCache {
    k: usize,
    /// `sum_e w_e yhat_e`
    pub(crate) t: Vec<f64>,
    /// `sum_e (w_e yhat_e)^2`
    pub(crate) q: Vec<f64>,
    /// `sum_e (w_e yhat_e)^4`
    pub(crate) p: Vec<f64>,
}

impl ConcordanceCache {
    #[inline]
    fn idx(&self, m: usize, k: usize) -> usize {
        m * self.k + k
    }

    /// `S_mk = T_mk^2 - Q_mk`.
    pub fn concordance(&self, m: usize, k: usize) -> f64 {
        let ix = self.idx(m, k);
        self.t[ix] * self.t[ix] - self.q[ix]
    }

    pub fn linear(&self, m: usize, k: usize) -> f64 {
        self.t[self.idx(m, k)]
    }

    pub fn squares(&self, m: usize, k: usize) -> f64 {
        self.q[self.idx(m, k)]
    }
}

/// Contribution of community `k` to the per-sample log argument.
#[inline]
pub(crate) fn community_term(t: f64, q: f64, p4: f64, rho: f64, order: CorrelationOrder) -> f64 {
    let s = t * t - q;
    match order {
        CorrelationOrder::None => 0.0,
        CorrelationOrder::Second => 0.5 * rho * s.max(0.0),
        CorrelationOrder::Fourth => {
            let second = 0.5 * rho * s.max(0.0);
            // sum_{s<t} (g_s g_t)^2 = ((sum g^2)^2 - sum g^4) / 2
            let sq_pairs = 0.5 * (q * q - p4);
            let half = 0.5 * rho * s;
            second + (half * half - rho * rho * sq_pairs).max(0.0)
        }
    }
}

/// Log of a per-sample argument, clamped below at 1.
#[inline]
pub(crate) fn log_argument(arg: f64) -> f64 {
    arg.max(1.0).ln()
}

/// Parameter-dependent per-edge tables, shared by all evaluations at fixed
/// `BlockParams`.
#[derive(Debug, Clone)]
pub struct EdgeTables {
    n: usize,
    m: usize,
    k: usize,
    nblocks: usize,
    /// `[m][i * n + j][block]` Bernoulli log-probability of the observed edge.
    loglik: Vec<f64>,
    /// `[m][k][i * n + j]` edge standardized by the within-community mean of `k`;
    /// empty when correlation terms are not needed.
    yhat: Vec<f64>,
}

#[inline]
pub(crate) fn block_index(k: usize, q: usize, l: usize) -> usize {
    let (a, b) = if q <= l { (q, l) } else { (l, q) };
    a * k - a * (a + 1) / 2 + b
}

impl EdgeTables {
    pub fn new(net: &MultiNetwork, params: &BlockParams, with_yhat: bool) -> Self {
        let (n, k) = (net.n_nodes(), params.k());
        let nblocks = k * (k + 1) / 2;
        let nn = n * n;
        let blocks: Vec<(usize, usize)> = (0..k)
            .flat_map(|q| (q..k).map(move |l| (q, l)))
            .collect();
        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..net.n_samples())
            .into_par_iter()
            .map(|m| {
                let mut ll = vec![0.0; nn * nblocks];
                let mut yh = if with_yhat { vec![0.0; k * nn] } else { Vec::new() };
                for (i, j) in pairs(n) {
                    let y = net.edge(m, i, j);
                    let x = net.covariate(m, i, j);
                    for (b, &(q, l)) in blocks.iter().enumerate() {
                        let v = bernoulli_logit_loglik(y, params.beta(q, l) * x);
                        ll[(i * n + j) * nblocks + b] = v;
                        ll[(j * n + i) * nblocks + b] = v;
                    }
                    if with_yhat {
                        for c in 0..k {
                            let mu = logistic(params.beta(c, c) * x);
                            let v = standardize_unchecked(y, mu);
                            yh[c * nn + i * n + j] = v;
                            yh[c * nn + j * n + i] = v;
                        }
                    }
                }
                (ll, yh)
            })
            .collect();
        let mut loglik = Vec::with_capacity(net.n_samples() * nn * nblocks);
        let mut yhat = Vec::with_capacity(if with_yhat { net.n_samples() * k * nn } else { 0 });
        for (ll, yh) in per_sample {
            loglik.extend_from_slice(&ll);
            yhat.extend_from_slice(&yh);
        }
        Self {
            n,
            m: net.n_samples(),
            k,
            nblocks,
            loglik,
            yhat,
        }
    }

    pub fn has_yhat(&self) -> bool {
        !self.yhat.is_empty()
    }

    #[inline]
    fn ll(&self, m: usize, i: usize, j: usize, block: usize) -> f64 {
        self.loglik[(m * self.n * self.n + i * self.n + j) * self.nblocks + block]
    }

    #[inline]
    pub(crate) fn yhat_row(&self, m: usize, c: usize, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        let start = m * self.k * nn + c * nn + i * self.n;
        &self.yhat[start..start + self.n]
    }

    /// `(1/M) sum_m sum_{i<j} sum_{q,l} alpha_iq alpha_jl loglik`.
    pub fn marginal(&self, alpha: &MembershipProbs) -> f64 {
        let (n, k) = (self.n, self.k);
        let per_sample: Vec<f64> = (0..self.m)
            .into_par_iter()
            .map(|m| {
                let mut acc = 0.0;
                for (i, j) in pairs(n) {
                    let (ai, aj) = (alpha.row(i), alpha.row(j));
                    let mut s = 0.0;
                    for q in 0..k {
                        if ai[q] == 0.0 {
                            continue;
                        }
                        for l in 0..k {
                            s += ai[q] * aj[l] * self.ll(m, i, j, block_index(k, q, l));
                        }
                    }
                    acc += s;
                }
                acc
            })
            .collect();
        per_sample.iter().sum::<f64>() / self.m as f64
    }

    /// Concordance sums for every sample and community.
    pub fn concordance_cache(&self, alpha: &MembershipProbs) -> ConcordanceCache {
        assert!(self.has_yhat(), "concordance needs standardized edge tables");
        let (n, k) = (self.n, self.k);
        let per_sample: Vec<Vec<[f64; 3]>> = (0..self.m)
            .into_par_iter()
            .map(|m| {
                (0..k)
                    .map(|c| {
                        let (mut t, mut q, mut p) = (0.0, 0.0, 0.0);
                        for i in 0..n {
                            let wi = alpha.get(i, c);
                            if wi == 0.0 {
                                continue;
                            }
                            let row = self.yhat_row(m, c, i);
                            for (j, &y) in row.iter().enumerate().skip(i + 1) {
                                let g = wi * alpha.get(j, c) * y;
                                let g2 = g * g;
                                t += g;
                                q += g2;
                                p += g2 * g2;
                            }
                        }
                        [t, q, p]
                    })
                    .collect()
            })
            .collect();
        let mut cache = ConcordanceCache {
            k,
            t: Vec::with_capacity(self.m * k),
            q: Vec::with_capacity(self.m * k),
            p: Vec::with_capacity(self.m * k),
        };
        for row in per_sample {
            for [t, q, p] in row {
                cache.t.push(t);
                cache.q.push(q);
                cache.p.push(p);
            }
        }
        cache
    }

    /// `(1/M) sum_m log(1 + sum_k term_mk)` from cached sums.
    pub fn correlation_from_cache(
        &self,
        cache: &ConcordanceCache,
        params: &BlockParams,
        order: CorrelationOrder,
    ) -> f64 {
        if !order.uses_correlation() {
            return 0.0;
        }
        let mut acc = 0.0;
        for m in 0..self.m {
            let mut arg = 1.0;
            for c in 0..self.k {
                let ix = cache.idx(m, c);
                arg += community_term(cache.t[ix], cache.q[ix], cache.p[ix], params.rho(c), order);
            }
            acc += log_argument(arg);
        }
        acc / self.m as f64
    }

    /// Sums over edges touching node `i`, used for single-node reassignment.
    pub(crate) fn node_stats(&self, alpha: &MembershipProbs, i: usize, with_corr: bool) -> NodeStats {
        let (n, k, mm) = (self.n, self.k, self.m);
        let mut marginal = vec![0.0; k];
        let mut lin = if with_corr { vec![0.0; mm * k] } else { Vec::new() };
        let mut sq = lin.clone();
        let mut quart = lin.clone();
        let bidx: Vec<usize> = (0..k * k).map(|ql| block_index(k, ql / k, ql % k)).collect();
        for m in 0..mm {
            let base = (m * n * n + i * n) * self.nblocks;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let aj = alpha.row(j);
                let cell = &self.loglik[base + j * self.nblocks..base + (j + 1) * self.nblocks];
                for (q, mq) in marginal.iter_mut().enumerate() {
                    let row = &bidx[q * k..(q + 1) * k];
                    *mq += aj.iter().zip(row).map(|(&a, &b)| a * cell[b]).sum::<f64>();
                }
            }
            if with_corr {
                for c in 0..k {
                    let row = self.yhat_row(m, c, i);
                    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
                    for (j, &y) in row.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        let g = alpha.get(j, c) * y;
                        let g2 = g * g;
                        a += g;
                        b += g2;
                        d += g2 * g2;
                    }
                    lin[m * k + c] = a;
                    sq[m * k + c] = b;
                    quart[m * k + c] = d;
                }
            }
        }
        NodeStats {
            marginal,
            lin,
            sq,
            quart,
        }
    }

    /// Approximate log-likelihood contributions (up to terms not involving
    /// node `i`) when node `i` is forced into each community in turn.
    ///
    /// `cache` must reflect `alpha`, including row `i`.
    pub(crate) fn reassignment_scores(
        &self,
        alpha: &MembershipProbs,
        cache: Option<&ConcordanceCache>,
        params: &BlockParams,
        order: CorrelationOrder,
        i: usize,
        stats: &NodeStats,
    ) -> Vec<f64> {
        let k = self.k;
        let inv_m = 1.0 / self.m as f64;
        let mut scores: Vec<f64> = stats.marginal.iter().map(|v| v * inv_m).collect();
        if !order.uses_correlation() {
            return scores;
        }
        let cache = cache.expect("correlation scores need a concordance cache");
        let ai = alpha.row(i);
        let mut without = vec![[0.0f64; 3]; k];
        for (q, score) in scores.iter_mut().enumerate() {
            let mut acc = 0.0;
            for m in 0..self.m {
                let mut base_arg = 1.0;
                for (c, w) in without.iter_mut().enumerate() {
                    let ix = cache.idx(m, c);
                    let s = m * k + c;
                    let a = ai[c];
                    let a2 = a * a;
                    *w = [
                        cache.t[ix] - a * stats.lin[s],
                        cache.q[ix] - a2 * stats.sq[s],
                        cache.p[ix] - a2 * a2 * stats.quart[s],
                    ];
                    if c != q {
                        base_arg += community_term(w[0], w[1], w[2], params.rho(c), order);
                    }
                }
                let s = m * k + q;
                let [t, sqs, p4] = without[q];
                base_arg += community_term(
                    t + stats.lin[s],
                    sqs + stats.sq[s],
                    p4 + stats.quart[s],
                    params.rho(q),
                    order,
                );
                acc += log_argument(base_arg);
            }
            *score += acc * inv_m;
        }
        scores
    }
}

/// Per-node edge sums; `lin`, `sq`, `quart` are `[m][k]`.
#[derive(Debug, Clone)]
pub(crate) struct NodeStats {
    /// `sum_m sum_j sum_l alpha_jl loglik(q, l)` per community `q` (not divided by `M`).
    pub marginal: Vec<f64>,
    pub lin: Vec<f64>,
    pub sq: Vec<f64>,
    pub quart: Vec<f64>,
}

fn check_dims(net: &MultiNetwork, alpha: &MembershipProbs, params: &BlockParams) -> Result<()> {
    if alpha.n() != net.n_nodes() {
        return Err(invalid(format!(
            "membership has {} rows for {} nodes",
            alpha.n(),
            net.n_nodes()
        )));
    }
    if alpha.k() != params.k() {
        return Err(invalid(format!(
            "membership has {} communities, params have {}",
            alpha.k(),
            params.k()
        )));
    }
    Ok(())
}

/// Soft-weighted independent log-likelihood `log L_ind`.
pub fn log_lik_independent(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    params: &BlockParams,
) -> Result<f64> {
    check_dims(net, alpha, params)?;
    Ok(EdgeTables::new(net, params, false).marginal(alpha))
}

/// Concordance `S_mk` of community `k` in sample `m`.
pub fn concordance_stat(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    params: &BlockParams,
    m: usize,
    k: usize,
) -> Result<f64> {
    check_dims(net, alpha, params)?;
    if m >= net.n_samples() || k >= params.k() {
        return Err(invalid(format!("concordance index (m={m}, k={k}) out of range")));
    }
    let tables = EdgeTables::new(net, params, true);
    Ok(tables.concordance_cache(alpha).concordance(m, k))
}

/// Correlation part `log L_cor`; zero for [`CorrelationOrder::None`].
pub fn log_lik_correlation(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    params: &BlockParams,
    order: CorrelationOrder,
) -> Result<f64> {
    check_dims(net, alpha, params)?;
    if !order.uses_correlation() {
        return Ok(0.0);
    }
    let tables = EdgeTables::new(net, params, true);
    let cache = tables.concordance_cache(alpha);
    Ok(tables.correlation_from_cache(&cache, params, order))
}

/// Approximate log-likelihood `log L~ = log L_ind + log L_cor`.
pub fn approx_log_lik(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    params: &BlockParams,
    order: CorrelationOrder,
) -> Result<LikelihoodParts> {
    check_dims(net, alpha, params)?;
    let tables = EdgeTables::new(net, params, order.uses_correlation());
    Ok(evaluate(&tables, alpha, params, order))
}

pub(crate) fn evaluate(
    tables: &EdgeTables,
    alpha: &MembershipProbs,
    params: &BlockParams,
    order: CorrelationOrder,
) -> LikelihoodParts {
    let marginal = tables.marginal(alpha);
    let correlation = if order.uses_correlation() {
        let cache = tables.concordance_cache(alpha);
        tables.correlation_from_cache(&cache, params, order)
    } else {
        0.0
    };
    LikelihoodParts {
        marginal,
        correlation,
        total: marginal + correlation,
    }
}

/// `log L~(Y | alpha_-i, Z_iq = 1) - log L~(Y | alpha_-i, Z_ib = 1)`, computed
/// from the edges touching node `i` only.
#[allow(clippy::too_many_arguments)]
pub fn bayes_factor_log(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    params: &BlockParams,
    i: usize,
    q: usize,
    b: usize,
    order: CorrelationOrder,
) -> Result<f64> {
    check_dims(net, alpha, params)?;
    if i >= net.n_nodes() || q >= params.k() || b >= params.k() {
        return Err(invalid(format!("bayes factor index (i={i}, q={q}, b={b}) out of range")));
    }
    if q == b {
        return Ok(0.0);
    }
    let tables = EdgeTables::new(net, params, order.uses_correlation());
    let cache = order
        .uses_correlation()
        .then(|| tables.concordance_cache(alpha));
    let stats = tables.node_stats(alpha, i, order.uses_correlation());
    let scores = tables.reassignment_scores(alpha, cache.as_ref(), params, order, i, &stats);
    Ok(scores[q] - scores[b])
}
