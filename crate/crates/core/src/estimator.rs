//! Alternating block-parameter updates and Bayes-factor membership updates
//! that maximize the approximate likelihood. With the correlation terms off
//! the same loop is variational EM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::likelihood::{evaluate, ConcordanceCache, CorrelationOrder, EdgeTables, LikelihoodParts};
use crate::model::{bernoulli_logit_loglik, logistic, pairs, BlockParams, HardMembership, MembershipProbs, MultiNetwork};
use crate::spectral::initial_memberships;

/// Bound on block coefficients.
pub const BETA_BOUND: f64 = 12.0;
const MIN_BLOCK_WEIGHT: f64 = 1e-8;
const NEWTON_MAX_ITERS: usize = 100;
const MAX_HALVINGS: usize = 30;
const NEWTON_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateSchedule {
    /// Every row is updated from the previous iterate.
    Jacobi,
    /// Rows are updated in ascending node order, each seeing earlier updates.
    GaussSeidel,
}

/// Working correlation for the block-coefficient estimating equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkingCorrelation {
    Independent,
    /// Exchangeable within each (sample, diagonal block), using the current `rho_k`.
    Exchangeable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub k: usize,
    pub order: CorrelationOrder,
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub n_inits: usize,
    pub schedule: UpdateSchedule,
    pub working_correlation: WorkingCorrelation,
    /// Off-community probability of the smoothed spectral initializations.
    pub init_smoothing: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 2,
            order: CorrelationOrder::Second,
            epsilon: 1e-4,
            max_iters: 200,
            seed: 0,
            n_inits: 5,
            schedule: UpdateSchedule::GaussSeidel,
            working_correlation: WorkingCorrelation::Independent,
            init_smoothing: 0.1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.n_inits == 0 {
            return Err(invalid("n_inits must be at least 1"));
        }
        if !(0.0..1.0 / self.k as f64).contains(&self.init_smoothing) {
            return Err(invalid("init_smoothing must lie in [0, 1/k)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub total: f64,
    pub max_change: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Objective at the initialization (after the first parameter update).
    pub initial_total: f64,
    /// Some block coefficient hit the `[-12, 12]` bound.
    pub clamped_beta: bool,
    /// Block updates skipped for lack of weight (previous value kept).
    pub degenerate_blocks: usize,
    /// Correlation updates skipped for lack of pair weight.
    pub degenerate_rho: usize,
    /// Membership rows that could not be updated and were carried over.
    pub collapsed_rows: usize,
    /// Communities without members at the end.
    pub empty_communities: Vec<usize>,
    /// `|log L_cor| / |log L_ind|` at the end.
    pub correlation_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: MembershipProbs,
    pub labels: HardMembership,
    pub params: BlockParams,
    pub log_lik: LikelihoodParts,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub init_index: usize,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEstimate {
    pub value: f64,
    /// The maximizer lies on (or beyond) the coefficient bound.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEstimate {
    pub value: f64,
    pub degenerate: bool,
}

/// Weighted cells of one block; every sample shares the pair weights.
struct BlockData<'a> {
    net: &'a MultiNetwork,
    /// `(i * n + j, weight)` for pairs with positive weight.
    cells: Vec<(usize, f64)>,
    total_weight: f64,
    x_max: f64,
}

impl BlockData<'_> {
    /// `(covariate, edge, weight)` of sample `m`.
    fn sample(&self, m: usize) -> impl Iterator<Item = (f64, u8, f64)> + '_ {
        let layer = self.net.layer(m);
        let cov = self.net.covariate_layer(m);
        self.cells
            .iter()
            .map(move |&(c, w)| (cov.map_or(1.0, |x| x[c]), layer[c], w))
    }

    fn entries(&self) -> impl Iterator<Item = (f64, u8, f64)> + '_ {
        (0..self.net.n_samples()).flat_map(move |m| self.sample(m))
    }
}

fn block_data<'a>(net: &'a MultiNetwork, alpha: &MembershipProbs, q: usize, l: usize) -> BlockData<'a> {
    let n = net.n_nodes();
    let cells: Vec<(usize, f64)> = pairs(n)
        .map(|(i, j)| {
            let w = if q == l {
                alpha.get(i, q) * alpha.get(j, q)
            } else {
                alpha.get(i, q) * alpha.get(j, l) + alpha.get(i, l) * alpha.get(j, q)
            };
            (i * n + j, w)
        })
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let total_weight = net.n_samples() as f64 * cells.iter().map(|c| c.1).sum::<f64>();
    let x_max = if net.has_covariates() {
        (0..net.n_samples())
            .flat_map(|m| {
                let x = net.covariate_layer(m).expect("covariates present");
                cells.iter().map(move |&(c, _)| x[c].abs())
            })
            .fold(0.0, f64::max)
    } else {
        1.0
    };
    BlockData {
        net,
        cells,
        total_weight,
        x_max,
    }
}

fn weighted_objective(data: &BlockData, beta: f64) -> f64 {
    data.entries()
        .map(|(x, y, w)| w * bernoulli_logit_loglik(y, beta * x))
        .sum()
}

/// First and second derivatives of the weighted objective (the second negated).
fn weighted_derivs(data: &BlockData, beta: f64) -> (f64, f64) {
    let (mut grad, mut info) = (0.0, 0.0);
    for (x, y, w) in data.entries() {
        let mu = logistic(beta * x);
        grad += w * x * (f64::from(y) - mu);
        info += w * x * x * mu * (1.0 - mu);
    }
    (grad, info)
}

/// Maximizes the weighted Bernoulli log-likelihood of block `(q, l)` over
/// `beta` (independent working correlation).
pub fn m_step_beta(net: &MultiNetwork, alpha: &MembershipProbs, q: usize, l: usize) -> Result<BetaEstimate> {
    m_step_beta_with(net, alpha, q, l, WorkingCorrelation::Independent, 0.0, 0.0)
}

/// Block update under the chosen working correlation, starting from `start`.
pub fn m_step_beta_with(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    q: usize,
    l: usize,
    working: WorkingCorrelation,
    rho: f64,
    start: f64,
) -> Result<BetaEstimate> {
    if alpha.n() != net.n_nodes() || q >= alpha.k() || l >= alpha.k() {
        return Err(invalid(format!("block ({q}, {l}) or membership shape out of range")));
    }
    let data = block_data(net, alpha, q, l);
    if data.total_weight < MIN_BLOCK_WEIGHT {
        return Err(Error::DegenerateBlock {
            q,
            l,
            weight: data.total_weight,
        });
    }
    let rho = if q == l && working == WorkingCorrelation::Exchangeable {
        rho.clamp(0.0, 0.99)
    } else {
        0.0
    };
    if rho > 0.0 {
        return Ok(gee_exchangeable(&data, rho, start));
    }
    if !net.has_covariates() {
        return Ok(closed_form(&data));
    }
    Ok(newton(&data, start))
}

/// `x == 1` everywhere: logit of the weighted edge mean.
fn closed_form(data: &BlockData) -> BetaEstimate {
    let ones: f64 = data
        .entries()
        .map(|(_, y, w)| f64::from(y) * w)
        .sum();
    let mean = ones / data.total_weight;
    if mean <= 0.0 {
        return BetaEstimate { value: -BETA_BOUND, clamped: true };
    }
    if mean >= 1.0 {
        return BetaEstimate { value: BETA_BOUND, clamped: true };
    }
    let value = (mean / (1.0 - mean)).ln();
    if value.abs() >= BETA_BOUND {
        BetaEstimate { value: value.clamp(-BETA_BOUND, BETA_BOUND), clamped: true }
    } else {
        BetaEstimate { value, clamped: false }
    }
}

/// Damped Newton ascent on the weighted objective, confined to the bound.
///
/// A step is halved while it decreases the objective. Steps too short for
/// the curvature to change appreciably (`|step| * max|x| <= 0.01`) cannot
/// overshoot and skip the objective check.
fn newton(data: &BlockData, start: f64) -> BetaEstimate {
    let mut beta = start.clamp(-BETA_BOUND, BETA_BOUND);
    for _ in 0..NEWTON_MAX_ITERS {
        let (grad, info) = weighted_derivs(data, beta);
        let mut step = if info > 1e-300 { grad / info } else { grad.signum() * BETA_BOUND };
        if !step.is_finite() {
            break;
        }
        if step.abs() * data.x_max <= 0.01 {
            beta = (beta + step).clamp(-BETA_BOUND, BETA_BOUND);
            if step.abs() < NEWTON_TOL {
                break;
            }
            continue;
        }
        let obj = weighted_objective(data, beta);
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = (beta + step).clamp(-BETA_BOUND, BETA_BOUND);
            if cand == beta {
                break;
            }
            // Near the optimum, differences drown in summation rounding.
            if weighted_objective(data, cand) >= obj - 1e-12 * obj.abs().max(1.0) {
                beta = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    BetaEstimate {
        value: beta,
        clamped: beta.abs() >= BETA_BOUND,
    }
}

/// Fisher scoring on the exchangeable-working-correlation estimating equation
/// with each sample as a cluster. Membership weights enter through `sqrt(w)`
/// scaling of the standardized residuals and derivatives.
fn gee_exchangeable(data: &BlockData, rho: f64, start: f64) -> BetaEstimate {
    let mut beta = start.clamp(-BETA_BOUND, BETA_BOUND);
    for _ in 0..NEWTON_MAX_ITERS {
        let (mut score, mut info) = (0.0, 0.0);
        let n_eff = data.total_weight / data.net.n_samples() as f64;
        for m in 0..data.net.n_samples() {
            if n_eff <= 0.0 {
                continue;
            }
            let c = rho / (1.0 + (n_eff - 1.0).max(0.0) * rho);
            let (mut sdr, mut sdd, mut sd, mut sr) = (0.0, 0.0, 0.0, 0.0);
            for (x, y, w) in data.sample(m) {
                let mu = logistic(beta * x).clamp(1e-12, 1.0 - 1e-12);
                let v = mu * (1.0 - mu);
                let sw = w.sqrt();
                let d = sw * x * v.sqrt();
                let r = sw * (f64::from(y) - mu) / v.sqrt();
                sdr += d * r;
                sdd += d * d;
                sd += d;
                sr += r;
            }
            score += (sdr - c * sd * sr) / (1.0 - rho);
            info += (sdd - c * sd * sd) / (1.0 - rho);
        }
        if !(info > 1e-300) {
            break;
        }
        let next = (beta + score / info).clamp(-BETA_BOUND, BETA_BOUND);
        let done = (next - beta).abs() < 1e-10;
        beta = next;
        if done {
            break;
        }
    }
    BetaEstimate {
        value: beta,
        clamped: beta.abs() >= BETA_BOUND,
    }
}

/// Moment estimate of the average within-community correlation of community `k`,
/// clamped to `[0, 1]`.
pub fn m_step_rho(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    params: &BlockParams,
    k: usize,
) -> Result<RhoEstimate> {
    if alpha.n() != net.n_nodes() || alpha.k() != params.k() || k >= params.k() {
        return Err(invalid("rho update: shapes or community index out of range"));
    }
    let tables = EdgeTables::new(net, params, true);
    let cache = tables.concordance_cache(alpha);
    Ok(rho_from_cache(net, alpha, &cache, k))
}

fn rho_from_cache(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    cache: &ConcordanceCache,
    k: usize,
) -> RhoEstimate {
    let (mut w1, mut w2) = (0.0, 0.0);
    for (i, j) in pairs(net.n_nodes()) {
        let w = alpha.get(i, k) * alpha.get(j, k);
        w1 += w;
        w2 += w * w;
    }
    let m = net.n_samples() as f64;
    let denom = m * (w1 * w1 - w2);
    if denom < MIN_BLOCK_WEIGHT {
        return RhoEstimate {
            value: 0.0,
            degenerate: true,
        };
    }
    let num: f64 = (0..net.n_samples()).map(|s| cache.concordance(s, k)).sum();
    RhoEstimate {
        value: (num / denom).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Membership update: `alpha_iq <- alpha_iq * L~(Y | alpha_-i, Z_iq = 1)`,
/// normalized per row in the log domain.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepOutcome {
    pub alpha: MembershipProbs,
    pub collapsed_rows: usize,
}

pub fn e_step(
    net: &MultiNetwork,
    alpha_prev: &MembershipProbs,
    params: &BlockParams,
    cfg: &FitConfig,
) -> Result<EStepOutcome> {
    if alpha_prev.n() != net.n_nodes() || alpha_prev.k() != params.k() {
        return Err(invalid("e-step: membership shape does not match network or params"));
    }
    let tables = EdgeTables::new(net, params, cfg.order.uses_correlation());
    Ok(e_step_tables(&tables, alpha_prev, params, cfg.order, cfg.schedule))
}

/// New row from the previous row and per-community log scores; `None` if
/// the row cannot be normalized.
fn updated_row(prev: &[f64], scores: &[f64]) -> Option<Vec<f64>> {
    let logs: Vec<f64> = prev
        .iter()
        .zip(scores)
        .map(|(&a, &s)| if a > 0.0 { a.ln() + s } else { f64::NEG_INFINITY })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() || logs.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut row: Vec<f64> = logs.iter().map(|&v| (v - top).exp()).collect();
    let s: f64 = row.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    row.iter_mut().for_each(|v| *v /= s);
    Some(row)
}

pub(crate) fn e_step_tables(
    tables: &EdgeTables,
    alpha_prev: &MembershipProbs,
    params: &BlockParams,
    order: CorrelationOrder,
    schedule: UpdateSchedule,
) -> EStepOutcome {
    let n = alpha_prev.n();
    let k = alpha_prev.k();
    let with_corr = order.uses_correlation();
    let mut cache = with_corr.then(|| tables.concordance_cache(alpha_prev));
    let mut alpha = alpha_prev.clone();
    let mut collapsed = 0;
    for i in 0..n {
        let source = match schedule {
            UpdateSchedule::GaussSeidel => &alpha,
            UpdateSchedule::Jacobi => alpha_prev,
        };
        let stats = tables.node_stats(source, i, with_corr);
        let scores = tables.reassignment_scores(source, cache.as_ref(), params, order, i, &stats);
        let prev = source.row(i).to_vec();
        let Some(row) = updated_row(&prev, &scores) else {
            collapsed += 1;
            continue;
        };
        if schedule == UpdateSchedule::GaussSeidel {
            if let Some(c) = cache.as_mut() {
                for m in 0..c.t.len() / k {
                    for q in 0..k {
                        let s = m * k + q;
                        let (old, new) = (prev[q], row[q]);
                        c.t[s] += (new - old) * stats.lin[s];
                        c.q[s] += (new * new - old * old) * stats.sq[s];
                        c.p[s] += (new.powi(4) - old.powi(4)) * stats.quart[s];
                    }
                }
            }
        }
        alpha.set_row(i, &row);
    }
    EStepOutcome {
        alpha,
        collapsed_rows: collapsed,
    }
}

/// Updates every block coefficient, then every within-community correlation.
/// Blocks without weight keep their previous values.
fn m_step(
    net: &MultiNetwork,
    alpha: &MembershipProbs,
    prev: &BlockParams,
    cfg: &FitConfig,
    diag: &mut FitDiagnostics,
) -> (BlockParams, EdgeTables) {
    let k = alpha.k();
    let blocks: Vec<(usize, usize)> = (0..k).flat_map(|q| (q..k).map(move |l| (q, l))).collect();
    let estimates: Vec<Result<BetaEstimate>> = blocks
        .par_iter()
        .map(|&(q, l)| {
            m_step_beta_with(
                net,
                alpha,
                q,
                l,
                cfg.working_correlation,
                prev.rho(q),
                prev.beta(q, l),
            )
        })
        .collect();
    let mut params = prev.clone();
    for (&(q, l), est) in blocks.iter().zip(estimates) {
        match est {
            Ok(b) => {
                diag.clamped_beta |= b.clamped;
                params.set_beta(q, l, b.value);
            }
            Err(_) => diag.degenerate_blocks += 1,
        }
    }
    let tables = EdgeTables::new(net, &params, cfg.order.uses_correlation());
    if cfg.order.uses_correlation() {
        let cache = tables.concordance_cache(alpha);
        for c in 0..k {
            let est = rho_from_cache(net, alpha, &cache, c);
            if est.degenerate {
                diag.degenerate_rho += 1;
            } else {
                params.set_rho(c, est.value);
            }
        }
    }
    (params, tables)
}

fn check_fit_inputs(net: &MultiNetwork, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.k > net.n_nodes() {
        return Err(invalid(format!(
            "k = {} exceeds the number of nodes {}",
            cfg.k,
            net.n_nodes()
        )));
    }
    Ok(())
}

/// Runs the iteration from `n_inits` spectral initializations on individual
/// samples and keeps the restart with the largest final objective.
pub fn fit(net: &MultiNetwork, cfg: &FitConfig) -> Result<FitResult> {
    check_fit_inputs(net, cfg)?;
    if cfg.k == 1 {
        return fit_from_inits(net, cfg, &[MembershipProbs::uniform(net.n_nodes(), 1)]);
    }
    let inits = initial_memberships(net, cfg.k, cfg.n_inits, cfg.init_smoothing, cfg.seed)?;
    fit_from_inits(net, cfg, &inits)
}

/// Variational EM: [`fit`] with the correlation terms removed.
pub fn fit_vem(net: &MultiNetwork, cfg: &FitConfig) -> Result<FitResult> {
    let cfg = FitConfig {
        order: CorrelationOrder::None,
        ..cfg.clone()
    };
    fit(net, &cfg)
}

/// Runs one restart per supplied initialization (in parallel) and returns the
/// best by final objective; ties go to the earliest restart.
pub fn fit_from_inits(net: &MultiNetwork, cfg: &FitConfig, inits: &[MembershipProbs]) -> Result<FitResult> {
    check_fit_inputs(net, cfg)?;
    if inits.is_empty() {
        return Err(invalid("no initializations supplied"));
    }
    for a in inits {
        if a.n() != net.n_nodes() || a.k() != cfg.k {
            return Err(invalid("initialization shape does not match network and k"));
        }
    }
    let runs: Vec<Result<FitResult>> = inits
        .par_iter()
        .enumerate()
        .map(|(r, init)| run_restart(net, cfg, init, r))
        .collect();
    let mut best: Option<FitResult> = None;
    let mut failures = Vec::new();
    for run in runs {
        match run {
            Ok(res) => {
                if best.as_ref().is_none_or(|b| res.log_lik.total > b.log_lik.total) {
                    best = Some(res);
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    best.ok_or_else(|| {
        Error::EstimationFailed(format!("all {} restarts failed: {}", inits.len(), failures.join("; ")))
    })
}

fn run_restart(net: &MultiNetwork, cfg: &FitConfig, init: &MembershipProbs, index: usize) -> Result<FitResult> {
    let mut diag = FitDiagnostics::default();
    let mut alpha = init.clone();
    let mut params = BlockParams::zeros(cfg.k);
    let mut trace = Vec::new();
    let mut converged = false;

    let (p0, t0) = m_step(net, &alpha, &params, cfg, &mut diag);
    if diag.degenerate_blocks == cfg.k * (cfg.k + 1) / 2 {
        return Err(Error::EstimationFailed(format!(
            "restart {index}: every block is degenerate at the initialization"
        )));
    }
    params = p0;
    let mut tables = t0;
    diag.initial_total = evaluate(&tables, &alpha, &params, cfg.order).total;

    if cfg.k > 1 {
        for s in 0..cfg.max_iters {
            if s > 0 {
                let (p, t) = m_step(net, &alpha, &params, cfg, &mut diag);
                params = p;
                tables = t;
            }
            let out = e_step_tables(&tables, &alpha, &params, cfg.order, cfg.schedule);
            diag.collapsed_rows += out.collapsed_rows;
            let change = out.alpha.max_abs_diff(&alpha);
            alpha = out.alpha;
            let total = evaluate(&tables, &alpha, &params, cfg.order).total;
            if !total.is_finite() {
                return Err(Error::EstimationFailed(format!(
                    "restart {index}: objective became non-finite at iteration {}",
                    s + 1
                )));
            }
            trace.push(TraceEntry {
                total,
                max_change: change,
            });
            if change < cfg.epsilon {
                converged = true;
                break;
            }
        }
        let (p, t) = m_step(net, &alpha, &params, cfg, &mut diag);
        params = p;
        tables = t;
    } else {
        converged = true;
    }

    let log_lik = evaluate(&tables, &alpha, &params, cfg.order);
    let labels = alpha.hard_labels();
    diag.empty_communities = labels.empty_communities();
    diag.correlation_ratio = if log_lik.marginal != 0.0 {
        (log_lik.correlation / log_lik.marginal).abs()
    } else {
        0.0
    };
    Ok(FitResult {
        labels,
        alpha,
        params,
        log_lik,
        iterations: trace.len(),
        trace,
        converged,
        init_index: index,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::approx_log_lik;
    use crate::metrics::ari_from_labels;
    use crate::simulator::{sample_networks, Balance, SimConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hard(labels: &[usize], k: usize) -> MembershipProbs {
        MembershipProbs::one_hot(&HardMembership::new(labels.to_vec(), k).unwrap())
    }

    fn random_alpha(rng: &mut ChaCha8Rng, n: usize, k: usize) -> MembershipProbs {
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.02..1.0)).collect();
            let s: f64 = row.iter().sum();
            let mut row: Vec<f64> = row.iter().map(|v| v / s).collect();
            let drift: f64 = row.iter().sum();
            row[0] += 1.0 - drift;
            data.extend(row);
        }
        MembershipProbs::new(n, k, data).unwrap()
    }

    fn random_net(rng: &mut ChaCha8Rng, n: usize, m: usize) -> MultiNetwork {
        let mut layers = Vec::new();
        let mut covs = Vec::new();
        for _ in 0..m {
            let mut a = vec![0u8; n * n];
            let mut x = vec![0.0; n * n];
            for (i, j) in pairs(n) {
                let e = u8::from(rng.random_bool(0.45));
                a[i * n + j] = e;
                a[j * n + i] = e;
                let c = rng.random_range(-1.5..1.5);
                x[i * n + j] = c;
                x[j * n + i] = c;
            }
            layers.push(a);
            covs.push(x);
        }
        MultiNetwork::new(n, layers, Some(covs)).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, k: usize) -> BlockParams {
        let mut params = BlockParams::zeros(k);
        for q in 0..k {
            for l in q..k {
                params.set_beta(q, l, rng.random_range(-1.5..1.5));
            }
            params.set_rho(q, rng.random_range(0.0..0.9));
        }
        params
    }

    #[test]
    fn beta_is_zero_at_half_mean() {
        let net = MultiNetwork::from_edges(4, 2, [(0, 0, 1), (1, 2, 3)]).unwrap();
        let alpha = hard(&[0, 0, 1, 1], 2);
        let b = m_step_beta(&net, &alpha, 0, 0).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(!b.clamped);
    }

    #[test]
    fn beta_inverts_block_mean() {
        // Pair weights a, a, 1 with only the weight-1 pair present: mean 1 / (2a + 1).
        let target = logistic(1.0);
        let a = (1.0 / target - 1.0) / 2.0;
        let net = MultiNetwork::from_edges(3, 1, [(0, 1, 2)]).unwrap();
        let alpha = MembershipProbs::new(3, 2, vec![a, 1.0 - a, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = m_step_beta(&net, &alpha, 0, 0).unwrap();
        assert!((b.value - 1.0).abs() < 1e-6, "{}", b.value);

        // Rounded mean 0.731058 (= 731058 ones out of 10^6 weight).
        let a = (1e6 / 731058.0 - 1.0) / 2.0;
        let alpha = MembershipProbs::new(3, 2, vec![a, 1.0 - a, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = m_step_beta(&net, &alpha, 0, 0).unwrap();
        assert!((b.value - 1.0).abs() < 1e-5, "{}", b.value);
    }

    /// Weighted objective written out edge by edge.
    fn objective_oracle(net: &MultiNetwork, alpha: &MembershipProbs, q: usize, l: usize, beta: f64) -> f64 {
        let mut total = 0.0;
        for m in 0..net.n_samples() {
            for (i, j) in pairs(net.n_nodes()) {
                let w = if q == l {
                    alpha.get(i, q) * alpha.get(j, q)
                } else {
                    alpha.get(i, q) * alpha.get(j, l) + alpha.get(i, l) * alpha.get(j, q)
                };
                let mu = 1.0 / (1.0 + (-beta * net.covariate(m, i, j)).exp());
                let y = f64::from(net.edge(m, i, j));
                total += w * (y * mu.ln() + (1.0 - y) * (1.0 - mu).ln());
            }
        }
        total
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        while hi - lo > 1e-10 {
            if f(c) > f(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - g * (hi - lo);
            d = lo + g * (hi - lo);
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn beta_matches_golden_section_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let net = random_net(&mut rng, 6, 4);
            let alpha = random_alpha(&mut rng, 6, 2);
            for (q, l) in [(0, 0), (0, 1), (1, 1)] {
                let got = m_step_beta(&net, &alpha, q, l).unwrap().value;
                // Coarse grid to bracket the maximum, then golden section.
                let grid: Vec<f64> = (0..=240).map(|s| -12.0 + 0.1 * s as f64).collect();
                let best = grid
                    .iter()
                    .copied()
                    .max_by(|a, b| {
                        objective_oracle(&net, &alpha, q, l, *a)
                            .total_cmp(&objective_oracle(&net, &alpha, q, l, *b))
                    })
                    .unwrap();
                let want = golden_section(
                    |b| objective_oracle(&net, &alpha, q, l, b),
                    (best - 0.1).max(-12.0),
                    (best + 0.1).min(12.0),
                );
                assert!((got - want).abs() < 1e-5, "block ({q},{l}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn beta_clamps_on_saturated_block() {
        let net = MultiNetwork::from_edges(3, 2, [(0, 0, 1), (1, 0, 1)]).unwrap();
        let alpha = hard(&[0, 0, 1], 2);
        let b = m_step_beta(&net, &alpha, 0, 0).unwrap();
        assert_eq!(b.value, BETA_BOUND);
        assert!(b.clamped);
        let with_cov = net.clone().with_covariates(vec![vec![0.5; 9]; 2]).unwrap();
        let b = m_step_beta(&with_cov, &alpha, 0, 0).unwrap();
        assert_eq!(b.value, BETA_BOUND);
        assert!(b.clamped);
    }

    #[test]
    fn empty_block_is_degenerate() {
        let net = MultiNetwork::from_edges(3, 1, [(0, 0, 1)]).unwrap();
        let alpha = hard(&[0, 0, 0], 2);
        assert!(matches!(
            m_step_beta(&net, &alpha, 1, 1),
            Err(Error::DegenerateBlock { q: 1, l: 1, .. })
        ));
    }

    /// True labels and fitted block coefficients for a simulated network.
    fn truth_params(sim: &crate::simulator::Simulated) -> (MembershipProbs, BlockParams) {
        let alpha = MembershipProbs::one_hot(&sim.labels);
        let mut params = BlockParams::zeros(2);
        for (q, l) in [(0, 0), (0, 1), (1, 1)] {
            params.set_beta(q, l, m_step_beta(&sim.net, &alpha, q, l).unwrap().value);
        }
        (alpha, params)
    }

    #[test]
    fn rho_vanishes_for_independent_edges() {
        let sim = sample_networks(&SimConfig::weak_signal(Balance::Balanced, 60, 0.0, 5)).unwrap();
        let (alpha, params) = truth_params(&sim);
        for c in 0..2 {
            let est = m_step_rho(&sim.net, &alpha, &params, c).unwrap();
            assert!(!est.degenerate);
            assert!(est.value < 0.05, "community {c}: {}", est.value);
        }
    }

    #[test]
    fn rho_recovers_exchangeable_correlation() {
        let mut all = Vec::new();
        for rep in 0..10 {
            let sim = sample_networks(&SimConfig::weak_signal(Balance::Balanced, 60, 0.6, rep)).unwrap();
            let (alpha, params) = truth_params(&sim);
            for c in 0..2 {
                all.push(m_step_rho(&sim.net, &alpha, &params, c).unwrap().value);
            }
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((0.5..=0.7).contains(&mean), "mean {mean}, all {all:?}");
    }

    #[test]
    fn rho_clamps_to_one_under_perfect_concordance() {
        // Community {0,1,2}: all edges present in even samples, absent in odd ones.
        let edges: Vec<(usize, usize, usize)> = (0..4)
            .step_by(2)
            .flat_map(|m| [(m, 0, 1), (m, 0, 2), (m, 1, 2)])
            .collect();
        let net = MultiNetwork::from_edges(4, 4, edges).unwrap();
        let alpha = hard(&[0, 0, 0, 1], 2);
        let est = m_step_rho(&net, &alpha, &BlockParams::zeros(2), 0).unwrap();
        assert_eq!(est.value, 1.0);
        let lone = m_step_rho(&net, &alpha, &BlockParams::zeros(2), 1).unwrap();
        assert!(lone.degenerate);
        assert_eq!(lone.value, 0.0);
    }

    #[test]
    fn equidistant_node_keeps_uniform_row() {
        let mut edges = Vec::new();
        for m in 0..2 {
            edges.push((m, 0, 1));
            edges.push((m, 2, 3));
            for j in 0..4 {
                edges.push((m, j, 4));
            }
        }
        let net = MultiNetwork::from_edges(5, 2, edges).unwrap();
        let mut alpha = hard(&[0, 0, 1, 1, 0], 2);
        alpha.set_row(4, &[0.5, 0.5]);
        let params = BlockParams::from_rows(&[vec![0.8, -0.2], vec![-0.2, 0.8]], &[0.4, 0.4]).unwrap();
        for schedule in [UpdateSchedule::Jacobi, UpdateSchedule::GaussSeidel] {
            for order in [CorrelationOrder::None, CorrelationOrder::Second, CorrelationOrder::Fourth] {
                let cfg = FitConfig { order, schedule, ..FitConfig::default() };
                let out = e_step(&net, &alpha, &params, &cfg).unwrap();
                let row = out.alpha.row(4);
                assert!((row[0] - 0.5).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12, "{row:?}");
            }
        }
    }

    #[test]
    fn large_score_gap_saturates() {
        let row = updated_row(&[0.5, 0.5], &[50.0, 0.0]).unwrap();
        assert!((row[0] - 1.0).abs() < 1e-15 && row[1] < 1e-15);
        let row = updated_row(&[0.3, 0.3, 0.4], &[0.0, 900.0, 0.0]).unwrap();
        assert_eq!(row, vec![0.0, 1.0, 0.0]);
        assert!(updated_row(&[1.0, 0.0], &[f64::NEG_INFINITY, 0.0]).is_none());
    }

    /// New row of node `i` from full likelihood evaluations with `i` forced
    /// into each community in turn.
    fn recomputed_row(
        net: &MultiNetwork,
        alpha: &MembershipProbs,
        params: &BlockParams,
        order: CorrelationOrder,
        i: usize,
    ) -> Vec<f64> {
        let k = alpha.k();
        let forced: Vec<f64> = (0..k)
            .map(|c| {
                let mut a = alpha.clone();
                let mut row = vec![0.0; k];
                row[c] = 1.0;
                a.set_row(i, &row);
                approx_log_lik(net, &a, params, order).unwrap().total
            })
            .collect();
        let top = forced.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let un: Vec<f64> = (0..k).map(|c| alpha.get(i, c) * (forced[c] - top).exp()).collect();
        let s: f64 = un.iter().sum();
        un.iter().map(|v| v / s).collect()
    }

    #[test]
    fn jacobi_matches_full_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for order in [CorrelationOrder::None, CorrelationOrder::Second, CorrelationOrder::Fourth] {
            let net = random_net(&mut rng, 6, 3);
            let alpha = random_alpha(&mut rng, 6, 3);
            let params = random_params(&mut rng, 3);
            let cfg = FitConfig { k: 3, order, schedule: UpdateSchedule::Jacobi, ..FitConfig::default() };
            let out = e_step(&net, &alpha, &params, &cfg).unwrap();
            for i in 0..6 {
                let want = recomputed_row(&net, &alpha, &params, order, i);
                for (g, w) in out.alpha.row(i).iter().zip(&want) {
                    assert!((g - w).abs() < 1e-9, "{order:?} node {i}: {g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn gauss_seidel_matches_sequential_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for order in [CorrelationOrder::Second, CorrelationOrder::Fourth] {
            let net = random_net(&mut rng, 6, 3);
            let alpha = random_alpha(&mut rng, 6, 3);
            let params = random_params(&mut rng, 3);
            let cfg = FitConfig { k: 3, order, ..FitConfig::default() };
            let out = e_step(&net, &alpha, &params, &cfg).unwrap();
            let mut running = alpha.clone();
            for i in 0..6 {
                let row = recomputed_row(&net, &running, &params, order, i);
                running.set_row(i, &row);
            }
            assert!(out.alpha.max_abs_diff(&running) < 1e-9);
        }
    }

    fn small_weak(seed: u64) -> crate::simulator::Simulated {
        let mut cfg = SimConfig::weak_signal(Balance::Balanced, 8, 0.6, seed);
        cfg.community_sizes = vec![6, 6];
        sample_networks(&cfg).unwrap()
    }

    #[test]
    fn vem_is_fit_without_correlation() {
        for seed in 0..3 {
            let sim = small_weak(seed);
            let cfg = FitConfig { seed, max_iters: 30, ..FitConfig::default() };
            let a = fit_vem(&sim.net, &cfg).unwrap();
            let b = fit(&sim.net, &FitConfig { order: CorrelationOrder::None, ..cfg }).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_community_is_global_logit() {
        let net = MultiNetwork::from_edges(4, 2, [(0, 0, 1), (0, 1, 2), (1, 2, 3)]).unwrap();
        let cfg = FitConfig { k: 1, ..FitConfig::default() };
        let res = fit(&net, &cfg).unwrap();
        let mean: f64 = 3.0 / 12.0;
        assert!((res.params.beta(0, 0) - (mean / (1.0 - mean)).ln()).abs() < 1e-12);
        assert!(res.alpha.as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(res.labels.labels(), &[0, 0, 0, 0]);
        assert!(res.converged);
        assert_eq!(res.iterations, res.trace.len());
    }

    #[test]
    fn validation_errors() {
        let net = MultiNetwork::from_edges(3, 1, [(0, 0, 1)]).unwrap();
        assert!(fit(&net, &FitConfig { k: 4, ..FitConfig::default() }).is_err());
        assert!(fit(&net, &FitConfig { epsilon: 0.0, ..FitConfig::default() }).is_err());
        assert!(fit(&net, &FitConfig { k: 0, ..FitConfig::default() }).is_err());
        assert!(fit_from_inits(&net, &FitConfig::default(), &[]).is_err());
    }

    #[test]
    fn result_invariants_hold() {
        let sim = small_weak(4);
        for order in [CorrelationOrder::None, CorrelationOrder::Second, CorrelationOrder::Fourth] {
            let res = fit(&sim.net, &FitConfig { order, seed: 4, ..FitConfig::default() }).unwrap();
            assert_eq!(res.labels, res.alpha.hard_labels());
            assert_eq!(res.trace.len(), res.iterations);
            assert!(res.log_lik.total >= res.diagnostics.initial_total, "{order:?}");
            for i in 0..res.alpha.n() {
                let row = res.alpha.row(i);
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relabeled_initializations_give_relabeled_fit() {
        let sim = small_weak(6);
        let cfg = FitConfig { seed: 6, ..FitConfig::default() };
        let inits = initial_memberships(&sim.net, 2, 3, 0.1, 6).unwrap();
        let perm = [1, 0];
        let swapped: Vec<MembershipProbs> = inits.iter().map(|a| a.permuted(&perm)).collect();
        let a = fit_from_inits(&sim.net, &cfg, &inits).unwrap();
        let b = fit_from_inits(&sim.net, &cfg, &swapped).unwrap();
        assert_eq!(b.labels, a.labels.permuted(&perm));
        assert!(b.alpha.max_abs_diff(&a.alpha.permuted(&perm)) < 1e-8);
        let pa = a.params.permuted(&perm);
        for q in 0..2 {
            assert!((pa.rho(q) - b.params.rho(q)).abs() < 1e-8);
            for l in 0..2 {
                assert!((pa.beta(q, l) - b.params.beta(q, l)).abs() < 1e-8);
            }
        }
        assert_eq!(a.init_index, b.init_index);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let sim = small_weak(8);
        let cfg = FitConfig { seed: 8, ..FitConfig::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit(&sim.net, &cfg).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, fit(&sim.net, &cfg).unwrap());
    }

    #[test]
    fn planted_strong_signal_is_recovered() {
        let sim = sample_networks(&SimConfig::strong_signal(Balance::Unbalanced, 60, 0.0, 2)).unwrap();
        let res = fit_vem(&sim.net, &FitConfig { seed: 2, ..FitConfig::default() }).unwrap();
        let ari = ari_from_labels(res.labels.labels(), sim.labels.labels()).unwrap();
        assert!(ari >= 0.9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn e_step_rows_stay_on_simplex(seed in any::<u64>(), k in 2usize..4, gs in any::<bool>(), ord in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, 7, 2);
            let alpha = random_alpha(&mut rng, 7, k);
            let params = random_params(&mut rng, k);
            let order = [CorrelationOrder::None, CorrelationOrder::Second, CorrelationOrder::Fourth][ord];
            let schedule = if gs { UpdateSchedule::GaussSeidel } else { UpdateSchedule::Jacobi };
            let cfg = FitConfig { k, order, schedule, ..FitConfig::default() };
            let out = e_step(&net, &alpha, &params, &cfg).unwrap();
            for i in 0..7 {
                let row = out.alpha.row(i);
                prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn rho_estimate_is_a_correlation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, 6, 3);
            let alpha = random_alpha(&mut rng, 6, 2);
            let params = random_params(&mut rng, 2);
            for c in 0..2 {
                let est = m_step_rho(&net, &alpha, &params, c).unwrap();
                prop_assert!((0.0..=1.0).contains(&est.value));
            }
        }
    }
}
