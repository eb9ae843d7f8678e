//! Simulation experiments at desk scale: preset grids of generator settings,
//! paired fits of every method on shared data and initializations, and
//! aggregate reports.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{fit_from_inits, FitConfig};
use crate::likelihood::CorrelationOrder;
use crate::metrics::{adjusted_rand_index, best_label_permutation};
use crate::rng::derive_seed;
use crate::simulator::{sample_networks, Balance, CorrelationStructure, SimConfig};
use crate::spectral::initial_memberships;

/// Correlation-density grid of the sweep preset.
pub const LAMBDA_GRID: [f64; 6] = [0.01, 0.05, 0.1, 0.3, 0.6, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vem,
    Bahadur2,
    Bahadur4,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vem, Method::Bahadur2, Method::Bahadur4];

    pub fn order(self) -> CorrelationOrder {
        match self {
            Self::Vem => CorrelationOrder::None,
            Self::Bahadur2 => CorrelationOrder::Second,
            Self::Bahadur4 => CorrelationOrder::Fourth,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vem => "vem",
            Self::Bahadur2 => "bahadur2",
            Self::Bahadur4 => "bahadur4",
        }
    }

    /// Column heading in summary tables.
    pub fn heading(self) -> &'static str {
        match self {
            Self::Vem => "VEM",
            Self::Bahadur2 => "Bahadur2nd",
            Self::Bahadur4 => "Bahadur4th",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}' (expected vem, bahadur2 or bahadur4)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signal {
    Weak,
    Strong,
}

/// One generator setting of an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub signal: Signal,
    pub balance: Balance,
    pub n_samples: usize,
    pub rho: f64,
    /// Standard deviation of the per-group random effects (0 for none).
    pub sigma: f64,
    /// Correlated-pair density; `None` is the exchangeable structure.
    pub lambda: Option<f64>,
}

impl Cell {
    pub fn new(signal: Signal, balance: Balance, n_samples: usize, rho: f64) -> Self {
        Self {
            signal,
            balance,
            n_samples,
            rho,
            sigma: 0.0,
            lambda: None,
        }
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        let mut cfg = match self.signal {
            Signal::Weak => SimConfig::weak_signal(self.balance, self.n_samples, self.rho, seed),
            Signal::Strong => SimConfig::strong_signal(self.balance, self.n_samples, self.rho, seed),
        };
        if let Some(lambda) = self.lambda {
            if self.rho > 0.0 {
                cfg.correlation = CorrelationStructure::Grouped {
                    rho: vec![self.rho; cfg.k()],
                    lambda,
                };
            }
        }
        cfg.random_effect_sd = self.sigma;
        cfg
    }

    pub fn describe(&self) -> String {
        let mut s = format!(
            "{} {} M={} rho={}",
            signal_str(self.signal),
            balance_str(self.balance),
            self.n_samples,
            self.rho
        );
        if self.sigma > 0.0 {
            let _ = write!(s, " sigma={}", self.sigma);
        }
        if let Some(l) = self.lambda {
            let _ = write!(s, " lambda={l}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Table1Weak,
    Table2Strong,
    #[serde(rename = "tables6-8-params")]
    Tables6To8Params,
    Study2Misspec,
    Fig2LambdaSweep,
}

impl PresetName {
    pub const ALL: [PresetName; 5] = [
        PresetName::Table1Weak,
        PresetName::Table2Strong,
        PresetName::Tables6To8Params,
        PresetName::Study2Misspec,
        PresetName::Fig2LambdaSweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Table1Weak => "table1-weak",
            Self::Table2Strong => "table2-strong",
            Self::Tables6To8Params => "tables6-8-params",
            Self::Study2Misspec => "study2-misspec",
            Self::Fig2LambdaSweep => "fig2-lambda-sweep",
        }
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|p| p.as_str()).collect();
            invalid(format!("unknown preset '{s}' (expected one of {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub name: PresetName,
    pub cells: Vec<Cell>,
    pub n_replicates: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Shared estimator settings; `order` is replaced per method.
    pub fit: FitConfig,
}

fn grid(signal: Signal, rhos: &[f64], sigmas: &[f64]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for balance in [Balance::Balanced, Balance::Unbalanced] {
        for &sigma in sigmas {
            for n_samples in [20, 40, 60] {
                for &rho in rhos {
                    cells.push(Cell {
                        sigma,
                        ..Cell::new(signal, balance, n_samples, rho)
                    });
                }
            }
        }
    }
    cells
}

fn lambda_cells(lambdas: &[f64]) -> Vec<Cell> {
    lambdas
        .iter()
        .map(|&l| Cell {
            lambda: Some(l),
            ..Cell::new(Signal::Weak, Balance::Balanced, 40, 0.6)
        })
        .collect()
}

impl ExperimentPreset {
    /// Full grid of a preset with 10 replicates of every method.
    pub fn new(name: PresetName) -> Self {
        let cells = match name {
            PresetName::Table1Weak => grid(Signal::Weak, &[0.0, 0.3, 0.6], &[0.0]),
            PresetName::Table2Strong => grid(Signal::Strong, &[0.0, 0.3, 0.6], &[0.0]),
            PresetName::Tables6To8Params => grid(Signal::Weak, &[0.3, 0.6], &[0.0]),
            PresetName::Study2Misspec => grid(Signal::Weak, &[0.3, 0.6], &[0.5, 1.5]),
            PresetName::Fig2LambdaSweep => lambda_cells(&LAMBDA_GRID),
        };
        Self {
            name,
            cells,
            n_replicates: 10,
            methods: Method::ALL.to_vec(),
            seed: 0,
            fit: FitConfig::default(),
        }
    }

    /// The same preset restricted to a single cell.
    pub fn single(name: PresetName, cell: Cell) -> Self {
        Self {
            cells: vec![cell],
            ..Self::new(name)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(invalid("experiment grid is empty"));
        }
        if self.n_replicates == 0 {
            return Err(invalid("at least one replicate is required"));
        }
        if self.methods.is_empty() {
            return Err(invalid("at least one method is required"));
        }
        for cell in &self.cells {
            if let Some(l) = cell.lambda {
                if !(l > 0.0 && l <= 1.0) {
                    return Err(invalid(format!("lambda must lie in (0, 1], got {l}")));
                }
            }
            cell.sim_config(self.seed).validate()?;
        }
        self.fit.validate()
    }
}

/// Outcome of one method on one simulated replicate. Block estimates are
/// relabeled to the true communities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub cell: usize,
    pub replicate: usize,
    pub method: Method,
    pub ari: Option<f64>,
    /// Row-major `K x K` coefficients.
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub runtime_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    /// Mean and sample standard deviation (`NaN` when undefined).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / n
        };
        let sd = if values.len() < 2 {
            f64::NAN
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell_index: usize,
    pub cell: Cell,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    /// More than half of the replicates failed.
    pub unreliable: bool,
    pub ari: Summary,
    /// Upper triangle of the coefficients, `(q, l)` with `q <= l`, row-major.
    pub beta: Vec<Summary>,
    pub rho: Vec<Summary>,
    pub runtime_secs: f64,
}

impl ReportRow {
    /// Summary of the block coefficient `(q, l)`.
    pub fn beta(&self, q: usize, l: usize) -> Summary {
        let (q, l) = if q <= l { (q, l) } else { (l, q) };
        self.beta[q * (2 * self.rho.len() - q - 1) / 2 + l]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub preset: String,
    pub rows: Vec<ReportRow>,
    pub records: Vec<ReplicateRecord>,
}

/// Rounds to 9 significant digits and prints the shortest representation.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else { x.to_string() };
    }
    format!("{x:.8e}").parse::<f64>().map_or_else(|_| x.to_string(), |v| v.to_string())
}

impl ExperimentReport {
    pub fn row(&self, cell: usize, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.cell_index == cell && r.method == method)
    }

    /// One line per (cell, method) aggregate.
    pub fn to_csv(&self) -> String {
        let k = self.rows.first().map_or(0, |r| r.rho.len());
        let mut out = String::from(
            "preset,cell,signal,balance,n_samples,rho,sigma,lambda,method,n_ok,n_failed,unreliable,ari_mean,ari_sd",
        );
        for q in 0..k {
            for l in q..k {
                let _ = write!(out, ",beta{}{}_mean,beta{}{}_sd", q + 1, l + 1, q + 1, l + 1);
            }
        }
        for q in 0..k {
            let _ = write!(out, ",rho{}_mean,rho{}_sd", q + 1, q + 1);
        }
        out.push_str(",runtime_secs\n");
        for r in &self.rows {
            let c = &r.cell;
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.preset,
                r.cell_index,
                signal_str(c.signal),
                balance_str(c.balance),
                c.n_samples,
                format_sig9(c.rho),
                format_sig9(c.sigma),
                c.lambda.map_or(String::new(), format_sig9),
                r.method.as_str(),
                r.n_ok,
                r.n_failed,
                r.unreliable,
                format_sig9(r.ari.mean),
                format_sig9(r.ari.sd),
            );
            for s in r.beta.iter().chain(&r.rho) {
                let _ = write!(out, ",{},{}", format_sig9(s.mean), format_sig9(s.sd));
            }
            let _ = writeln!(out, ",{}", format_sig9(r.runtime_secs));
        }
        out
    }

    /// Mean ARI (standard deviation) per cell and method, one line per cell.
    pub fn to_table(&self) -> String {
        let mut methods: Vec<Method> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        let mut cells: Vec<(usize, Cell)> = Vec::new();
        for r in &self.rows {
            if !cells.iter().any(|(i, _)| *i == r.cell_index) {
                cells.push((r.cell_index, r.cell));
            }
        }
        let width = cells.iter().map(|(_, c)| c.describe().len()).max().unwrap_or(4).max(4);
        let mut out = format!("{}\n{:<width$}", self.preset, "cell");
        for m in &methods {
            let _ = write!(out, "  {:>16}", m.heading());
        }
        out.push('\n');
        for (idx, cell) in cells {
            let _ = write!(out, "{:<width$}", cell.describe());
            for &m in &methods {
                let entry = match self.row(idx, m) {
                    Some(r) if r.n_ok > 0 => {
                        let flag = if r.unreliable { "!" } else { "" };
                        format!("{:.2} ({:.2}){flag}", r.ari.mean, nan_as_zero(r.ari.sd))
                    }
                    _ => "failed".to_string(),
                };
                let _ = write!(out, "  {entry:>16}");
            }
            out.push('\n');
        }
        out
    }
}

fn nan_as_zero(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x
    }
}

fn signal_str(s: Signal) -> &'static str {
    match s {
        Signal::Weak => "weak",
        Signal::Strong => "strong",
    }
}

fn balance_str(b: Balance) -> &'static str {
    match b {
        Balance::Balanced => "balanced",
        Balance::Unbalanced => "unbalanced",
    }
}

/// Fits every method on one simulated replicate, sharing the data and the
/// initializations.
fn run_replicate(preset: &ExperimentPreset, cell_index: usize, replicate: usize) -> Vec<ReplicateRecord> {
    let cell = &preset.cells[cell_index];
    let seed = derive_seed(preset.seed, &[cell_index as u64, replicate as u64]);
    let failed = |method: Method, msg: String| ReplicateRecord {
        cell: cell_index,
        replicate,
        method,
        ari: None,
        beta: Vec::new(),
        rho: Vec::new(),
        iterations: 0,
        converged: false,
        runtime_secs: 0.0,
        error: Some(msg),
    };
    let prepared = sample_networks(&cell.sim_config(seed)).and_then(|sim| {
        let cfg = FitConfig {
            seed,
            ..preset.fit.clone()
        };
        let inits = initial_memberships(&sim.net, cfg.k, cfg.n_inits, cfg.init_smoothing, seed)?;
        Ok((sim, cfg, inits))
    });
    let (sim, cfg, inits) = match prepared {
        Ok(p) => p,
        Err(e) => return preset.methods.iter().map(|&m| failed(m, e.to_string())).collect(),
    };
    preset
        .methods
        .iter()
        .map(|&method| {
            let cfg = FitConfig {
                order: method.order(),
                ..cfg.clone()
            };
            let start = Instant::now();
            let outcome = fit_from_inits(&sim.net, &cfg, &inits).and_then(|res| {
                let ari = adjusted_rand_index(&res.labels, &sim.labels)?;
                let perm = best_label_permutation(&res.labels, &sim.labels)?;
                Ok((res, ari, perm))
            });
            let runtime_secs = start.elapsed().as_secs_f64();
            match outcome {
                Ok((res, ari, perm)) => {
                    let params = res.params.permuted(&perm);
                    ReplicateRecord {
                        cell: cell_index,
                        replicate,
                        method,
                        ari: Some(ari),
                        beta: params.beta_matrix().to_vec(),
                        rho: params.rho_vec().to_vec(),
                        iterations: res.iterations,
                        converged: res.converged,
                        runtime_secs,
                        error: None,
                    }
                }
                Err(e) => failed(method, e.to_string()),
            }
        })
        .collect()
}

fn aggregate(preset: &ExperimentPreset, records: &[ReplicateRecord]) -> Vec<ReportRow> {
    let k = preset.fit.k;
    let mut rows = Vec::new();
    for (cell_index, cell) in preset.cells.iter().enumerate() {
        for &method in &preset.methods {
            let ok: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.cell == cell_index && r.method == method && r.error.is_none())
                .collect();
            let n_failed = preset.n_replicates - ok.len();
            let field = |f: &dyn Fn(&ReplicateRecord) -> f64| {
                Summary::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let mut beta = Vec::new();
            for q in 0..k {
                for l in q..k {
                    beta.push(field(&|r| r.beta[q * k + l]));
                }
            }
            let rho = (0..k).map(|q| field(&|r| r.rho[q])).collect();
            rows.push(ReportRow {
                cell_index,
                cell: *cell,
                method,
                n_ok: ok.len(),
                n_failed,
                unreliable: 2 * n_failed > preset.n_replicates,
                ari: field(&|r| r.ari.unwrap_or(f64::NAN)),
                beta,
                rho,
                runtime_secs: field(&|r| r.runtime_secs).mean,
            });
        }
    }
    rows
}

/// Simulates every cell `n_replicates` times and fits every method on each
/// replicate. Fit failures are recorded, not propagated.
pub fn run_preset(preset: &ExperimentPreset) -> Result<ExperimentReport> {
    preset.validate()?;
    let jobs: Vec<(usize, usize)> = (0..preset.cells.len())
        .flat_map(|c| (0..preset.n_replicates).map(move |r| (c, r)))
        .collect();
    let records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .flat_map_iter(|&(c, r)| run_replicate(preset, c, r))
        .collect();
    Ok(ExperimentReport {
        preset: preset.name.as_str().to_string(),
        rows: aggregate(preset, &records),
        records,
    })
}

/// Grouped-correlation sweep over `lambdas` at `rho = 0.6`, N = 40, M = 40,
/// with the replicates, methods, seed and estimator settings of `base`.
pub fn run_lambda_sweep(lambdas: &[f64], base: &ExperimentPreset) -> Result<ExperimentReport> {
    if lambdas.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    if let Some(l) = lambdas.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
        return Err(invalid(format!("lambda must lie in (0, 1], got {l}")));
    }
    let preset = ExperimentPreset {
        name: PresetName::Fig2LambdaSweep,
        cells: lambda_cells(lambdas),
        ..base.clone()
    };
    run_preset(&preset)
}
