use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use depnet::bench::{format_sig9, run_lambda_sweep, run_preset, ExperimentPreset, PresetName, LAMBDA_GRID};
use depnet::{adjusted_rand_index, consensus_k, fit, sample_networks, CorrelationOrder, FitConfig, LayerFilters};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{
    format_alpha, format_beta, format_covariates, format_edge_list, format_labels, format_rho, read_covariates,
    read_edge_list, read_labels, write_text,
};

pub const DEFAULT_MIN_DEGREE: usize = 9;

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes the edge list, covariates and true labels of a simulated network.
pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let mut sim_cfg = cfg.simulation.ok_or_else(|| CliError::Config {
        path: config.to_path_buf(),
        msg: "missing [simulation] section".into(),
    })?;
    if let Some(s) = seed {
        sim_cfg.seed = s;
    }
    let sim = sample_networks(&sim_cfg)?;
    ensure_dir(out)?;
    let mut written = vec![out.join("edges.txt"), out.join("labels.csv")];
    write_text(&written[0], &format_edge_list(&sim.net))?;
    write_text(&written[1], &format_labels(&sim.labels))?;
    if let Some(text) = format_covariates(&sim.net) {
        let path = out.join("covariates.txt");
        write_text(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

/// Command-line overrides of the `[fit]` section.
#[derive(Debug, Clone, Default)]
pub struct FitOverrides {
    pub order: Option<CorrelationOrder>,
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
}

impl FitOverrides {
    pub fn apply(&self, mut cfg: FitConfig) -> CliResult<FitConfig> {
        if let Some(o) = self.order {
            cfg.order = o;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSummary {
    pub converged: bool,
    pub iterations: usize,
}

/// Fits the network and writes labels, membership probabilities, block
/// parameters, the trace and a summary.
pub fn cmd_fit(
    edges: &Path,
    covariates: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    overrides: &FitOverrides,
) -> CliResult<FitSummary> {
    let run = RunConfig::load_opt(config)?;
    let cfg = overrides.apply(run.fit.unwrap_or_default())?;
    let mut net = read_edge_list(edges)?;
    if let Some(path) = covariates {
        let x = read_covariates(path, net.n_nodes(), net.n_samples())?;
        net = net.with_covariates(x)?;
    }
    if cfg.k > net.n_nodes() {
        return Err(CliError::Usage(format!(
            "k = {} exceeds the number of nodes ({})",
            cfg.k,
            net.n_nodes()
        )));
    }
    let res = fit(&net, &cfg)?;
    ensure_dir(out)?;
    write_text(&out.join("labels.csv"), &format_labels(&res.labels))?;
    write_text(&out.join("alpha.csv"), &format_alpha(&res.alpha))?;
    write_text(&out.join("beta.csv"), &format_beta(&res.params))?;
    write_text(&out.join("rho.csv"), &format_rho(&res.params))?;
    let mut trace = String::from("iteration,total,max_change\n");
    for (s, t) in res.trace.iter().enumerate() {
        let _ = writeln!(trace, "{},{},{}", s + 1, format_sig9(t.total), format_sig9(t.max_change));
    }
    write_text(&out.join("trace.csv"), &trace)?;
    let d = &res.diagnostics;
    let summary = format!(
        "converged={}\niterations={}\ninit_index={}\nlog_lik_total={}\nlog_lik_marginal={}\nlog_lik_correlation={}\n\
         clamped_beta={}\ndegenerate_blocks={}\ndegenerate_rho={}\ncollapsed_rows={}\nempty_communities={:?}\ncorrelation_ratio={}\n",
        res.converged,
        res.iterations,
        res.init_index,
        format_sig9(res.log_lik.total),
        format_sig9(res.log_lik.marginal),
        format_sig9(res.log_lik.correlation),
        d.clamped_beta,
        d.degenerate_blocks,
        d.degenerate_rho,
        d.collapsed_rows,
        d.empty_communities,
        format_sig9(d.correlation_ratio),
    );
    write_text(&out.join("summary.txt"), &summary)?;
    Ok(FitSummary {
        converged: res.converged,
        iterations: res.iterations,
    })
}

/// Adjusted Rand index between two label files.
pub fn cmd_eval(labels: &Path, truth: &Path, out: Option<&Path>) -> CliResult<f64> {
    let pred = read_labels(labels)?;
    let truth_labels = read_labels(truth)?;
    if pred.len() != truth_labels.len() {
        return Err(CliError::Usage(format!(
            "label files cover {} and {} nodes",
            pred.len(),
            truth_labels.len()
        )));
    }
    let ari = adjusted_rand_index(&pred, &truth_labels)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_text(&dir.join("eval.csv"), &format!("metric,value\nari,{}\n", format_sig9(ari)))?;
    }
    Ok(ari)
}

/// Runs a preset and writes `<preset>.csv`, `<preset>_records.csv` and
/// `<preset>.txt`; returns the summary table.
pub fn cmd_bench(
    preset: PresetName,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    replicates: Option<usize>,
) -> CliResult<String> {
    let run = RunConfig::load_opt(config)?;
    let mut p = ExperimentPreset::new(preset);
    let bench = run.bench.unwrap_or_default();
    if let Some(fit) = run.fit {
        p.fit = fit;
    }
    if let Some(r) = replicates.or(bench.n_replicates) {
        p.n_replicates = r;
    }
    if let Some(m) = bench.methods {
        p.methods = m;
    }
    if let Some(s) = seed.or(bench.seed) {
        p.seed = s;
    }
    let report = if preset == PresetName::Fig2LambdaSweep {
        run_lambda_sweep(bench.lambdas.as_deref().unwrap_or(&LAMBDA_GRID), &p)?
    } else {
        if bench.lambdas.is_some() {
            return Err(CliError::Usage("lambdas apply only to the fig2-lambda-sweep preset".into()));
        }
        run_preset(&p)?
    };
    ensure_dir(out)?;
    let name = preset.as_str();
    write_text(&out.join(format!("{name}.csv")), &report.to_csv())?;
    let mut records = String::from("cell,replicate,method,ari,beta,rho,iterations,converged,runtime_secs,error\n");
    for r in &report.records {
        let join = |v: &[f64]| v.iter().map(|x| format_sig9(*x)).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            records,
            "{},{},{},{},{},{},{},{},{},{}",
            r.cell,
            r.replicate,
            r.method.as_str(),
            r.ari.map_or(String::new(), format_sig9),
            join(&r.beta),
            join(&r.rho),
            r.iterations,
            r.converged,
            format_sig9(r.runtime_secs),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    write_text(&out.join(format!("{name}_records.csv")), &records)?;
    let table = report.to_table();
    write_text(&out.join(format!("{name}.txt")), &table)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub kept_nodes: Vec<usize>,
    pub kept_layers: Vec<usize>,
    pub k: usize,
}

/// Drops nodes whose aggregated degree is at most `min_degree`, then
/// estimates the number of communities from the layers that pass `filters`.
pub fn cmd_ingest(
    edges: &Path,
    config: Option<&Path>,
    out: &Path,
    min_degree: Option<usize>,
) -> CliResult<IngestSummary> {
    let run = RunConfig::load_opt(config)?;
    let section = run.ingest.unwrap_or_default();
    let min_degree = min_degree.or(section.min_degree).unwrap_or(DEFAULT_MIN_DEGREE);
    let filters: LayerFilters = section.filters.unwrap_or_default();
    let net = read_edge_list(edges)?;
    let kept_nodes: Vec<usize> = net
        .aggregated_degrees()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > min_degree)
        .map(|(i, _)| i)
        .collect();
    if kept_nodes.is_empty() {
        return Err(CliError::Empty(format!("no node has aggregated degree above {min_degree}")));
    }
    let filtered = net.induced(&kept_nodes)?;
    let consensus = consensus_k(&filtered, filters).map_err(|e| CliError::Empty(e.to_string()))?;
    ensure_dir(out)?;
    write_text(&out.join("filtered.txt"), &format_edge_list(&filtered))?;
    let mut map = String::from("node,original\n");
    for (new, old) in kept_nodes.iter().enumerate() {
        let _ = writeln!(map, "{new},{old}");
    }
    write_text(&out.join("nodes.csv"), &map)?;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let report = format!(
        "min_degree={min_degree}\nkept_nodes={}\nkept_layers={}\nk={}\nmean_k={}\nnodes={}\nlayers={}\n",
        kept_nodes.len(),
        consensus.kept_layers.len(),
        consensus.k,
        format_sig9(consensus.mean_k),
        join(&kept_nodes),
        join(&consensus.kept_layers),
    );
    write_text(&out.join("report.txt"), &report)?;
    Ok(IngestSummary {
        kept_nodes,
        kept_layers: consensus.kept_layers,
        k: consensus.k,
    })
}

