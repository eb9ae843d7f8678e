//! Plain-text file formats.
//!
//! Edge list: a header `nodes=N samples=M`, then one `m i j` line per
//! undirected edge, sorted by `(m, i, j)` with `i < j`.
//! Covariates: the same header, then `m i j x` for every pair `i < j` of
//! every sample. Labels: `node,community` CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use depnet::bench::format_sig9;
use depnet::model::pairs;
use depnet::{BlockParams, HardMembership, MembershipProbs, MultiNetwork};

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_header(path: &Path, line: Option<(usize, &str)>) -> CliResult<(usize, usize)> {
    let (no, text) = line.ok_or_else(|| parse_err(path, 1, "missing header 'nodes=N samples=M'"))?;
    let mut nodes = None;
    let mut samples = None;
    for tok in text.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(path, no, format!("malformed header token '{tok}'")))?;
        let v: usize = value
            .parse()
            .map_err(|_| parse_err(path, no, format!("header value '{value}' is not a count")))?;
        match key {
            "nodes" => nodes = Some(v),
            "samples" => samples = Some(v),
            other => return Err(parse_err(path, no, format!("unknown header key '{other}'"))),
        }
    }
    match (nodes, samples) {
        (Some(n), Some(m)) if n > 0 && m > 0 => Ok((n, m)),
        _ => Err(parse_err(path, no, "header must give positive nodes= and samples=")),
    }
}

fn index_field(path: &Path, no: usize, tok: Option<&str>, what: &str, bound: usize) -> CliResult<usize> {
    let tok = tok.ok_or_else(|| parse_err(path, no, format!("missing {what}")))?;
    let v: usize = tok
        .parse()
        .map_err(|_| parse_err(path, no, format!("{what} '{tok}' is not an index")))?;
    if v >= bound {
        return Err(parse_err(path, no, format!("{what} {v} out of range (< {bound})")));
    }
    Ok(v)
}

pub fn parse_edge_list(path: &Path, text: &str) -> CliResult<MultiNetwork> {
    let mut lines = content_lines(text);
    let (n, m) = parse_header(path, lines.next())?;
    let mut seen = vec![vec![false; n * n]; m];
    let mut edges = Vec::new();
    for (no, line) in lines {
        let mut toks = line.split_whitespace();
        let s = index_field(path, no, toks.next(), "sample", m)?;
        let i = index_field(path, no, toks.next(), "node", n)?;
        let j = index_field(path, no, toks.next(), "node", n)?;
        if toks.next().is_some() {
            return Err(parse_err(path, no, "expected exactly 'm i j'"));
        }
        if i == j {
            return Err(parse_err(path, no, format!("self-loop on node {i}")));
        }
        let (a, b) = (i.min(j), i.max(j));
        if std::mem::replace(&mut seen[s][a * n + b], true) {
            return Err(parse_err(path, no, format!("duplicate edge {s} {a} {b}")));
        }
        edges.push((s, a, b));
    }
    Ok(MultiNetwork::from_edges(n, m, edges)?)
}

pub fn read_edge_list(path: &Path) -> CliResult<MultiNetwork> {
    parse_edge_list(path, &read_text(path)?)
}

pub fn format_edge_list(net: &MultiNetwork) -> String {
    let mut out = format!("nodes={} samples={}\n", net.n_nodes(), net.n_samples());
    for m in 0..net.n_samples() {
        for (i, j) in pairs(net.n_nodes()) {
            if net.edge(m, i, j) == 1 {
                let _ = writeln!(out, "{m} {i} {j}");
            }
        }
    }
    out
}

/// Reads covariates for a network with `n` nodes and `m` samples.
pub fn read_covariates(path: &Path, n: usize, m: usize) -> CliResult<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let (hn, hm) = parse_header(path, lines.next())?;
    if (hn, hm) != (n, m) {
        return Err(parse_err(
            path,
            1,
            format!("header nodes={hn} samples={hm} does not match the edge list (nodes={n} samples={m})"),
        ));
    }
    let mut x = vec![vec![f64::NAN; n * n]; m];
    for (no, line) in lines {
        let mut toks = line.split_whitespace();
        let s = index_field(path, no, toks.next(), "sample", m)?;
        let i = index_field(path, no, toks.next(), "node", n)?;
        let j = index_field(path, no, toks.next(), "node", n)?;
        let tok = toks.next().ok_or_else(|| parse_err(path, no, "missing covariate value"))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(path, no, format!("covariate '{tok}' is not a number")))?;
        if toks.next().is_some() {
            return Err(parse_err(path, no, "expected exactly 'm i j x'"));
        }
        if i == j || !v.is_finite() {
            return Err(parse_err(path, no, "covariates need i != j and a finite value"));
        }
        if !x[s][i * n + j].is_nan() {
            return Err(parse_err(path, no, format!("duplicate covariate {s} {i} {j}")));
        }
        x[s][i * n + j] = v;
        x[s][j * n + i] = v;
    }
    for (s, layer) in x.iter_mut().enumerate() {
        if let Some((i, j)) = pairs(n).find(|&(i, j)| layer[i * n + j].is_nan()) {
            return Err(parse_err(path, 0, format!("no covariate for sample {s} pair {i} {j}")));
        }
        for i in 0..n {
            layer[i * n + i] = 0.0;
        }
    }
    Ok(x)
}

/// Full-precision covariates, so that a reloaded network is identical.
pub fn format_covariates(net: &MultiNetwork) -> Option<String> {
    net.has_covariates().then(|| {
        let mut out = format!("nodes={} samples={}\n", net.n_nodes(), net.n_samples());
        for m in 0..net.n_samples() {
            for (i, j) in pairs(net.n_nodes()) {
                let _ = writeln!(out, "{m} {i} {j} {}", net.covariate(m, i, j));
            }
        }
        out
    })
}

pub fn format_labels(labels: &HardMembership) -> String {
    let mut out = String::from("node,community\n");
    for (i, z) in labels.labels().iter().enumerate() {
        let _ = writeln!(out, "{i},{z}");
    }
    out
}

pub fn read_labels(path: &Path) -> CliResult<HardMembership> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    match lines.next() {
        Some((_, "node,community")) => {}
        Some((no, _)) => return Err(parse_err(path, no, "expected header 'node,community'")),
        None => return Err(parse_err(path, 1, "empty labels file")),
    }
    let mut labels = Vec::new();
    for (no, line) in lines {
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, no, "expected 'node,community'"))?;
        let node: usize = a.trim().parse().map_err(|_| parse_err(path, no, "node is not an index"))?;
        if node != labels.len() {
            return Err(parse_err(path, no, format!("expected node {}, found {node}", labels.len())));
        }
        labels.push(b.trim().parse().map_err(|_| parse_err(path, no, "community is not an index"))?);
    }
    Ok(HardMembership::from_labels(labels)?)
}

pub fn format_alpha(alpha: &MembershipProbs) -> String {
    let mut out = String::from("node");
    for q in 0..alpha.k() {
        let _ = write!(out, ",c{q}");
    }
    out.push('\n');
    for i in 0..alpha.n() {
        let _ = write!(out, "{i}");
        for &v in alpha.row(i) {
            let _ = write!(out, ",{}", format_sig9(v));
        }
        out.push('\n');
    }
    out
}

pub fn format_beta(params: &BlockParams) -> String {
    let k = params.k();
    let mut out = String::from("community");
    for l in 0..k {
        let _ = write!(out, ",c{l}");
    }
    out.push('\n');
    for q in 0..k {
        let _ = write!(out, "c{q}");
        for l in 0..k {
            let _ = write!(out, ",{}", format_sig9(params.beta(q, l)));
        }
        out.push('\n');
    }
    out
}

pub fn format_rho(params: &BlockParams) -> String {
    let mut out = String::from("community,rho\n");
    for q in 0..params.k() {
        let _ = writeln!(out, "c{q},{}", format_sig9(params.rho(q)));
    }
    out
}
