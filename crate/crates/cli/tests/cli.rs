use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use depnet::simulator::Balance;
use depnet::SimConfig;

fn depnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depnet"))
        .args(args)
        .env_remove("DEPNET_THREADS")
        .output()
        .expect("run depnet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_sim_config(path: &Path, sim: &SimConfig) {
    #[derive(serde::Serialize)]
    struct Wrapper<'a> {
        simulation: &'a SimConfig,
    }
    fs::write(path, toml_text(&Wrapper { simulation: sim })).unwrap();
}

fn toml_text<T: serde::Serialize>(v: &T) -> String {
    toml::to_string(v).unwrap()
}

#[test]
fn simulate_writes_preset_sized_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    write_sim_config(&cfg, &SimConfig::weak_signal(Balance::Balanced, 6, 0.6, 11));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = depnet(&["simulate", "--config", p(&cfg), "--out", p(out)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    let edges = fs::read_to_string(a.join("edges.txt")).unwrap();
    assert!(edges.starts_with("nodes=40 samples=6\n"));
    let labels = fs::read_to_string(a.join("labels.csv")).unwrap();
    let communities: std::collections::BTreeSet<&str> =
        labels.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(communities.len(), 2);
    for f in ["edges.txt", "labels.csv", "covariates.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert_eq!(code(&depnet(&["simulate", "--config", p(&cfg), "--out", p(&c), "--seed", "12"])), 0);
    assert_ne!(fs::read(a.join("edges.txt")).unwrap(), fs::read(c.join("edges.txt")).unwrap());
}

#[test]
fn malformed_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let mut text = toml_text(&SimConfig::weak_signal(Balance::Balanced, 4, 0.0, 1));
    text = format!("[simulation]\n{text}").replace("n_samples", "n_sample");
    fs::write(&cfg, text).unwrap();
    let res = depnet(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("n_sample"), "{}", stderr(&res));
}

#[test]
fn strong_signal_pipeline_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    write_sim_config(&cfg, &SimConfig::strong_signal(Balance::Unbalanced, 60, 0.0, 4));
    let data = dir.path().join("data");
    assert_eq!(code(&depnet(&["simulate", "--config", p(&cfg), "--out", p(&data)])), 0);
    let fit_dir = dir.path().join("fit");
    let res = depnet(&[
        "fit",
        p(&data.join("edges.txt")),
        "--covariates",
        p(&data.join("covariates.txt")),
        "--out",
        p(&fit_dir),
        "--method",
        "vem",
        "--seed",
        "4",
    ]);
    assert!(matches!(code(&res), 0 | 2), "{}", stderr(&res));
    for f in ["labels.csv", "alpha.csv", "beta.csv", "rho.csv", "trace.csv", "summary.txt"] {
        assert!(fit_dir.join(f).exists(), "{f}");
    }
    let eval = depnet(&[
        "eval",
        "--labels",
        p(&fit_dir.join("labels.csv")),
        "--truth",
        p(&data.join("labels.csv")),
    ]);
    assert_eq!(code(&eval), 0);
    let ari: f64 = stdout(&eval).trim().strip_prefix("ari=").unwrap().parse().unwrap();
    assert!(ari >= 0.9, "ari {ari}");
}

fn small_data(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("sim.toml");
    let mut sim = SimConfig::weak_signal(Balance::Balanced, 8, 0.6, 3);
    sim.community_sizes = vec![6, 6];
    write_sim_config(&cfg, &sim);
    let data = dir.join("data");
    assert_eq!(code(&depnet(&["simulate", "--config", p(&cfg), "--out", p(&data)])), 0);
    data
}

#[test]
fn order_none_matches_vem_method() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = |flag: &str, value: &str, out: &str| {
        let out = dir.path().join(out);
        let res = depnet(&[
            "fit",
            p(&data.join("edges.txt")),
            "--covariates",
            p(&data.join("covariates.txt")),
            "--out",
            p(&out),
            flag,
            value,
            "--max-iters",
            "40",
        ]);
        assert!(matches!(code(&res), 0 | 2), "{}", stderr(&res));
        out
    };
    let a = run("--order", "none", "a");
    let b = run("--method", "vem", "b");
    for f in ["labels.csv", "alpha.csv", "beta.csv", "rho.csv", "trace.csv", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn k_above_node_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    fs::write(&edges, "nodes=5 samples=2\n0 0 1\n1 2 3\n").unwrap();
    let res = depnet(&["fit", p(&edges), "--out", p(&dir.path().join("o")), "--k", "6"]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("exceeds the number of nodes"), "{}", stderr(&res));
}

#[test]
fn iteration_limit_exits_two_with_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out = dir.path().join("o");
    let res = depnet(&[
        "fit",
        p(&data.join("edges.txt")),
        "--covariates",
        p(&data.join("covariates.txt")),
        "--out",
        p(&out),
        "--max-iters",
        "1",
        "--epsilon",
        "1e-12",
    ]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("converged=false"));
}

#[test]
fn parse_errors_exit_one_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    fs::write(&edges, "nodes=3 samples=1\n0 0 1\n0 0 5\n").unwrap();
    let res = depnet(&["fit", p(&edges), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains(":3:"), "{}", stderr(&res));
    assert_eq!(code(&depnet(&["fit"])), 1);
    assert_eq!(code(&depnet(&["frobnicate"])), 1);
    assert_eq!(code(&depnet(&["--help"])), 0);
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = |threads: Option<&str>, out: &str| {
        let out = dir.path().join(out);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_depnet"));
        cmd.args(["fit", p(&data.join("edges.txt")), "--out", p(&out), "--max-iters", "30"]);
        match threads {
            Some(t) => cmd.env("DEPNET_THREADS", t),
            None => cmd.env_remove("DEPNET_THREADS"),
        };
        (cmd.output().unwrap(), out)
    };
    let (r1, a) = run(Some("1"), "a");
    let (r2, b) = run(None, "b");
    assert!(matches!(code(&r1), 0 | 2) && code(&r1) == code(&r2));
    assert_eq!(fs::read(a.join("alpha.csv")).unwrap(), fs::read(b.join("alpha.csv")).unwrap());
    let (bad, _) = run(Some("zero"), "c");
    assert_eq!(code(&bad), 1);
}

#[test]
fn fitted_network_round_trips_through_the_edge_list() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let original = fs::read_to_string(data.join("edges.txt")).unwrap();
    let out = dir.path().join("ingest");
    let res = depnet(&["ingest", p(&data.join("edges.txt")), "--out", p(&out), "--min-degree", "0"]);
    assert!(matches!(code(&res), 0 | 3), "{}", stderr(&res));
    if code(&res) == 0 {
        assert_eq!(fs::read_to_string(out.join("filtered.txt")).unwrap(), original);
    }
}

/// 214 nodes over 364 layers. Nodes 0..51 form two dense groups in every
/// layer; the remaining nodes touch at most 9 distinct core nodes overall.
fn planted_stack() -> String {
    let (n, m, core) = (214, 364, 51);
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
    for (layer, list) in edges.iter_mut().enumerate() {
        for i in 0..core {
            for j in (i + 1)..core {
                let same = (i < 25) == (j < 25);
                if same && (i + j + layer) % 3 != 0 {
                    list.push((i, j));
                }
            }
        }
    }
    for v in core..n {
        let degree = if v % 2 == 0 { 9 } else { 1 + v % 7 };
        for d in 0..degree {
            let u = (v * 7 + d * 5) % core;
            edges[(v + d * 37) % m].push((u, v));
        }
    }
    let mut out = format!("nodes={n} samples={m}\n");
    for (layer, list) in edges.iter_mut().enumerate() {
        list.sort_unstable();
        list.dedup();
        for &(i, j) in list.iter() {
            let _ = writeln!(out, "{layer} {i} {j}");
        }
    }
    out
}

#[test]
fn ingest_keeps_the_planted_core() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("stack.txt");
    fs::write(&edges, planted_stack()).unwrap();
    let out = dir.path().join("core");
    let res = depnet(&["ingest", p(&edges), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("kept_nodes=51\n"), "{report}");
    assert!(report.contains("kept_layers=364\n"), "{report}");
    assert!(report.contains("\nk=2\n"), "{report}");
    assert!(fs::read_to_string(out.join("filtered.txt")).unwrap().starts_with("nodes=51 samples=364\n"));

    let res = depnet(&["ingest", p(&edges), "--out", p(&dir.path().join("none")), "--min-degree", "1000"]);
    assert_eq!(code(&res), 3);
}

/// A 20-clique with five pendant nodes hanging off it.
fn clique_with_pendants() -> String {
    let mut text = String::from("nodes=25 samples=1\n");
    for i in 0..20 {
        for j in (i + 1)..20 {
            let _ = writeln!(text, "0 {i} {j}");
        }
    }
    for v in 20..25 {
        let _ = writeln!(text, "0 {} {v}", v - 20);
    }
    text
}

#[test]
fn zero_threshold_keeps_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("pendants.txt");
    fs::write(&edges, clique_with_pendants()).unwrap();
    let all = dir.path().join("all");
    let res = depnet(&["ingest", p(&edges), "--out", p(&all), "--min-degree", "0"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(fs::read_to_string(all.join("report.txt")).unwrap().contains("kept_nodes=25\n"));
    let core = dir.path().join("core");
    assert_eq!(code(&depnet(&["ingest", p(&edges), "--out", p(&core)])), 0);
    assert!(fs::read_to_string(core.join("report.txt")).unwrap().contains("kept_nodes=20\n"));
}

#[test]
fn single_giant_community_layer_is_kept() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("clique.txt");
    let mut text = String::from("nodes=20 samples=1\n");
    for i in 0..20 {
        for j in (i + 1)..20 {
            let _ = writeln!(text, "0 {i} {j}");
        }
    }
    fs::write(&edges, text).unwrap();
    let out = dir.path().join("o");
    let res = depnet(&["ingest", p(&edges), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("kept_layers=1\n") && report.contains("\nk=1\n"), "{report}");
}

#[test]
fn bench_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    fs::write(
        &cfg,
        "[bench]\nn_replicates = 1\nmethods = [\"vem\", \"bahadur2\"]\nlambdas = [1.0]\n\n[fit]\nmax_iters = 3\nn_inits = 1\n",
    )
    .unwrap();
    let out = dir.path().join("bench");
    let res = depnet(&["bench", "--preset", "fig2-lambda-sweep", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("fig2-lambda-sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("fig2-lambda-sweep_records.csv").exists());
    assert!(stdout(&res).contains("Bahadur2nd"));
    let bad = depnet(&["bench", "--preset", "table9", "--out", p(&out)]);
    assert_eq!(code(&bad), 1);
}
