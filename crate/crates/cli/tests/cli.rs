use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ddsg(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ddsg"));
    cmd.arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("run.toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.args(args).env_remove("DDSG_WORKERS").output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Table {
    hash: String,
    header: Vec<String>,
    rows: Vec<BTreeMap<String, String>>,
}

impl Table {
    fn col(&self, name: &str) -> Vec<&str> {
        self.rows.iter().map(|r| r[name].as_str()).collect()
    }

    fn num(&self, row: usize, name: &str) -> f64 {
        self.rows[row][name].parse().unwrap_or_else(|_| panic!("{name} is not numeric"))
    }
}

fn read(path: &Path) -> Table {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, body) = text.split_once('\n').unwrap();
    let hash = first.strip_prefix("# config_hash=").expect("hash line").to_string();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd
        .records()
        .map(|r| {
            let r = r.unwrap();
            assert_eq!(r.len(), header.len(), "{}", path.display());
            header.iter().cloned().zip(r.iter().map(String::from)).collect()
        })
        .collect();
    Table { hash, header, rows }
}

fn out_file(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join("out").join(name)
}

const SMALL_SOLVE: &str = r#"
[grid]
max_level = 3
[time_iteration]
max_steps = 2
euler_samples = 200
policy_change_samples = 100
"#;

#[test]
fn approx_exact_cut_and_grid_count() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
[grid]
max_level = 3
eps_gamma = 0.0
[hdmr]
k_max = 1
[approx]
function = "polynomial"
dim = 4
power = 1
"#;
    ok(&ddsg(dir.path(), Some(cfg), &["approx"]));
    let s = read(&out_file(&dir, "approx_summary.csv"));
    assert_eq!(s.rows[0]["ddsg_points"], "29");
    assert!(s.num(0, "exact_cut_linf") <= 1e-10);
    assert!(s.num(0, "ddsg_linf") <= 1e-10);

    // ratios grow with d at k_max = 1
    let counts = read(&out_file(&dir, "approx_counts.csv"));
    let first: Vec<f64> = counts
        .rows
        .iter()
        .filter(|r| r["k_max"] == "1")
        .map(|r| r["ratio_sg_to_ddsg"].parse().unwrap())
        .collect();
    assert_eq!(first.len(), 2);
    assert!(first[1] > first[0]);
    assert!(out_file(&dir, "approx_ddsg.json").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let cases = [
        "[grid]\nmax_levl = 3\n",
        "[hdmr]\nk_max = 0\n",
        "[time_iteration]\nrng_seed = 3\n",
        "[approx]\nfunction = \"sqrt_product\"\ndim = 4\n",
        "[model]\nbeta = 1.5\n",
        "not toml at all [",
    ];
    for text in cases {
        let dir = TempDir::new().unwrap();
        let out = ddsg(dir.path(), Some(text), &["approx"]);
        assert_eq!(out.status.code(), Some(1), "{text}");
    }
    let dir = TempDir::new().unwrap();
    let missing = ddsg(dir.path(), None, &["--config", "/nonexistent/run.toml", "approx"]);
    assert_eq!(missing.status.code(), Some(1));
    let no_command = ddsg(dir.path(), None, &[]);
    assert_eq!(no_command.status.code(), Some(1));
    let k_too_large = ddsg(dir.path(), Some("[hdmr]\nk_max = 5\n"), &["solve"]);
    assert_eq!(k_too_large.status.code(), Some(1));
}

#[test]
fn solve_smoke_and_reproducible() {
    let dir = TempDir::new().unwrap();
    ok(&ddsg(dir.path(), Some(SMALL_SOLVE), &["solve"]));
    let reports = read(&out_file(&dir, "solve_reports.csv"));
    assert!(!reports.rows.is_empty());
    let summary = read(&out_file(&dir, "solve_summary.csv"));
    assert_eq!(summary.rows[0]["k_max"], "1");
    assert_eq!(summary.rows[0]["eps_eta"], "0.0001");
    assert_eq!(summary.rows[0]["eps_rho"], "0.0001");
    assert_eq!(summary.rows[0]["max_level"], "3");
    assert_eq!(summary.rows[0]["eps_gamma"], "0.001");
    assert_eq!(summary.rows[0]["d"], "4");
    let first = std::fs::read_to_string(out_file(&dir, "solve_summary.csv")).unwrap();
    let policy = std::fs::read_to_string(out_file(&dir, "policy.json")).unwrap();

    let again = TempDir::new().unwrap();
    ok(&ddsg(again.path(), Some(SMALL_SOLVE), &["--workers", "3", "solve"]));
    assert_eq!(std::fs::read_to_string(out_file(&again, "solve_summary.csv")).unwrap(), first);
    assert_eq!(std::fs::read_to_string(out_file(&again, "policy.json")).unwrap(), policy);

    let reseeded = TempDir::new().unwrap();
    ok(&ddsg(reseeded.path(), Some(SMALL_SOLVE), &["--seed", "9", "solve"]));
    assert_ne!(read(&out_file(&reseeded, "solve_summary.csv")).hash, summary.hash);
}

#[test]
fn solver_abort_exits_with_two_and_keeps_diagnostics() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{SMALL_SOLVE}[solver]\nnewton_tol = 1e-300\nmax_newton_iters = 3\n");
    let out = ddsg(dir.path(), Some(&cfg), &["solve"]);
    assert_eq!(out.status.code(), Some(2));
    let failures = read(&out_file(&dir, "solve_failures.csv"));
    assert!(!failures.rows.is_empty());
    assert_eq!(read(&out_file(&dir, "solve_reports.csv")).header[0], "step");
}

#[test]
fn analyze_reports_every_order_two_index() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
[grid]
max_level = 3
[analyze]
warmup_steps = 1
k_max = 2
eps_eta_sweep = [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0]
[time_iteration]
euler_samples = 200
policy_change_samples = 100
"#;
    ok(&ddsg(dir.path(), Some(cfg), &["analyze"]));
    let eta = read(&out_file(&dir, "analyze_eta.csv"));
    assert_eq!(eta.col("order").iter().filter(|o| **o == "2").count(), 6);
    let orders = read(&out_file(&dir, "analyze_orders.csv"));
    for (i, r) in orders.rows.iter().enumerate() {
        if r["eta_min"].is_empty() {
            continue;
        }
        let (lo, mid, hi) = (orders.num(i, "eta_min"), orders.num(i, "eta_avg"), orders.num(i, "eta_max"));
        assert!(lo <= mid && mid <= hi);
    }
    let sweep = read(&out_file(&dir, "analyze_sweep.csv"));
    let accepted: Vec<usize> = sweep.col("accepted").iter().map(|v| v.parse().unwrap()).collect();
    assert!(accepted.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(accepted[0], 4 + 6);
    assert_eq!(*accepted.last().unwrap(), 4);
}

#[test]
fn bench_reports_speedup_and_equivalence() {
    let dir = TempDir::new().unwrap();
    ok(&ddsg(dir.path(), Some("[bench]\npoints = 300\n"), &["bench"]));
    let s = read(&out_file(&dir, "bench_summary.csv"));
    assert!(s.num(0, "max_abs_diff") <= 1e-12);
    assert!(s.num(0, "time_ratio") < 1.0);
    let t = read(&out_file(&dir, "bench_times.csv"));
    assert_eq!(t.col("variant"), ["vectorized", "naive"]);
    assert!(t.num(0, "interpolations_per_point") < t.num(1, "interpolations_per_point"));

    // one slot: nothing to deduplicate, the ratio stays near one
    let single = TempDir::new().unwrap();
    ok(&ddsg(single.path(), Some("[bench]\ndim = 1\nk_max = 1\npoints = 2000\n"), &["bench"]));
    let r = read(&out_file(&single, "bench_summary.csv")).num(0, "time_ratio");
    assert!(r > 0.2 && r < 5.0, "ratio {r}");
}

#[test]
fn every_artifact_carries_schema_and_hash() {
    let dir = TempDir::new().unwrap();
    let cfg = "[grid]\nmax_level = 3\n[bench]\npoints = 100\n";
    ok(&ddsg(dir.path(), Some(cfg), &["approx"]));
    ok(&ddsg(dir.path(), Some(cfg), &["bench"]));
    let expected: &[(&str, &[&str])] = &[
        (
            "approx_summary.csv",
            &[
                "function", "dim", "k_max", "eps_eta", "eps_rho", "max_level", "eps_gamma", "boundary", "sg_points",
                "ddsg_points", "ratio_sg_to_ddsg", "sg_linf", "sg_l2", "ddsg_linf", "ddsg_l2", "exact_cut_linf",
            ],
        ),
        ("approx_orders.csv", &["order", "accepted", "rejected", "rho", "grid_points"]),
        ("approx_eta.csv", &["index", "order", "eta", "accepted"]),
        ("approx_counts.csv", &["dim", "k_max", "max_level", "sg_points", "ddsg_points", "ratio_sg_to_ddsg"]),
        (
            "bench_times.csv",
            &["variant", "mean_s", "stddev_s", "repetitions", "points", "interpolations_per_point", "active_slots"],
        ),
        ("bench_summary.csv", &["dim", "k_max", "max_level", "max_abs_diff", "time_ratio"]),
    ];
    let mut hashes = Vec::new();
    for (name, header) in expected {
        let t = read(&out_file(&dir, name));
        assert_eq!(t.header, *header, "{name}");
        assert_eq!(t.hash.len(), 64);
        assert!(t.hash.chars().all(|c| c.is_ascii_hexdigit()));
        hashes.push(t.hash);
    }
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    let entries = std::fs::read_dir(dir.path().join("out")).unwrap().count();
    assert_eq!(entries, expected.len() + 1);
}

#[test]
fn approx_is_worker_independent() {
    let cfg = "[grid]\nmax_level = 4\n[hdmr]\nk_max = 2\n[approx]\nfunction = \"product_peak\"\n";
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    ok(&ddsg(a.path(), Some(cfg), &["--workers", "1", "approx"]));
    ok(&ddsg(b.path(), Some(cfg), &["--workers", "4", "approx"]));
    for name in ["approx_summary.csv", "approx_orders.csv", "approx_eta.csv", "approx_ddsg.json"] {
        assert_eq!(
            std::fs::read(out_file(&a, name)).unwrap(),
            std::fs::read(out_file(&b, name)).unwrap(),
            "{name}"
        );
    }
}
