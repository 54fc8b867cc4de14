//! End-to-end tests of the `qoplab` binary: flag/config plumbing, CSV and
//! report emission, caching, determinism, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn qoplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qoplab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn dim_run_writes_csv_report_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let cache_dir = dir.path().join("cache");
    let args = [
        "dim",
        "--p",
        "2,3",
        "--grid",
        "16",
        "--out",
        out_dir.to_str().unwrap(),
        "--cache",
        cache_dir.to_str().unwrap(),
    ];

    let cold = qoplab(&args);
    assert_eq!(code(&cold), 0, "stderr: {}", String::from_utf8_lossy(&cold.stderr));
    let csv_path = out_dir.join("dim.csv");
    let cold_csv = read(&csv_path);
    let mut lines = cold_csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "p,N,expected_dim,observed_dim,cluster_width,next_eigenvalue"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&first[..4], &["2", "16", "2", "2"]);

    let report: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("report_dim.json"))).unwrap();
    assert_eq!(report["experiment"], "dim");
    assert_eq!(report["passed"], true);
    assert_eq!(report["records"][0]["solver_path"], "iterative");
    assert_eq!(report["records"][0]["cached"], false);
    assert!(cache_dir.read_dir().unwrap().any(|e| {
        e.unwrap().path().extension().map(|x| x == "eig").unwrap_or(false)
    }));

    // Warm run: identical CSV bytes, records marked as cache hits, and
    // the same config hash.
    let warm = qoplab(&args);
    assert_eq!(code(&warm), 0);
    assert_eq!(read(&csv_path), cold_csv, "warm cache changed the CSV");
    let warm_report: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("report_dim.json"))).unwrap();
    assert_eq!(warm_report["records"][0]["cached"], true);
    assert_eq!(warm_report["config_hash"], report["config_hash"]);
}

#[test]
fn config_file_provides_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    std::fs::write(
        &conf,
        format!(
            "# gap survey\np = 2,3\ngrid = 12\nout = {}\n",
            out_a.display()
        ),
    )
    .unwrap();

    // File settings only.
    let run = qoplab(&["dim", "--config", conf.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert!(read(&out_a.join("dim.csv")).contains("2,12,2,2"));

    // Flags win over the file.
    let run = qoplab(&[
        "dim",
        "--config",
        conf.to_str().unwrap(),
        "--grid",
        "16",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    assert!(read(&out_b.join("dim.csv")).contains("2,16,2,2"));
}

#[test]
fn configuration_errors_exit_2() {
    // Missing flux list.
    let run = qoplab(&["dim"]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("missing flux list"));

    // Unknown experiment.
    let run = qoplab(&["bogus", "--p", "2"]);
    assert_eq!(code(&run), 2);

    // Model/experiment mismatch.
    let run = qoplab(&["heat", "--p", "2", "--model", "flat-torus-4"]);
    assert_eq!(code(&run), 2);

    // Descending flux list.
    let run = qoplab(&["dim", "--p", "8,4"]);
    assert_eq!(code(&run), 2);
}

#[test]
fn quantitative_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("strict.conf");
    // A gap-ratio demand no lattice can meet turns a healthy run into a
    // quantitative failure without touching the physics.
    std::fs::write(&conf, "p = 2\ngrid = 16\ntol.gap_ratio = 1e6\n").unwrap();
    let run = qoplab(&[
        "gap",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 1, "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stderr).contains("gap ratio"));
    // The survey itself still ran and was written out.
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("out/report_gap.json"))).unwrap();
    assert_eq!(report["passed"], false);
    assert!(report["records"][0]["dim_observed"].as_u64().is_some());
}

#[test]
fn no_cache_flag_disables_config_cache() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    let cache_dir = dir.path().join("cache");
    std::fs::write(
        &conf,
        format!("p = 2\ngrid = 12\ncache = {}\n", cache_dir.display()),
    )
    .unwrap();
    let run = qoplab(&[
        "dim",
        "--config",
        conf.to_str().unwrap(),
        "--no-cache",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    assert!(!cache_dir.exists(), "--no-cache must not touch the cache dir");
}

#[test]
fn plot_flag_emits_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let run = qoplab(&[
        "dim",
        "--p",
        "2,3",
        "--grid",
        "12",
        "--plot",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    let svg = read(&out_dir.join("dim.svg"));
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("</svg>"));
}
