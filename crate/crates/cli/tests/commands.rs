use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_commtrace");

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("COMMTRACE_LOG_LEVEL", "error").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn simulate(name: &str, out: &Path) {
    let o = run(&["simulate", scenario(name).to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn simulate_writes_logs_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", scenario("minimal-2proc.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("simulated 2 processes, 2 messages"), "{}", stdout(&o));
    let names: Vec<String> = dir_contents(dir.path()).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        ["ground-truth.json", "n0.p0.alloc.log", "n0.p0.comm.log", "n1.p0.alloc.log", "n1.p0.comm.log", "topology.json"]
    );
}

#[test]
fn simulate_is_deterministic_and_seed_matters() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate("ring-node-leader-drift.json", a.path());
    simulate("ring-node-leader-drift.json", b.path());
    assert_eq!(dir_contents(a.path()), dir_contents(b.path()));

    let c = tempfile::tempdir().unwrap();
    let sc = scenario("ring-node-leader-drift.json");
    let o = run(&["simulate", sc.to_str().unwrap(), "--out", c.path().to_str().unwrap(), "--seed", "99"]);
    assert!(o.status.success());
    assert_ne!(dir_contents(a.path()), dir_contents(c.path()));
}

#[test]
fn unsupported_collective_size_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("recursive-doubling-6-ranks.json");
    let o = run(&["simulate", sc.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnsupportedSize"), "{}", stderr(&o));
}

#[test]
fn malformed_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"topology\": {}, \"workloads\": []}").unwrap();
    let o = run(&["simulate", path.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"), "{}", stderr(&o));
}

#[test]
fn correlate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    simulate("ring-node-leader-drift.json", dir.path());
    let o = run(&["correlate", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains(" 0 issues (0 ambiguities)"), "{}", stdout(&o));

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("match-report.json")).unwrap()).unwrap();
    assert_eq!(report["issues"].as_array().unwrap().len(), 0);
    let curated = dir.path().join("curated.trace");
    let trace = commtrace_core::model::read_curated(&std::fs::read(&curated).unwrap()).unwrap();
    let truth: commtrace_core::sim::GroundTruth =
        serde_json::from_slice(&std::fs::read(dir.path().join("ground-truth.json")).unwrap()).unwrap();
    assert!(truth.diff(&trace).is_empty());

    let c = curated.to_str().unwrap();
    let o = run(&["analyze", c, "top", "--transport", "rc_mlx5", "--transport", "cuda_ipc", "--metric", "count"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let top: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for row in top["rows"].as_array().unwrap() {
        assert!(["rc_mlx5", "cuda_ipc"].contains(&row["transport"].as_str().unwrap()));
    }

    // the printed document is exactly the library rendering
    let a = commtrace_core::analytics::Analyzer::new(trace).unwrap();
    let f = commtrace_core::analytics::FilterSpec { procs: ["n1.p0".to_string()].into(), ..Default::default() };
    let o = run(&["analyze", c, "dgraph", "--proc", "n1.p0"]);
    let mut expected = a.render(commtrace_core::analytics::View::Dgraph, &f, None).unwrap();
    expected.push(b'\n');
    assert_eq!(o.stdout, expected);

    let o = run(&["analyze", c, "timeline", "--bin-ns", "1000000"]);
    let tl: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(tl["bin_ns"], 1_000_000);
}

#[test]
fn no_ucp_attribution_changes_rendezvous_mpi_function() {
    let dir = tempfile::tempdir().unwrap();
    simulate("minimal-2proc.json", dir.path());
    let mpi_of_get = |flag: Option<&str>| -> Vec<String> {
        let out = dir.path().join(flag.unwrap_or("default"));
        let mut args = vec!["correlate", dir.path().to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend(flag);
        assert!(run(&args).status.success());
        let o = run(&["analyze", out.join("curated.trace").to_str().unwrap(), "matrix", "--uct-fn", "get_zcopy"]);
        let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        m["breakdown"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|b| b["by_mpi_fn"].as_object().unwrap().keys().cloned().collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(mpi_of_get(None), ["MPI_Isend", "MPI_Isend"]);
    assert_eq!(mpi_of_get(Some("--no-ucp-attribution")), ["MPI_Wait", "MPI_Wait"]);
}

#[test]
fn correlate_reports_corrupt_line() {
    let dir = tempfile::tempdir().unwrap();
    simulate("alltoall-8x4.json", dir.path());
    let path = dir.path().join("n3.p2.comm.log");
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<String> =
        text.lines().enumerate().map(|(i, l)| if i == 16 { l[..l.len() / 2].into() } else { l.into() }).collect();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = run(&["correlate", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("n3.p2.comm.log") && err.contains("line 17"), "{err}");
    assert!(!dir.path().join("curated.trace").exists());
}

#[test]
fn correlate_without_alloc_logs_is_all_host() {
    let dir = tempfile::tempdir().unwrap();
    simulate("minimal-2proc.json", dir.path());
    for p in ["n0.p0", "n1.p0"] {
        std::fs::remove_file(dir.path().join(format!("{p}.alloc.log"))).unwrap();
    }
    assert!(run(&["correlate", dir.path().to_str().unwrap()]).status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("match-report.json")).unwrap()).unwrap();
    assert_eq!(report["missing_alloc_logs"], serde_json::json!(["n0.p0", "n1.p0"]));
    assert_eq!(report["gpu_endpoints"], 0);
}

#[test]
fn analyze_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    simulate("minimal-2proc.json", dir.path());
    assert!(run(&["correlate", dir.path().to_str().unwrap()]).status.success());
    let c = dir.path().join("curated.trace");
    let c = c.to_str().unwrap();
    for args in [
        vec!["analyze", c, "heatmap"],
        vec!["analyze", c, "matrix", "--transport", "ethernet"],
        vec!["analyze", c, "matrix", "--metric", "latency"],
        vec!["analyze", c, "matrix", "--proc", "n9.p9"],
        vec!["analyze", c, "matrix", "--t-min", "5", "--t-max", "4"],
        vec!["analyze", c, "timeline", "--bin-ns", "0"],
        vec!["analyze", "/nonexistent/curated.trace", "matrix"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn serve_rejects_privileged_port() {
    let o = run(&["serve", "whatever.trace", "--port", "80"]);
    assert_eq!(o.status.code(), Some(2));
}
