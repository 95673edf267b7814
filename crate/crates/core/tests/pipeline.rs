use std::path::Path;

use commtrace_core::analytics::{Analyzer, FilterSpec, View};
use commtrace_core::correlate::{correlate, CorrelateError, CorrelateOptions, IssueKind, TraceSet};
use commtrace_core::model::{read_curated, write_curated, ClusterTopology, EndpointKind};
use commtrace_core::sim::{
    simulate, AllreduceAlg, AllreduceStyle, BufferKind, GroundTruth, ProtocolConfig, Scenario, SimOutput,
    WorkloadSpec,
};

fn scenario() -> Scenario {
    Scenario {
        topology: ClusterTopology::uniform(2, 2, 2, 2),
        protocol: ProtocolConfig::default(),
        workloads: vec![
            WorkloadSpec::all_to_all(64 << 10, 2, BufferKind::Gpu),
            WorkloadSpec::allreduce(AllreduceAlg::Ring, AllreduceStyle::PerRank, 4096, 1, BufferKind::Host),
        ],
    }
}

fn write_files(out: &SimOutput, dir: &Path) {
    for (name, bytes) in out.files() {
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

#[test]
fn directory_round_trip_recovers_ground_truth() {
    let out = simulate(&scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_files(&out, dir.path());

    let set = TraceSet::load_dir(dir.path()).unwrap();
    assert_eq!(set.processes().len(), 4);
    assert_eq!(set.topology(), Some(&out.topology));
    let (trace, report) = correlate(&set, &CorrelateOptions::default());
    assert!(report.issues.is_empty(), "{:?}", report.issues);

    let truth: GroundTruth =
        serde_json::from_slice(&std::fs::read(dir.path().join("ground-truth.json")).unwrap()).unwrap();
    assert_eq!(truth, out.truth);
    assert_eq!(truth.diff(&trace), Vec::<String>::new());

    // the in-memory path gives the same trace
    let (direct, _) = correlate(&TraceSet::from_sim(&out), &CorrelateOptions::default());
    assert_eq!(direct, trace);

    let path = dir.path().join("trace.json");
    std::fs::write(&path, write_curated(&trace).unwrap()).unwrap();
    let back = read_curated(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(back, trace);

    let a = Analyzer::new(back).unwrap();
    for view in View::ALL {
        let bytes = a.render(view, &FilterSpec::default(), None).unwrap();
        serde_json::from_slice::<serde_json::Value>(&bytes).unwrap();
    }
}

#[test]
fn missing_alloc_logs_fall_back_to_host() {
    let out = simulate(&scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_files(&out, dir.path());
    std::fs::remove_file(dir.path().join("n0.p1.alloc.log")).unwrap();

    let (trace, report) = correlate(&TraceSet::load_dir(dir.path()).unwrap(), &CorrelateOptions::default());
    assert_eq!(report.missing_alloc_logs, vec!["n0.p1".to_string()]);
    let touching: Vec<_> = trace.comms.iter().filter(|c| c.src_proc == "n0.p1" || c.dst_proc == "n0.p1").collect();
    assert!(!touching.is_empty());
    for c in touching {
        if c.src_proc == "n0.p1" {
            assert_eq!((c.src_endpoint_kind, c.src_gpu), (EndpointKind::Host, None));
        }
        if c.dst_proc == "n0.p1" {
            assert_eq!((c.dst_endpoint_kind, c.dst_gpu), (EndpointKind::Host, None));
        }
    }
    // other processes keep their gpus
    assert!(trace.comms.iter().any(|c| c.src_proc == "n1.p0" && c.src_endpoint_kind == EndpointKind::Gpu));
}

#[test]
fn missing_process_is_reported_not_guessed() {
    let out = simulate(&scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_files(&out, dir.path());
    std::fs::remove_file(dir.path().join("n1.p1.comm.log")).unwrap();

    let (trace, report) = correlate(&TraceSet::load_dir(dir.path()).unwrap(), &CorrelateOptions::default());
    assert!(trace.comms.iter().all(|c| c.src_proc != "n1.p1" && c.dst_proc != "n1.p1"));
    assert!(report.count(IssueKind::UnresolvedAddress) > 0);
    assert_eq!(report.ambiguities(), 0);
}

#[test]
fn corrupt_line_names_file_and_line() {
    let out = simulate(&scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_files(&out, dir.path());
    let path = dir.path().join("n1.p0.comm.log");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"kind\":\"uct_op\",";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let err = TraceSet::load_dir(dir.path()).unwrap_err();
    let CorrelateError::Log(e) = &err else { panic!("unexpected {err}") };
    assert_eq!(e.path(), path);
    assert_eq!(e.line(), Some(7));
    let msg = err.to_string();
    assert!(msg.contains("n1.p0.comm.log") && msg.contains("line 7"), "{msg}");
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(TraceSet::load_dir(dir.path()), Err(CorrelateError::NoLogs(_))));
}

#[test]
fn bad_topology_is_an_error() {
    let out = simulate(&scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_files(&out, dir.path());
    std::fs::write(dir.path().join("topology.json"), "{\"nodes\": 3}").unwrap();
    assert!(matches!(TraceSet::load_dir(dir.path()), Err(CorrelateError::Topology { .. })));
}
