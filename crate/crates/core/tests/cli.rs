use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use densmon::cli::{read_results, read_sidecar, Manifest, REPORT_HEADER};

const CONFIG: &str = "\
seed 5
steps 10
trace builtin 12s
objective maximize budget 900
edge {
  src(42.0.0.0/8) { packet_size flowlet_duration }
  src(99.0.0.0/8) & proto(UDP) { burst_size }
}
";

fn densmon(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densmon"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn run_once(dir: &Path, out: &str) -> Output {
    densmon(&["run", "run.conf", "--out", out], dir)
}

#[test]
fn run_writes_one_record_per_task_per_step() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), CONFIG).unwrap();
    let first = run_once(dir.path(), "a");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = run_once(dir.path(), "b");
    assert!(second.status.success());

    let a = fs::read(dir.path().join("a/results.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b/results.jsonl")).unwrap();
    assert_eq!(a, b, "same config and seed must give identical results");

    let records = read_results(a.as_slice()).unwrap();
    assert_eq!(records.len(), 30);
    assert!(records.iter().filter(|r| r.step == 0).all(|r| r.accuracy.is_none()));
    assert!(records.iter().filter(|r| r.step > 1).any(|r| r.accuracy.is_some()));
    assert!(records.iter().all(|r| r.location == "edge"));

    let out = dir.path().join("a");
    let manifest: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.records, 30);
    assert_eq!(manifest.steps, 10);
    for r in &records {
        let Some(file) = &r.density else { continue };
        let entry = manifest.densities.iter().find(|d| &d.file == file).expect("record density is listed");
        let values = read_sidecar(&out, entry).unwrap();
        let dx = (entry.hi - entry.lo) / (entry.points - 1) as f64;
        let inner: f64 = values[1..values.len() - 1].iter().sum();
        let mass = dx * (inner + 0.5 * (values[0] + values[values.len() - 1]));
        assert!((mass - 1.0).abs() < 1e-6, "{file} integrates to {mass}");
        assert!(values.iter().all(|v| *v >= 0.0));
    }
    assert!(records.iter().filter(|r| r.density.is_some()).count() >= 27);
}

#[test]
fn report_projects_results_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), CONFIG.replace("steps 10", "steps 4")).unwrap();
    assert!(run_once(dir.path(), "out").status.success());
    let report = densmon(&["report", "out"], dir.path());
    assert!(report.status.success());
    let text = String::from_utf8(report.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), REPORT_HEADER.join(","));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 12);
    let keys: Vec<(u32, u64)> = rows.iter().map(|r| (r[1].parse().unwrap(), r[0].parse().unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let file = densmon(&["report", "out/results.jsonl", "--out", "report.csv"], dir.path());
    assert!(file.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("report.csv")).unwrap(), text);
}

#[test]
fn generated_trace_can_be_replayed() {
    let dir = tempfile::tempdir().unwrap();
    let gen = densmon(&["generate", "builtin", "trace.csv", "--seed", "9", "--duration", "3"], dir.path());
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let again = densmon(&["generate", "builtin", "again.csv", "--seed", "9", "--duration", "3"], dir.path());
    assert!(again.status.success());
    let trace = fs::read(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace, fs::read(dir.path().join("again.csv")).unwrap());
    assert!(trace.starts_with(b"ts_ns,src_ip,dst_ip,proto,sport,dport,size,fin\n"));

    let conf = "steps 3\ntrace csv \"trace.csv\"\ntarget 0.9\ns1 { * { packet_size } }\n";
    fs::write(dir.path().join("run.conf"), conf).unwrap();
    let run = densmon(&["run", "run.conf", "--out", "out"], dir.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let records = read_results(fs::read(dir.path().join("out/results.jsonl")).unwrap().as_slice()).unwrap();
    assert_eq!(records.len(), 3);
}

#[test]
fn exit_codes_distinguish_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "s1 {\n  src(42.0.0.0/33) { packet_size }\n}\n").unwrap();
    let bad = densmon(&["run", "bad.conf"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("line 2, column 7"), "error lacks a position: {msg}");

    fs::write(dir.path().join("queue.conf"), "s1 { * { queue_time } }\n").unwrap();
    let queue = densmon(&["run", "queue.conf"], dir.path());
    assert_eq!(queue.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&queue.stderr).contains("queue_time"));

    let missing = densmon(&["run", "absent.conf"], dir.path());
    assert_eq!(missing.status.code(), Some(3));

    fs::write(dir.path().join("notrace.conf"), "trace csv \"absent.csv\"\ns1 { * { packet_size } }\n").unwrap();
    assert_eq!(densmon(&["run", "notrace.conf"], dir.path()).status.code(), Some(3));

    assert_eq!(densmon(&["report", "absent.jsonl"], dir.path()).status.code(), Some(3));
}
