use std::path::Path;
use std::process::{Command, Output};

use memflow::cnf::{count_defects, emit_dimacs, generate_planted_ksat, parse_dimacs, Assignment};
use memflow::harness::read_results;

fn memflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memflow")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn parse_v_line(line: &str, n: usize) -> Assignment {
    let lits: Vec<i64> = line.trim_start_matches("v ").split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(lits.last(), Some(&0));
    let values: Vec<bool> = lits[..lits.len() - 1].iter().map(|&l| l > 0).collect();
    assert_eq!(values.len(), n);
    Assignment::new(values)
}

#[test]
fn solve_planted_instance_prints_verified_v_line() {
    let dir = tempfile::tempdir().unwrap();
    let (formula, _) = generate_planted_ksat(20, 4.25, 3, 11).unwrap();
    let path = write(dir.path(), "p.cnf", &emit_dimacs(&formula));
    let out = memflow(&["solve", &path, "--seed", "3"]);
    assert_eq!(code(&out), 10, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let v_line = stdout.lines().find(|l| l.starts_with("v ")).expect("v line");
    let assignment = parse_v_line(v_line, 20);
    assert_eq!(count_defects(&formula, &assignment).unwrap(), 0);
    assert!(stdout.contains("c t_solved"));
    assert!(stdout.contains("c crossings"));
}

#[test]
fn solve_json_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (formula, _) = generate_planted_ksat(20, 4.25, 3, 5).unwrap();
    let path = write(dir.path(), "p.cnf", &emit_dimacs(&formula));
    let trace = dir.path().join("t.csv");
    let events = dir.path().join("e.jsonl");
    let out = memflow(&[
        "solve",
        &path,
        "--json",
        "--record-stride",
        "1",
        "--trace",
        trace.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 10);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema"], "memflow/1");
    assert_eq!(report["verdict"], "solved");
    let assignment = parse_v_line(report["assignment"].as_str().unwrap(), 20);
    assert_eq!(count_defects(&formula, &assignment).unwrap(), 0);

    let csv = std::fs::read_to_string(&trace).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,v_1,"));
    assert_eq!(header.split(',').count(), 1 + 20 + 2 * formula.num_clauses() + 1);
    assert!(header.ends_with(",defects"));
    assert!(csv.lines().count() > 2);

    let crossings = report["crossings"].as_u64().unwrap();
    let lines: Vec<serde_json::Value> =
        std::fs::read_to_string(&events).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let crossing_lines = lines.iter().filter(|v| v["type"] == "crossing").count() as u64;
    assert_eq!(crossing_lines, crossings);
    assert!(lines.iter().any(|v| v["type"] == "critical"));
}

#[test]
fn solve_unsat_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "u.cnf", "p cnf 1 2\n1 0\n-1 0\n");
    let out = memflow(&["solve", &path, "--t-max", "5"]);
    assert_eq!(code(&out), 20);
    assert!(String::from_utf8_lossy(&out.stdout).contains("s UNKNOWN"));
}

#[test]
fn solve_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cnf");
    let out = memflow(&["solve", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cnf"));

    let bad = write(dir.path(), "bad.cnf", "p cnf 2 1\n1 5 0\n");
    let out = memflow(&["solve", &bad]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("literal index exceeds n"));

    assert_eq!(code(&memflow(&["solve"])), 2);
    assert_eq!(code(&memflow(&["solve", &bad, "--dt", "5"])), 2);
    assert_eq!(code(&memflow(&["frobnicate"])), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "u.cnf", "p cnf 1 2\n1 0\n-1 0\n");
    let cfg = write(dir.path(), "run.conf", "# short run\nt-max=2\nseed=4\n");
    let out = memflow(&["solve", &path, "--config", &cfg, "--json"]);
    assert_eq!(code(&out), 20);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["integrator"]["t_max"], 2.0);
    assert_eq!(report["seed"], 4);

    let out = memflow(&["solve", &path, "--config", &cfg, "--t-max", "3", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["integrator"]["t_max"], 3.0);
}

#[test]
fn theta_selects_noisy_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let (formula, _) = generate_planted_ksat(20, 4.25, 3, 8).unwrap();
    let path = write(dir.path(), "p.cnf", &emit_dimacs(&formula));
    let out = memflow(&["solve", &path, "--theta", "0.0001", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["integrator"]["scheme"], "euler_maruyama");
    assert_eq!(report["noise"]["theta"], 0.0001);
    assert_eq!(code(&out), 10);
}

#[test]
fn bench_appends_records_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.jsonl");
    let out_str = out_path.to_str().unwrap();
    let args =
        ["bench", "--sizes", "10,20,40", "--instances", "3", "--seed", "2", "--out", out_str, "--fit", "--jobs", "2"];
    let out = memflow(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("slope") && stdout.contains("PASS"));

    let records = read_results(&out_path).unwrap();
    assert_eq!(records.len(), 9);
    assert!(records.iter().all(|r| r.schema == "memflow/1"));

    // Append-safe: a second run adds lines; completion order may differ but
    // ids and outcomes match after sorting.
    assert_eq!(code(&memflow(&args)), 0);
    let mut all = read_results(&out_path).unwrap();
    assert_eq!(all.len(), 18);
    let mut second = all.split_off(9);
    all.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    second.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    for (a, b) in all.iter().zip(&second) {
        assert_eq!(
            (&a.instance_id, a.verdict, a.t_solved, a.crossings_total),
            (&b.instance_id, b.verdict, b.t_solved, b.crossings_total)
        );
    }
}

#[test]
fn bench_fit_needs_three_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.jsonl");
    let out = memflow(&["bench", "--sizes", "10,20", "--instances", "1", "--out", out_path.to_str().unwrap(), "--fit"]);
    assert_eq!(code(&out), 2);
    assert!(!out_path.exists());
}

#[test]
fn bench_slope_gate_can_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.jsonl");
    let out = memflow(&[
        "bench",
        "--sizes",
        "10,20,40",
        "--instances",
        "3",
        "--out",
        out_path.to_str().unwrap(),
        "--fit",
        "--slope-max",
        "0",
    ]);
    assert_eq!(code(&out), 30);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn topo_check_groups() {
    for (field, sum) in [("sphere", "2"), ("torus", "0"), ("circle", "0"), ("doublewell", "1")] {
        let out = memflow(&["topo-check", "--field", field, "--sweep", "20"]);
        assert_eq!(code(&out), 0, "{field}");
        let stdout = String::from_utf8(out.stdout).unwrap();
        let rows: Vec<&str> = stdout.lines().skip(1).collect();
        assert!(rows.len() >= 20);
        for row in rows {
            let cols: Vec<&str> = row.split_whitespace().collect();
            assert_eq!(cols[3], sum, "{row}");
            assert_eq!(cols[5], "PASS");
        }
    }
    assert_eq!(code(&memflow(&["topo-check"])), 0);
    assert_eq!(code(&memflow(&["topo-check", "--field", "klein"])), 2);
}

#[test]
fn emitted_instances_round_trip_through_parser() {
    let (formula, _) = generate_planted_ksat(20, 4.25, 3, 11).unwrap();
    assert_eq!(parse_dimacs(&emit_dimacs(&formula)).unwrap(), formula);
}
