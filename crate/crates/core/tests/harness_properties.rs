use memflow::cnf::{emit_dimacs, generate_planted_ksat};
use memflow::dynamics::{NoiseConfig, Scheme};
use memflow::harness::{
    fit_power_law, read_results, run_bench, run_record, scaling_verdict, write_results, BenchSpec, FormulaSource,
    HarnessError, RunConfig,
};
use proptest::prelude::*;

fn planted(n: usize, seed: u64) -> RunConfig {
    RunConfig::new(FormulaSource::Planted { n, ratio: 4.25, k: 3, seed }, seed)
}

#[test]
fn records_round_trip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let mut cfg = planted(20, 1);
    cfg.analysis.critical = true;
    cfg.analysis.lyapunov_horizon = Some(20.0);
    let a = run_record("a", &cfg).unwrap();
    let b = run_record("b", &planted(25, 2)).unwrap();
    write_results(std::slice::from_ref(&a), &path).unwrap();
    write_results(std::slice::from_ref(&b), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], "memflow/1");
    }
    assert_eq!(read_results(&path).unwrap(), vec![a.clone(), b]);
    assert!(a.index_sequence.is_some() && a.lambda_max.is_some());
    assert_eq!(a.dimension, a.n + 2 * a.clauses);
}

#[test]
fn echoed_configs_reproduce_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cnf = dir.path().join("f.cnf");
    std::fs::write(&cnf, emit_dimacs(&generate_planted_ksat(30, 4.25, 3, 4).unwrap().0)).unwrap();
    let mut from_file = RunConfig::new(FormulaSource::File { path: cnf }, 8);
    from_file.param_overrides.insert("zeta".into(), 0.2);
    let mut noisy = planted(30, 5);
    noisy.integrator.scheme = Scheme::EulerMaruyama;
    noisy.noise = NoiseConfig::voltages(1e-3);
    let mut restarted = planted(30, 6);
    restarted.integrator.t_max = 0.5;
    restarted.restarts = 3;
    for cfg in [from_file, noisy, restarted, planted(40, 7)] {
        let first = run_record("x", &cfg).unwrap();
        let again = run_record("x", &first.config().unwrap()).unwrap();
        assert_eq!(
            (first.verdict, first.t_solved, first.crossings_total, &first.assignment_hash, first.steps),
            (again.verdict, again.t_solved, again.crossings_total, &again.assignment_hash, again.steps)
        );
        assert_eq!(first.params, again.params);
    }
}

#[test]
fn solved_records_carry_hashes() {
    let r = run_record("x", &planted(20, 3)).unwrap();
    assert!(r.is_solved());
    assert_eq!(r.assignment_hash.as_ref().map(String::len), Some(64));
}

#[test]
fn write_errors_name_the_path() {
    let err = write_results(&[], std::path::Path::new("/nonexistent-dir/out.jsonl")).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
    assert!(err.to_string().contains("/nonexistent-dir/out.jsonl"));
}

#[test]
fn bench_is_order_stable_under_parallelism() {
    let spec = BenchSpec::new(vec![10, 20, 30], 4, 17);
    let mut seen = Vec::new();
    let serial = run_bench(&spec, 1, |r| {
        seen.push(r.instance_id.clone());
        Ok(())
    })
    .unwrap();
    let parallel = run_bench(&spec, 3, |_| Ok(())).unwrap();
    assert_eq!(seen.len(), 12);
    let key = |r: &memflow::harness::BenchResult| (r.instance_id.clone(), r.verdict, r.t_solved, r.crossings_total);
    assert_eq!(serial.iter().map(key).collect::<Vec<_>>(), parallel.iter().map(key).collect::<Vec<_>>());
    let verdict = scaling_verdict(&serial, 3.0, 0.8).unwrap();
    assert_eq!(verdict.fit.sizes, vec![10, 20, 30]);
}

#[test]
fn timed_out_runs_count_against_solve_rate_only() {
    let mut spec = BenchSpec::new(vec![10, 20, 40], 3, 1);
    spec.integrator.t_max = 1.0;
    let results = run_bench(&spec, 1, |_| Ok(())).unwrap();
    match scaling_verdict(&results, 3.0, 0.8) {
        Ok(v) => {
            for s in &v.summary {
                assert_eq!(s.runs, 3);
                assert_eq!(s.solved, results.iter().filter(|r| r.n == s.n && r.is_solved()).count());
            }
            if v.summary.iter().any(|s| s.solve_rate < 0.8) {
                assert!(!v.pass);
            }
        }
        Err(HarnessError::Fit(msg)) => assert!(msg.contains("no solved runs")),
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #[test]
    fn exact_power_laws_are_recovered(slope in -1.0f64..4.0, coef in 0.1f64..100.0, base in 5usize..50) {
        let pts: Vec<(usize, f64)> = (0..4).map(|i| {
            let n = base << i;
            (n, coef * (n as f64).powf(slope))
        }).collect();
        let fit = fit_power_law(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() < 0.01);
        prop_assert!(fit.r_squared >= 0.999 && fit.r_squared <= 1.0);
    }
}
