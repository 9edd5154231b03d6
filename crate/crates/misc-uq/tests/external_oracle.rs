use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use misc_uq::config::LoadedConfig;
use misc_uq::error::CliError;
use misc_uq::external::ExternalOracle;
use misc_uq::pipeline::{self, Context};
use misc_uq_core::error::OracleError;
use misc_uq_core::misc::{FidelityLadder, MiscSurrogate};
use misc_uq_core::oracle::{Backend, Evaluator};
use misc_uq_core::{ExtMultiIndex, KnotFamily, MultiIndexSet};

fn fixture() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/oracle.py")
        .display()
        .to_string()
}

fn oracle(extra: &[&str], lanes: usize, timeout: f64) -> ExternalOracle {
    let mut cmd = vec!["python3".to_string(), fixture()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    ExternalOracle::new(cmd, None, lanes, Duration::from_secs_f64(timeout))
}

fn expected(fid: u32, p: &[f64], k: usize) -> f64 {
    (fid as f64 + k as f64) * (1.0 + p.iter().sum::<f64>()) + p[0] * p[p.len() - 1]
}

fn points(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| vec![i as f64 * 0.25, 1.0 - i as f64 * 0.5])
        .collect()
}

fn qois() -> Vec<String> {
    vec!["a".into(), "b".into(), "c".into()]
}

fn check_values(fid: u32, pts: &[Vec<f64>], out: &[Result<Vec<f64>, String>]) {
    assert_eq!(out.len(), pts.len());
    for (p, r) in pts.iter().zip(out) {
        let v = r.as_ref().unwrap();
        for (k, x) in v.iter().enumerate() {
            assert_eq!(*x, expected(fid, p, k));
        }
    }
}

#[test]
fn answers_match_across_lane_counts() {
    let pts = points(7);
    for lanes in [1, 3, 10] {
        let o = oracle(&[], lanes, 30.0);
        check_values(2, &pts, &o.evaluate(2, &pts, &qois()).unwrap());
        // lanes persist between batches
        check_values(1, &pts[..2], &o.evaluate(1, &pts[..2], &qois()).unwrap());
    }
}

#[test]
fn surrogate_over_echo_oracle_is_the_identity() {
    let o = oracle(&["--echo"], 2, 30.0);
    let mut ev = Evaluator::new(o);
    let set = MultiIndexSet::from_entries(
        1,
        [ExtMultiIndex::root(1), ExtMultiIndex::new(1, vec![2]).unwrap()],
    )
    .unwrap();
    let families = vec![KnotFamily::symmetric_leja(-2.0, 3.0).unwrap()];
    let s = MiscSurrogate::build(&set, &mut ev, &FidelityLadder::coarse_fine(), families, &qois()).unwrap();
    for x in [-1.7, 0.0, 0.4, 2.9] {
        for v in s.evaluate(&[x]).unwrap().values {
            assert!((v - x).abs() < 1e-12);
        }
    }
}

#[test]
fn out_of_order_answers_are_matched_by_id() {
    let pts = points(6);
    let o = oracle(&["--reverse"], 2, 30.0);
    check_values(1, &pts, &o.evaluate(1, &pts, &qois()).unwrap());
}

#[test]
fn per_point_errors_stay_per_point() {
    let pts = points(6);
    let o = oracle(&["--fail-above", "0.6"], 2, 30.0);
    let out = o.evaluate(1, &pts, &qois()).unwrap();
    for (p, r) in pts.iter().zip(&out) {
        if p[0] > 0.6 {
            assert_eq!(r.as_ref().unwrap_err(), "mesh generation failed");
        } else {
            assert!(r.is_ok());
        }
    }
}

#[test]
fn crash_reports_stderr_and_lanes_respawn() {
    let o = oracle(&["--crash-fidelity", "2"], 2, 30.0);
    let pts = points(3);
    match o.evaluate(2, &pts, &qois()) {
        Err(OracleError::Backend(msg)) => {
            assert!(msg.contains("exited"), "{msg}");
            assert!(msg.contains("solver diverged at fidelity 2"), "{msg}");
            assert!(msg.contains("\"fidelity\":2"), "{msg}");
        }
        other => panic!("expected a backend failure, got {other:?}"),
    }
    check_values(1, &pts, &o.evaluate(1, &pts, &qois()).unwrap());
}

#[test]
fn malformed_output_is_a_protocol_error() {
    let o = oracle(&["--garbage"], 1, 30.0);
    assert!(matches!(
        o.evaluate(1, &points(2), &qois()),
        Err(OracleError::Protocol(_))
    ));
}

#[test]
fn slow_oracle_times_out() {
    let o = oracle(&["--delay", "2"], 1, 0.3);
    let t = Instant::now();
    match o.evaluate(1, &points(1), &qois()) {
        Err(OracleError::Backend(msg)) => assert!(msg.contains("no answer within"), "{msg}"),
        other => panic!("expected a timeout, got {other:?}"),
    }
    assert!(t.elapsed() < Duration::from_secs(2));
}

#[test]
fn lanes_overlap_latency() {
    let pts = points(8);
    let serial = oracle(&["--delay", "0.1"], 1, 30.0);
    let parallel = oracle(&["--delay", "0.1"], 4, 30.0);
    // warm up interpreters so startup is not timed
    serial.evaluate(1, &pts[..1], &qois()).unwrap();
    parallel.evaluate(1, &pts[..4], &qois()).unwrap();
    let t = Instant::now();
    check_values(1, &pts, &serial.evaluate(1, &pts, &qois()).unwrap());
    let t_serial = t.elapsed();
    let t = Instant::now();
    check_values(1, &pts, &parallel.evaluate(1, &pts, &qois()).unwrap());
    let t_parallel = t.elapsed();
    assert!(t_serial >= Duration::from_millis(800), "{t_serial:?}");
    assert!(t_parallel < Duration::from_millis(600), "{t_parallel:?}");
}

fn pipeline_config(dir: &Path, oracle_args: &[&str]) -> LoadedConfig {
    let mut cmd = format!("[\"python3\", \"{}\"", fixture());
    for a in oracle_args {
        cmd.push_str(&format!(", \"{a}\""));
    }
    cmd.push(']');
    let text = format!(
        r#"
seed = 1
[[parameters]]
name = "x"
distribution = "uniform"
lo = 0.0
hi = 1.0
[[parameters]]
name = "y"
distribution = "uniform"
lo = -1.0
hi = 1.0
[[fidelities]]
alpha = 1
cost_weight = 1.0
[[fidelities]]
alpha = 2
cost_weight = 4.0
[oracle]
command = {cmd}
lanes = 2
timeout_secs = 30
[qois]
calibration = ["q{{1..2}}"]
prediction = ["p1"]
[build]
max_work = 60.0
[calibration]
observations = "obs.csv"
"#
    );
    LoadedConfig::from_str(&text, dir.to_path_buf()).unwrap()
}

fn count_lines(p: &PathBuf) -> usize {
    std::fs::read_to_string(p).map(|s| s.lines().count()).unwrap_or(0)
}

#[test]
fn crashed_build_resumes_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let calls = dir.path().join("calls.txt");
    let calls_arg = calls.display().to_string();

    let crashing = pipeline_config(dir.path(), &["--crash-fidelity", "2", "--count", &calls_arg]);
    let ctx = Context::new(crashing, Some(out.clone()), None, None).unwrap();
    let err = pipeline::cmd_build(&ctx).unwrap_err();
    assert!(matches!(err, CliError::Oracle(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    let before_resume = count_lines(&calls);
    assert!(before_resume > 0);
    assert!(out.join(pipeline::CACHE_FILE).exists());

    let healthy = pipeline_config(dir.path(), &["--count", &calls_arg]);
    let ctx = Context::new(healthy.clone(), Some(out.clone()), None, None).unwrap();
    let stats = pipeline::cmd_build(&ctx).unwrap();
    // fidelity-1 points from the crashed run are not recomputed
    assert_eq!(count_lines(&calls) - before_resume, stats.oracle_points);
    let first = std::fs::read(out.join(pipeline::SURROGATE_FILE)).unwrap();

    // same result as a clean build
    let fresh = dir.path().join("fresh");
    let ctx_fresh = Context::new(healthy.clone(), Some(fresh.clone()), None, Some(1)).unwrap();
    let clean = pipeline::cmd_build(&ctx_fresh).unwrap();
    assert_eq!(
        std::fs::read(fresh.join(pipeline::SURROGATE_FILE)).unwrap(),
        first
    );
    assert!(clean.oracle_points > stats.oracle_points);

    // a warm rerun touches no oracle
    let n = count_lines(&calls);
    let again = pipeline::cmd_build(&ctx).unwrap();
    assert_eq!(again.oracle_points, 0);
    assert_eq!(count_lines(&calls), n);
    assert_eq!(std::fs::read(out.join(pipeline::SURROGATE_FILE)).unwrap(), first);
}
