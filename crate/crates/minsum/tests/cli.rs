//! Integration tests for the `minsum` binary: exit-code contract, file
//! outputs, and the problem-file round trip, all against temp directories.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use minsum::schedule::Schedule;
use minsum::Program;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_minsum"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn chain3_json() -> String {
    serde_json::json!({
        "n": 3,
        "node_factors": [
            {"var": 0, "kind": "quadratic", "q": 1.0, "l": -1.0},
            {"var": 1, "kind": "quadratic", "q": 1.0, "l": 0.0},
            {"var": 2, "kind": "quadratic", "q": 1.0, "l": 1.0},
        ],
        "edge_factors": [
            {"i": 0, "j": 1, "kind": "quadratic_coupling", "c": 0.25},
            {"i": 1, "j": 2, "kind": "quadratic_coupling", "c": 0.25},
        ],
        "B": 2.0,
    })
    .to_string()
}

fn write_problem(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

#[test]
fn certify_grants_on_the_canonical_chain() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "chain3.json", &chain3_json());
    let cert_path = dir.path().join("cert.json");

    let out = run(&[
        "certify",
        "--problem",
        problem.to_str().unwrap(),
        "--certificate",
        cert_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let cert: Value = serde_json::from_str(&std::fs::read_to_string(&cert_path).unwrap()).unwrap();
    assert!((cert["lambda"].as_f64().unwrap() - 0.258198890748238).abs() < 1e-12);
    assert!((cert["M"].as_f64().unwrap() - 1.25).abs() < 1e-12);
    assert!((cert["K"].as_f64().unwrap() - 1.0327955589843372).abs() < 1e-12);
    assert_eq!(cert["method"], "exact-quadratic");
    assert_eq!(cert["w"].as_array().unwrap().len(), 3);
}

#[test]
fn certify_without_output_path_prints_the_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "chain3.json", &chain3_json());
    let out = run(&["certify", "--problem", problem.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let cert: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(cert["lambda"].is_f64());
}

#[test]
fn certify_refuses_the_dominance_boundary_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let boundary = serde_json::json!({
        "n": 2,
        "node_factors": [
            {"var": 0, "kind": "quadratic", "q": 1e-12, "l": 0.0},
            {"var": 1, "kind": "quadratic", "q": 1e-12, "l": 0.0},
        ],
        "edge_factors": [
            {"i": 0, "j": 1, "kind": "quadratic_form", "q_ii": 1.0, "q_ij": 1.0, "q_jj": 1.0},
        ],
    })
    .to_string();
    let problem = write_problem(dir.path(), "boundary.json", &boundary);

    let out = run(&["certify", "--problem", problem.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("refused"), "diagnostic missing: {err}");
    assert!(err.contains("required contraction"), "diagnostic missing: {err}");
}

#[test]
fn solve_reports_bound_and_oracle_in_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "chain3.json", &chain3_json());
    let cert_path = dir.path().join("cert.json");
    let ok = run(&[
        "certify",
        "--problem",
        problem.to_str().unwrap(),
        "--certificate",
        cert_path.to_str().unwrap(),
    ]);
    assert_eq!(ok.status.code(), Some(0));

    let trace_path = dir.path().join("trace.csv");
    let summary_path = dir.path().join("summary.json");
    let out = run(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--certificate",
        cert_path.to_str().unwrap(),
        "--oracle",
        "--out-trace",
        trace_path.to_str().unwrap(),
        "--out-summary",
        summary_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(&summary_path).unwrap()).unwrap();
    assert_eq!(summary["engine"], "quadratic");
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["diverged"], false);
    assert_eq!(summary["bound_ok"], true);
    assert!(summary["final_error"].as_f64().unwrap() < 1e-9);
    let finals = summary["final"].as_array().unwrap();
    assert!((finals[0].as_f64().unwrap() - 0.8).abs() < 1e-9);

    let trace = std::fs::read_to_string(&trace_path).unwrap();
    let header = trace.lines().next().unwrap();
    assert!(header.contains("bound_value"), "header: {header}");
    assert!(trace.lines().count() > 2);
}

#[test]
fn solve_accepts_a_schedule_script_file() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "chain3.json", &chain3_json());
    let schedule = Schedule::random_total_async(3, 40, 11, 5, 5).unwrap();
    let script_path = dir.path().join("schedule.json");
    std::fs::write(&script_path, schedule.to_script_json().unwrap()).unwrap();

    let out = run(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--schedule",
        script_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["schedule"]["kind"], script_path.to_str().unwrap());
    assert_eq!(summary["converged"], true);
}

#[test]
fn solve_piecewise_without_a_box_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut boxless: Value = serde_json::from_str(&chain3_json()).unwrap();
    boxless.as_object_mut().unwrap().remove("B");
    let problem = write_problem(dir.path(), "boxless.json", &boxless.to_string());

    let out = run(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--engine",
        "piecewise",
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("B"), "stderr: {}", stderr(&out));
}

#[test]
fn solve_piecewise_box_override_reaches_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut boxless: Value = serde_json::from_str(&chain3_json()).unwrap();
    boxless.as_object_mut().unwrap().remove("B");
    let problem = write_problem(dir.path(), "boxless.json", &boxless.to_string());

    let out = run(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--engine",
        "piecewise",
        "--B",
        "2.0",
        "--grid-m",
        "201",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["grid_m"], 201);
    assert_eq!(summary["converged"], true);
}

#[test]
fn invalid_problem_json_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "broken.json", "{\"n\": 3, ");
    let out = run(&["solve", "--problem", problem.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn unknown_flag_exits_1() {
    let out = run(&["solve", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_writes_the_iterations_table() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "chain3.json", &chain3_json());
    let out = run(&[
        "compare",
        "--problem",
        problem.to_str().unwrap(),
        "--seeds",
        "2",
        "--horizon",
        "300",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let table = stdout(&out);
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "seed,minsum,newton,coordinate,gradient");
    assert_eq!(table.lines().count(), 4, "2 seed rows plus header and median: {table}");
    assert!(table.lines().last().unwrap().starts_with("median,"));
}

#[test]
fn compare_marks_never_converged_cells() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "chain3.json", &chain3_json());
    // Three iterations are far too few for gradient descent to reach the
    // accuracy threshold, so its column must carry the no-convergence mark.
    let out = run(&[
        "compare",
        "--problem",
        problem.to_str().unwrap(),
        "--solvers",
        "gradient",
        "--seeds",
        "2",
        "--horizon",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("\u{2014}"), "table: {table}");
}

#[test]
fn compare_with_no_solvers_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "chain3.json", &chain3_json());
    let out = run(&[
        "compare",
        "--problem",
        problem.to_str().unwrap(),
        "--solvers",
        "",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn problem_files_round_trip_through_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let original = chain3_json();
    let problem_a = write_problem(dir.path(), "a.json", &original);

    // Re-serialize through the library and solve both copies: the round
    // trip must preserve the program, so the runs must agree exactly.
    let reserialized = Program::from_json_str(&original).unwrap().to_json_string().unwrap();
    let problem_b = write_problem(dir.path(), "b.json", &reserialized);

    let out_a = run(&["solve", "--problem", problem_a.to_str().unwrap()]);
    let out_b = run(&["solve", "--problem", problem_b.to_str().unwrap()]);
    assert_eq!(out_a.status.code(), Some(0));
    assert_eq!(out_b.status.code(), Some(0));
    let sum_a: Value = serde_json::from_str(&stdout(&out_a)).unwrap();
    let sum_b: Value = serde_json::from_str(&stdout(&out_b)).unwrap();
    assert_eq!(sum_a["final"], sum_b["final"]);
    assert_eq!(sum_a["iterations"], sum_b["iterations"]);
}
