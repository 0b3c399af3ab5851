//! Command-line behaviour: exit codes, output formats and determinism.

use std::path::PathBuf;

use serde_json::Value;
use ucr_harness::cli::{run, EXIT_OK, EXIT_SOLVER, EXIT_USAGE};
use ucr_harness::scenario::{default_scenario, gen_scenario, path_gain, scenario_from_json, scenario_to_json, Overrides};
use ucr_harness::sweep::CSV_HEADER;

fn ucr(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ucr").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ucr-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let (code, _, err) = ucr(&[]);
    assert_eq!(code, EXIT_USAGE);
    assert!(!err.is_empty());
}

#[test]
fn unknown_baseline_is_a_usage_error() {
    let (code, _, err) = ucr(&["baseline", "best"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("unknown policy"));
}

#[test]
fn unreadable_scenario_is_a_usage_error() {
    let (code, _, _) = ucr(&["solve", "/nonexistent/scenario.json"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn malformed_scenario_names_the_field() {
    let mut doc: Value = serde_json::from_str(&scenario_to_json(&default_scenario())).unwrap();
    doc["users"][1]["utility"]["kappa"] = Value::String("high".into());
    let path = scratch("bad.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    let (code, _, err) = ucr(&["solve", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("users[1].utility.kappa"), "{err}");
}

#[test]
fn solver_failure_exits_with_solver_code() {
    let mut doc: Value = serde_json::from_str(&scenario_to_json(&default_scenario())).unwrap();
    doc["params"]["power_max"] = Value::from(1e-300);
    let path = scratch("starved.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    let (code, _, err) = ucr(&["solve", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_SOLVER);
    assert!(err.contains("inner solve failed"), "{err}");
}

#[test]
fn invalid_tolerance_is_a_usage_error() {
    let (code, _, _) = ucr(&["solve", "--tol-fp", "0"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn solve_reports_a_feasible_audited_result() {
    let (code, out, _) = ucr(&["solve"]);
    assert_eq!(code, EXIT_OK);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["policy"], "full");
    assert!(v["ucr"].as_f64().unwrap() > 0.0);
    assert_eq!(v["feasible"], true);
    assert!(v["kkt_max_residual"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn average_baseline_csv_has_one_row_per_user() {
    let (code, out, _) = ucr(&["baseline", "average", "--format", "csv"]);
    assert_eq!(code, EXIT_OK);
    let mut lines = out.lines();
    assert_eq!(
        lines.next().unwrap(),
        "user,bandwidth_hz,power_w,resolution_px,server_freq_hz,user_freq_hz,delay_s"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert_eq!(row.split(',').nth(1).unwrap().parse::<f64>().unwrap(), 4e9);
    }
}

#[test]
fn generated_file_reproduces_the_built_in_default() {
    let path = scratch("generated.json");
    let (code, _, _) = ucr(&["generate", "--out", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let from_file = ucr(&["baseline", "opt-f", path.to_str().unwrap()]);
    let built_in = ucr(&["baseline", "opt-f"]);
    assert_eq!(from_file.0, EXIT_OK);
    let a: Value = serde_json::from_str(&from_file.1).unwrap();
    let b: Value = serde_json::from_str(&built_in.1).unwrap();
    assert_eq!(a["ucr"], b["ucr"]);
    assert_eq!(a["outcome"]["allocation"], b["outcome"]["allocation"]);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = ucr(&["generate", "--seed", "42", "--n-users", "7", "--shadowing"]).1;
    let b = ucr(&["generate", "--seed", "42", "--n-users", "7", "--shadowing"]).1;
    let c = ucr(&["generate", "--seed", "43", "--n-users", "7", "--shadowing"]).1;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn sweep_writes_csv_with_the_documented_header() {
    let spec = scratch("sweep.json");
    std::fs::write(
        &spec,
        r#"{"param": "power_max", "values": [1.0, 30.0], "policies": ["average", "opt-f"], "n_users": 3}"#,
    )
    .unwrap();
    let (code, out, err) = ucr(&["sweep", spec.to_str().unwrap(), "--format", "csv", "--workers", "2"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("power_max,1.0,1,average,"));
    assert!(rows[3].starts_with("power_max,30.0,1,opt-f,"));
}

#[test]
fn sweep_spec_errors_name_the_field() {
    let spec = scratch("bad_sweep.json");
    std::fs::write(&spec, r#"{"param": "power_max", "values": [1.0], "policies": ["greedy"]}"#).unwrap();
    let (code, _, err) = ucr(&["sweep", spec.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("policies"), "{err}");
}

#[test]
fn fit_utility_reads_ratings_csv() {
    let path = scratch("ratings.csv");
    let u = ucr_core::fit::PRESETS[0].utility;
    let mut text = String::from("rate_bps,resolution_pixels,score\n");
    for p in ucr_core::fit::synthetic_ratings(&u, &ucr_core::fit::standard_rates(), &ucr_core::model::STANDARD_RESOLUTIONS) {
        text.push_str(&format!("{},{},{}\n", p.rate, p.resolution, p.score));
    }
    std::fs::write(&path, text).unwrap();
    let (code, out, err) = ucr(&["fit-utility", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    let kappa = v["utility"]["kappa"].as_f64().unwrap();
    assert!((kappa - u.kappa).abs() <= 0.01 * u.kappa);
}

#[test]
fn dump_defaults_is_valid_json() {
    let (code, out, _) = ucr(&["--dump-defaults"]);
    assert_eq!(code, EXIT_OK);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["optimizer"]["dinkelbach_tol"].is_number());
    let scenario = serde_json::to_string(&v["scenario"]).unwrap();
    assert!(scenario_from_json(&scenario).is_ok());
}

#[test]
fn path_gain_at_one_hundred_metres() {
    let expected = 10f64.powf(-(128.1 - 37.6) / 10.0);
    assert!((path_gain(0.1, 0.0) - expected).abs() <= 1e-12 * expected);
    assert!((path_gain(0.1, 3.0) - expected * 10f64.powf(-0.3)).abs() <= 1e-12 * expected);
}

#[test]
fn scenarios_round_trip_through_json() {
    let s = gen_scenario(9, 6, &Overrides { shadowing: true, ..Overrides::default() }).unwrap();
    let back = scenario_from_json(&scenario_to_json(&s)).unwrap();
    assert_eq!(back.params, s.params);
    assert_eq!(back.utilities, s.utilities);
}

#[test]
fn bundled_default_scenario_matches_the_built_in_one() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.json");
    let bundled = scenario_from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    let built_in = default_scenario();
    assert_eq!(bundled.params, built_in.params);
    assert_eq!(bundled.utilities, built_in.utilities);
}

#[test]
fn bundled_sweep_spec_parses() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/bandwidth-sweep.json");
    let spec: ucr_harness::sweep::SweepSpec = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(spec.validate().is_ok());
}
