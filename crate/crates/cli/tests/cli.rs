//! End-to-end tests that drive the compiled `femtosim` binary the way a
//! user would: real scenario files, real process exits, real CSV artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXIT_CONFIG: i32 = 2;
const EXIT_RUNTIME: i32 = 3;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn femtosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_femtosim"))
        .args(args)
        .env_remove("FEMTOSIM_OUT")
        .output()
        .expect("failed to spawn femtosim binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        stderr(out)
    );
}

/// A small but non-trivial scenario used by the run-oriented tests.
fn write_small_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("small.ini");
    fs::write(
        &path,
        "[topology]\n\
         deployment_type = type_c\n\
         fap_count = 4\n\
         ue_count = 6\n\
         seed = 3\n\
         [run]\n\
         sim_duration_s = 120\n\
         [outage]\n\
         n_drops = 200\n\
         strategies = proposed\n\
         fap_counts = 4\n",
    )
    .unwrap();
    path
}

fn read_csvs(dir: &Path, names: &[&str]) -> Vec<String> {
    names
        .iter()
        .map(|n| {
            let p = dir.join(n);
            fs::read_to_string(&p).unwrap_or_else(|e| panic!("missing {}: {e}", p.display()))
        })
        .collect()
}

#[test]
fn missing_scenario_file_exits_with_config_error_naming_path() {
    let out = femtosim(&["run", "--scenario", "/no/such/scenario.ini"]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(
        stderr(&out).contains("/no/such/scenario.ini"),
        "stderr should name the missing path: {}",
        stderr(&out)
    );
}

#[test]
fn run_writes_core_csvs_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_small_scenario(tmp.path());
    let out_dir = tmp.path().join("out");

    let out = femtosim(&[
        "run",
        "--scenario",
        scn.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    for name in ["report.csv", "handovers.csv", "outage.csv", "backhaul.csv"] {
        assert!(out_dir.join(name).is_file(), "expected {name} in output dir");
    }
    // The summary table goes to stdout unless --quiet.
    assert!(stdout(&out).contains("simulation summary"), "{}", stdout(&out));
}

#[test]
fn same_seed_produces_identical_csv_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_small_scenario(tmp.path());
    let names = ["report.csv", "handovers.csv", "outage.csv", "backhaul.csv"];

    let mut snapshots = Vec::new();
    for sub in ["a", "b"] {
        let dir = tmp.path().join(sub);
        let out = femtosim(&[
            "run",
            "--scenario",
            scn.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            dir.to_str().unwrap(),
            "--quiet",
        ]);
        assert_ok(&out);
        assert!(stdout(&out).is_empty(), "--quiet should silence the summary");
        snapshots.push(read_csvs(&dir, &names));
    }
    assert_eq!(snapshots[0], snapshots[1], "same seed must give identical bytes");
}

#[test]
fn replicated_run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_small_scenario(tmp.path());
    let names = ["report.csv", "handovers.csv", "outage.csv", "backhaul.csv"];

    let mut snapshots = Vec::new();
    for sub in ["a", "b"] {
        let dir = tmp.path().join(sub);
        let out = femtosim(&[
            "run",
            "--scenario",
            scn.to_str().unwrap(),
            "--replicates",
            "3",
            "--out",
            dir.to_str().unwrap(),
            "--quiet",
        ]);
        assert_ok(&out);
        snapshots.push(read_csvs(&dir, &names));
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn out_dir_falls_back_to_env_var() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_small_scenario(tmp.path());
    let out_dir = tmp.path().join("from-env");

    let out = Command::new(env!("CARGO_BIN_EXE_femtosim"))
        .args(["run", "--scenario", scn.to_str().unwrap(), "--quiet"])
        .env("FEMTOSIM_OUT", &out_dir)
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(out_dir.join("report.csv").is_file());
}

#[test]
fn trace_walkin_prints_the_fourteen_step_call_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let out = femtosim(&[
        "trace",
        "--scenario",
        scenario("walkin.ini").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = stdout(&out);

    let step_lines: Vec<&str> = text.lines().filter(|l| l.trim_start().starts_with("t=")).collect();
    assert_eq!(step_lines.len(), 14, "walk-in trace must have 14 steps:\n{text}");
    for label in [
        "1", "2", "3", "4", "5", "6a", "6b", "6c", "6d", "6e", "7", "8", "9", "10",
    ] {
        assert!(
            text.contains(&format!("step {label} ")),
            "missing step {label}:\n{text}"
        );
    }
    assert!(text.contains("outcome: COMPLETE"), "{text}");
    assert!(tmp.path().join("trace.txt").is_file());
}

#[test]
fn trace_with_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let dir = tmp.path().join(sub);
        let out = femtosim(&[
            "trace",
            "--scenario",
            scenario("walkin.ini").to_str().unwrap(),
            "--seed",
            "51",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_ok(&out);
        stdout(&out)
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn trace_fast_ue_ends_in_velocity_reject() {
    let tmp = tempfile::tempdir().unwrap();
    let out = femtosim(&[
        "trace",
        "--scenario",
        scenario("fast_ue.ini").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("REJECT (velocity)"), "{text}");
    assert!(text.contains("outcome: REJECTED (velocity)"), "{text}");
}

#[test]
fn trace_without_any_handover_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("inert.ini");
    fs::write(
        &scn,
        "[topology]\n\
         deployment_type = type_c\n\
         fap_count = 1\n\
         ue_count = 1\n\
         [run]\n\
         sim_duration_s = 0\n\
         [outage]\n\
         n_drops = 50\n\
         strategies = proposed\n",
    )
    .unwrap();

    let out = femtosim(&[
        "trace",
        "--scenario",
        scn.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_RUNTIME));
    assert!(
        stderr(&out).contains("no handover attempt"),
        "diagnostic should explain the empty trace: {}",
        stderr(&out)
    );
}

fn parse_outage_csv(path: &Path) -> Vec<(String, f64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("strategy,fap_count,threshold_db,p_out,ci95,n_drops,seed"),
        "outage.csv header changed"
    );
    lines
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0].to_string(), cols[3].parse().unwrap(), cols[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn outage_emits_one_row_per_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("outage.ini");
    fs::write(
        &scn,
        "[topology]\n\
         deployment_type = type_c\n\
         fap_count = 50\n\
         ue_count = 1\n\
         seed = 7\n\
         [outage]\n\
         n_drops = 400\n\
         strategies = shared, dedicated, proposed\n\
         fap_counts = 50\n",
    )
    .unwrap();

    let out = femtosim(&[
        "outage",
        "--scenario",
        scn.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_ok(&out);
    let rows = parse_outage_csv(&tmp.path().join("outage.csv"));
    assert_eq!(rows.len(), 3);
    let strategies: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(strategies, ["shared", "dedicated", "proposed"]);
}

#[test]
fn outage_with_zero_faps_is_identical_across_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("nofap.ini");
    fs::write(
        &scn,
        "[topology]\n\
         deployment_type = type_c\n\
         fap_count = 0\n\
         ue_count = 1\n\
         seed = 13\n\
         [outage]\n\
         n_drops = 2000\n\
         strategies = shared, dedicated, proposed\n\
         fap_counts = 0\n",
    )
    .unwrap();

    let out = femtosim(&[
        "outage",
        "--scenario",
        scn.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_ok(&out);
    let rows = parse_outage_csv(&tmp.path().join("outage.csv"));
    assert_eq!(rows.len(), 3);
    // With no femtocells the strategies describe the same macro-only
    // network, and the paired drop streams make the estimates coincide.
    assert_eq!(rows[0].1, rows[1].1, "shared vs dedicated");
    assert_eq!(rows[0].1, rows[2].1, "shared vs proposed");
}

#[test]
fn outage_ci_halves_when_drops_quadruple() {
    let tmp = tempfile::tempdir().unwrap();
    let write_scn = |name: &str, n_drops: u32| {
        let p = tmp.path().join(name);
        fs::write(
            &p,
            format!(
                "[topology]\n\
                 deployment_type = type_c\n\
                 fap_count = 50\n\
                 ue_count = 1\n\
                 seed = 7\n\
                 [outage]\n\
                 n_drops = {n_drops}\n\
                 strategies = proposed\n\
                 fap_counts = 50\n"
            ),
        )
        .unwrap();
        p
    };

    let mut ci = Vec::new();
    for (name, n) in [("base.ini", 1000), ("quad.ini", 4000)] {
        let scn = write_scn(name, n);
        let dir = tmp.path().join(format!("{name}.out"));
        let out = femtosim(&[
            "outage",
            "--scenario",
            scn.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--quiet",
        ]);
        assert_ok(&out);
        let rows = parse_outage_csv(&dir.join("outage.csv"));
        assert_eq!(rows.len(), 1);
        ci.push(rows[0].2);
    }
    let ratio = ci[1] / ci[0];
    assert!(
        (0.4..=0.6).contains(&ratio),
        "CI should roughly halve with 4x drops, got ratio {ratio}"
    );
}

#[test]
fn sweep_writes_one_summary_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_small_scenario(tmp.path());
    let out_dir = tmp.path().join("sweep-out");

    let out = femtosim(&[
        "sweep",
        "--scenario",
        scn.to_str().unwrap(),
        "--key",
        "fap_count",
        "--values",
        "2,4",
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_ok(&out);
    let text = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("key,value,attempts"), "{}", lines[0]);
    assert_eq!(lines.len(), 3, "header plus one row per value:\n{text}");
    assert!(lines[1].starts_with("fap_count,2,"));
    assert!(lines[2].starts_with("fap_count,4,"));
}

#[test]
fn sweep_with_unknown_key_is_a_config_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_small_scenario(tmp.path());

    let out = femtosim(&[
        "sweep",
        "--scenario",
        scn.to_str().unwrap(),
        "--key",
        "warp_factor",
        "--values",
        "9",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&out).contains("warp_factor"), "{}", stderr(&out));
}
