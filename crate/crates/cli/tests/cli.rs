use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn platoon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
        .args(args)
        .current_dir(dir)
        .env_remove("PLATOON_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const SHORT: &str = "[controller]\nT_h = 12.0\n";

#[test]
fn run_writes_csv_trace_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "s.toml", SHORT);
    let out = platoon(tmp.path(), &["run", "s.toml", "--out-dir", "o", "--downsample", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("o/trace.csv")).unwrap();
    // 121 steps kept at every 10th plus the last
    assert_eq!(csv.lines().count(), 1 + 13);
    assert!(csv.starts_with("step,time,zone,u_star"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_vehicles"], 4);
    assert_eq!(summary["steps"], 120);
    assert_eq!(summary["final_states"].as_array().unwrap().len(), 4);
}

#[test]
fn json_format_and_env_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "s.toml", SHORT);
    let out = Command::new(env!("CARGO_BIN_EXE_platoon"))
        .args(["run", "s.toml", "--format", "json", "--quiet"])
        .current_dir(tmp.path())
        .env("PLATOON_OUT_DIR", "envdir")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("envdir/trace.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 121);
}

#[test]
fn seed_flag_changes_initial_conditions() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "s.toml", SHORT);
    let first_row = |seed: &str, dir: &str| {
        let out = platoon(tmp.path(), &["run", "s.toml", "--quiet", "--seed", seed, "--out-dir", dir]);
        assert_eq!(out.status.code(), Some(0));
        fs::read_to_string(tmp.path().join(dir).join("trace.csv"))
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .to_string()
    };
    assert_ne!(first_row("1", "a"), first_row("2", "b"));
    assert_eq!(first_row("1", "a"), first_row("1", "c"));
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.toml", "[controller]\nT_c = 20.0\n");
    let out = platoon(tmp.path(), &["validate", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("T_c"));
    write(tmp.path(), "typo.toml", "[controller]\nT_q = 2.0\n");
    assert_eq!(platoon(tmp.path(), &["run", "typo.toml"]).status.code(), Some(1));
    assert_eq!(platoon(tmp.path(), &["run", "missing.toml"]).status.code(), Some(1));
}

#[test]
fn validate_prints_filled_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "empty.toml", "");
    let out = platoon(tmp.path(), &["validate", "empty.toml"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("T_p = 10.0"), "{text}");
    assert!(text.contains("v_max = 30.0"), "{text}");
}

#[test]
fn collision_exits_two_with_partial_trace() {
    let tmp = tempfile::tempdir().unwrap();
    // The follower closes at 15 m/s on a 10 m gap; no model can stop in time.
    write(
        tmp.path(),
        "crash.toml",
        "[init]\nvehicles = [{ p = 500.0, v = 10.0 }, { p = 460.0, v = 25.0 }]\n\
         [platoon]\nN = 2\n[bounds]\nrho = 0.01\ns0 = 0.5\nv_min = 0.0\n[controller]\nT_h = 20.0\n",
    );
    let out = platoon(tmp.path(), &["run", "crash.toml", "--out-dir", "o"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{stderr}");
    assert!(stderr.contains("collision"), "{stderr}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/summary.json")).unwrap()).unwrap();
    assert!(summary["aborted"].is_string());
}

#[test]
fn check_cfm_reports_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "ovm.toml", "[cfm]\nmodel = \"ovm\"\n");
    let out = platoon(tmp.path(), &["check-cfm", "ovm.toml"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ovm: weak-pass"));
    let out = platoon(tmp.path(), &["check-cfm", "ovm.toml", "--json", "--probes", "3"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["probes"].as_array().unwrap().len(), 3);
}

#[test]
fn sweep_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "sweep.toml",
        "parameter = \"rho\"\nvalues = [1.0, 2.0]\nrepetitions = 2\n[base.controller]\nT_h = 10.0\n",
    );
    let out = platoon(tmp.path(), &["sweep", "sweep.toml", "--out-dir", "o", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("o/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("parameter,value,value_index,repetition,seed,status"));
    assert!(lines[1].starts_with("rho,1,0,0,3,ok,"));
}

#[test]
fn bundled_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut checked = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name.starts_with("sweep_") || !name.ends_with(".toml") {
            continue;
        }
        let out = platoon(&dir, &["validate", "--quiet", &name]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        checked += 1;
    }
    assert!(checked >= 3);
}
