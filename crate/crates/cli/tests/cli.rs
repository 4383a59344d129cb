use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_droplet");

fn small_config(flow: &str, rh: f64) -> String {
    format!(
        r#"{{
  "drying": {{ "T_inf_C": 60.0, "RH_inf": {rh} }},
  "droplet": {{ "volume_ul": 0.01 }},
  "flow": {flow},
  "grid": {{ "n_theta": 8, "n_r": 24, "r_out": 50.0, "stretch": 1.2 }},
  "solver": {{ "dt_s": 0.05, "t_end_s": 30.0 }}
}}
"#
    )
}

fn stagnant() -> String {
    small_config(r#"{ "kind": "stagnant" }"#, 0.1)
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn droplet(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run droplet")
}

fn run_ok(args: &[&str]) -> String {
    let out = droplet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let k = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn simulate_writes_the_documented_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &stagnant());
    let out = tmp.path().join("out");
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&out), "--snapshots", "100", "--dump-matrices"]);

    let radius = fs::read_to_string(out.join("radius.csv")).unwrap();
    assert_eq!(radius.lines().next().unwrap(), "t_s,R_m,R2_norm,J_avg,T_min,T_max,rho_min,rho_max,newton_iters");
    let r = column(&radius, "R_m");
    assert!(r.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(column(&radius, "R2_norm")[0], 1.0);

    let snap = fs::read_to_string(out.join("fields_100.csv")).unwrap();
    assert_eq!(snap.lines().next().unwrap(), "theta_rad,r_rescaled,T_C,rho_kgm3");
    assert_eq!(snap.lines().count(), 8 * 24 + 1);
    assert!(out.join("fields_0.csv").exists());

    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 8 * 24 + 1);
    let m = fs::read_to_string(out.join("matrix_temperature.txt")).unwrap();
    let dims: Vec<usize> = m.lines().next().unwrap()[2..].split(' ').map(|x| x.parse().unwrap()).collect();
    assert_eq!(dims[0], 8 + 8 * 24);
    assert_eq!(m.lines().count(), dims[2] + 1);
    assert!(out.join("matrix_vapor.txt").exists());

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["audit"]["box_invariant"], "pass");
    assert_eq!(meta["audit"]["extinct"], true);
}

#[test]
fn run_meta_round_trips_as_a_config() {
    let tmp = TempDir::new().unwrap();
    let flow = r#"{ "kind": "acoustic", "SPL_dB": 160 }"#;
    let cfg = write_config(tmp.path(), "run.json", &small_config(flow, 0.1));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    run_ok(&["simulate", "--config", s(&a.join("run_meta.json")), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("radius.csv")).unwrap(), fs::read(b.join("radius.csv")).unwrap());

    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("output_dir");
        v
    };
    let meta = strip(&a.join("run_meta.json"));
    assert_eq!(meta, strip(&b.join("run_meta.json")));
    assert_eq!(meta["flow"]["SPL_dB"], 160.0);
    assert!(meta["flow"].get("amplitude_Pa").is_none());
    assert_eq!(meta["audit"]["acoustic"]["given"], "SPL_dB");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &small_config(r#"{ "kind": "stokes", "V_inf_m_per_s": 0.4 }"#, 0.1));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&a), "--snapshots", "50"]);
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&b), "--snapshots", "50", "--seedless"]);
    for name in ["radius.csv", "fields_50.csv", "fields_0.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn saturated_air_keeps_the_radius() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &small_config(r#"{ "kind": "stagnant" }"#, 1.0));
    let cfg_text = fs::read_to_string(&cfg).unwrap().replace("30.0", "2.0");
    fs::write(&cfg, cfg_text).unwrap();
    let out = tmp.path().join("out");
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    let r2 = column(&fs::read_to_string(out.join("radius.csv")).unwrap(), "R2_norm");
    assert_eq!(r2.len(), 41);
    assert!(r2.iter().all(|&v| v == 1.0));
}

#[test]
fn config_errors_are_line_precise_and_exit_1() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("both.json", stagnant().replace(r#""volume_ul": 0.01"#, r#""volume_ul": 0.01, "R0_m": 1e-4"#), ":3:", "exactly one"),
        ("rh.json", stagnant().replace("0.1 }", "1.5 }"), ":2:", "RH_inf"),
        ("typo.json", stagnant().replace("dt_s", "dt"), ":6:", "unknown field `dt`"),
        ("flow.json", small_config(r#"{ "kind": "stokes", "V": 1 }"#, 0.1), ":4:", "unknown field `V`"),
        ("syntax.json", stagnant().replace("\"flow\"", "flow"), ":4:", "key must be a string"),
    ];
    for (name, text, line, msg) in cases {
        let cfg = write_config(tmp.path(), name, &text);
        let out = droplet(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(1), "{name}: {err}");
        assert!(err.contains(&format!("{name}{line}")), "{name}: {err}");
        assert!(err.contains(msg), "{name}: {err}");
    }
}

#[test]
fn solver_failure_exits_2() {
    let tmp = TempDir::new().unwrap();
    let text = stagnant().replace(r#""dt_s": 0.05"#, r#""dt_s": 0.05, "newton_max": 1, "newton_tol": 1e-14"#);
    let cfg = write_config(tmp.path(), "run.json", &text);
    let out = droplet(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 1"));
}

#[test]
fn d2law_validation_reports_and_gates() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &stagnant());
    let out = tmp.path().join("out");
    let stdout = run_ok(&["validate-d2law", "--config", s(&cfg), "--out", s(&out)]);
    assert!(stdout.contains("d2law: PASS"), "{stdout}");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    let d2 = &meta["audit"]["d2law"];
    assert!(d2["simulated_lifetime_s"].as_f64().unwrap() <= d2["oracle_lifetime_s"].as_f64().unwrap());

    let strict = write_config(tmp.path(), "strict.json", &stagnant().replace("\"flow\"", "\"d2_tolerance\": 1e-9,\n  \"flow\""));
    let res = droplet(&["validate-d2law", "--config", s(&strict), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stdout).contains("d2law: FAIL"));

    let stokes = write_config(tmp.path(), "stokes.json", &small_config(r#"{ "kind": "stokes", "V_inf_m_per_s": 0.4 }"#, 0.1));
    let res = droplet(&["validate-d2law", "--config", s(&stokes), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("stokes.json:4:"));
}

#[test]
fn sweep_runs_members_and_adds_a_stagnant_baseline() {
    let tmp = TempDir::new().unwrap();
    let text = stagnant().replace(
        "\"flow\": { \"kind\": \"stagnant\" },",
        r#""sweep": [
    { "label": "slow", "flow": { "kind": "stokes", "V_inf_m_per_s": 0.4 } },
    { "label": "fast", "flow": { "kind": "stokes", "V_inf_m_per_s": 0.8 } }
  ],"#,
    );
    let cfg = write_config(tmp.path(), "sweep.json", &text);
    let out = tmp.path().join("out");
    let stdout = run_ok(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert!(stdout.contains("lifetime decreases with V_inf: PASS"), "{stdout}");
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "label,flow,param,lifetime_s,lifetime_ratio_vs_stagnant");
    assert!(lines[1].starts_with("stagnant,stagnant,,"));
    assert!(lines[1].ends_with(",1"));
    assert!(lines[3].starts_with("fast,stokes,V_inf_m_per_s=0.8,"));
    for label in ["stagnant", "slow", "fast"] {
        assert!(out.join(label).join("radius.csv").exists());
    }
}

#[test]
fn sweep_records_member_failures_per_row() {
    let tmp = TempDir::new().unwrap();
    let text = stagnant()
        .replace(r#""dt_s": 0.05"#, r#""dt_s": 0.05, "newton_max": 2"#)
        .replace(
            "\"flow\": { \"kind\": \"stagnant\" },",
            r#""sweep": [ { "label": "loud", "flow": { "kind": "acoustic", "SPL_dB": 200 } } ],"#,
        );
    let cfg = write_config(tmp.path(), "sweep.json", &text);
    let out = tmp.path().join("out");
    let res = droplet(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    if !res.status.success() {
        assert_eq!(res.status.code(), Some(2));
        assert!(csv.lines().any(|l| l.ends_with(",,")), "{csv}");
    }
}

#[test]
fn verify_filters_and_lists() {
    let out = run_ok(&["verify", "--only", "saturation"]);
    assert!(out.contains("saturation_curve") && out.contains("PASS"));
    assert!(out.contains("1 of 1 checks passed"));
    let names = run_ok(&["verify", "--list"]);
    assert!(names.lines().count() >= 10);
    assert_eq!(droplet(&["verify", "--only", "no_such_check"]).status.code(), Some(1));
}

#[test]
fn convergence_writes_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &stagnant());
    let out = tmp.path().join("out");
    let res = droplet(&["convergence", "--config", s(&cfg), "--out", s(&out), "--levels", "3", "--d2-levels", "2"]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("harmonic order: PASS"), "{stdout}");
    assert!(stdout.contains("contraction: PASS"), "{stdout}");
    // the d² gate is the only one allowed to fail on this coarse grid
    if !res.status.success() {
        assert_eq!(res.status.code(), Some(3));
        assert!(stdout.contains("non-increasing under refinement: FAIL"), "{stdout}");
    }
    let table = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "study,level,n_theta,n_r,h,dt_s,error,order");
    assert_eq!(table.lines().filter(|l| l.starts_with("harmonic_solve,")).count(), 3);
    assert_eq!(table.lines().filter(|l| l.starts_with("d2_slope,")).count(), 2);
    let c = fs::read_to_string(out.join("contraction.csv")).unwrap();
    assert_eq!(c.lines().next().unwrap(), "m,q_m,residual");
    let q: Vec<f64> = c.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(q.iter().all(|&q| q < 1.0));
}
