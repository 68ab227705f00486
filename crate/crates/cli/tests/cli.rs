use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scene(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes").join(name)
}

fn multipole(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multipole"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_scene(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("test.scene");
    fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn worked_example_passes_and_writes_reports() {
    let out = tempfile::tempdir().unwrap();
    let o = multipole(&["run", scene("worked_example.scene").to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let names: Vec<String> = files(out.path()).into_iter().map(|f| f.0).collect();
    for n in [
        "00_transform_axial.txt",
        "00_transform_axial.json",
        "01_verify_axial.json",
        "03_potentials_axial.csv",
        "summary.txt",
        "summary.json",
    ] {
        assert!(names.iter().any(|x| x == n), "missing {n} in {names:?}");
    }
    let csv = fs::read_to_string(out.path().join("03_potentials_axial.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("r,value"));
    assert_eq!(lines.count(), 50);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("01_verify_axial.json")).unwrap()).unwrap();
    let rows = v["data"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r["residual"].as_f64().unwrap() <= 1e-6));
}

#[test]
fn transform_report_carries_kappa0() {
    let out = tempfile::tempdir().unwrap();
    let o = multipole(
        &["transform", scene("worked_example.scene").to_str().unwrap(), "--kappa0", "0,0,0,2.5,0,0"],
        out.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("00_transform_axial.json")).unwrap()).unwrap();
    let fits = v["data"]["fits"].as_array().unwrap();
    let fit = |key: &str| fits.iter().find(|f| f["component"] == key).unwrap_or_else(|| panic!("no fit for {key}"));
    for key in ["P^12", "gamma^120", "gamma^102"] {
        assert!((fit(key)["slope"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert!((fit(key)["intercept"].as_f64().unwrap() - 2.5).abs() < 1e-9);
    }
    assert!((fit("dipole_part^12")["intercept"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(fits.iter().all(|f| f["component"] != "gamma^012"));
    // only transform jobs ran
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 4);
}

#[test]
fn identical_runs_give_identical_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let s = scene("worked_example.scene");
    let args = ["run", s.to_str().unwrap(), "--seed", "99"];
    assert_eq!(multipole(&args, a.path()).status.code(), Some(0));
    assert_eq!(multipole(&args, b.path()).status.code(), Some(0));
    let mut par = args.to_vec();
    par.push("--parallel");
    assert_eq!(multipole(&par, c.path()).status.code(), Some(0));
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(files(a.path()), files(c.path()));
    let other = tempfile::tempdir().unwrap();
    multipole(&["run", s.to_str().unwrap(), "--seed", "100"], other.path());
    assert_ne!(
        fs::read(a.path().join("01_verify_axial.json")).unwrap(),
        fs::read(other.path().join("01_verify_axial.json")).unwrap()
    );
}

#[test]
fn classification_scene() {
    let out = tempfile::tempdir().unwrap();
    let o = multipole(&["classify", scene("classification.scene").to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = fs::read_to_string(out.path().join("00_classify_electric.txt")).unwrap();
    assert!(
        text.contains("closed: pass; monopole-free: pass; order ≤ 2: consistent; electric order ≤ 2: consistent"),
        "{text}"
    );
}

#[test]
fn minimal_scene_runs() {
    let out = tempfile::tempdir().unwrap();
    let o = multipole(&["run", scene("minimal.scene").to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

const FAILING: &str = r#"{
  "worldlines": { "w": { "components": ["tau", "0", "0", "0"], "interval": [0, 10] } },
  "multipoles": { "q": { "worldline": "w", "monopole": 1.0 } },
  "jobs": [
    { "command": "charge", "multipole": "q", "expect": { "charge": 2.0 } },
    { "command": "charge", "multipole": "q", "expect": { "charge": 1.0 } },
    { "command": "potentials", "multipole": "q", "expect": { "exponent": -2.0 } }
  ]
}"#;

#[test]
fn failed_checks_exit_one_and_the_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scene(dir.path(), FAILING);
    let out = dir.path().join("out");
    let o = multipole(&["run", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("FAIL job 00 charge q"));
    assert!(summary.contains("PASS job 01 charge q"));
    assert!(summary.contains("FAIL job 02 potentials q"));
    assert!(summary.contains("3 jobs, 1 passed, 2 failed"));
}

#[test]
fn job_errors_are_failures_not_crashes() {
    // order probes need an adapted worldline
    let text = FAILING
        .replace("[\"tau\", \"0\", \"0\", \"0\"]", "[\"tau\", \"1\", \"0\", \"0\"]")
        .replace("\"command\": \"charge\", \"multipole\": \"q\", \"expect\": { \"charge\": 2.0 }", "\"command\": \"classify\", \"multipole\": \"q\"");
    let dir = tempfile::tempdir().unwrap();
    let p = write_scene(dir.path(), &text);
    let out = dir.path().join("out");
    let o = multipole(&["run", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    let report = fs::read_to_string(out.join("00_classify_q.txt")).unwrap();
    assert!(report.contains("error: worldline is not in adapted form"), "{report}");
    assert!(out.join("01_charge_q.txt").exists());
}

#[test]
fn symmetry_violations_exit_two_with_indices() {
    let text = fs::read_to_string(scene("worked_example.scene"))
        .unwrap()
        .replace("\"112\": \"-kappa\"", "\"112\": \"-kappa + 0.5*tau\"");
    let dir = tempfile::tempdir().unwrap();
    let p = write_scene(dir.path(), &text);
    let o = multipole(&["run", p.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("multipoles.axial.quadrupole"), "{err}");
    assert!(err.contains("gamma^{") && err.contains("tau = "), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn usage_errors_exit_two() {
    let out = tempfile::tempdir().unwrap();
    let s = scene("worked_example.scene");
    let s = s.to_str().unwrap();
    for args in [
        vec!["run", s, "--kappa0", "1,2,3"],
        vec!["run", s, "--kappa0", "21=1"],
        vec!["run", s, "--tol", "-1"],
        vec!["run", s, "--samples", "0"],
        vec!["run", "/nonexistent.scene"],
        vec!["classify", s],
        vec!["explode", s],
    ] {
        assert_eq!(multipole(&args, out.path()).status.code(), Some(2), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let p = write_scene(dir.path(), "{ \"worldlines\": ");
    assert_eq!(multipole(&["run", p.to_str().unwrap()], out.path()).status.code(), Some(2));
}
