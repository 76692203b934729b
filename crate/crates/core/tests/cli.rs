use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_homolab");

fn config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

#[test]
fn smoke_config_writes_table_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["run", &config("smoke.json"), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("csv:"));
    let csv = out.path().join("fluctuation.csv");
    let summary = out.path().join("fluctuation.summary.json");
    assert!(csv.exists() && summary.exists());

    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let headers = rdr.headers().unwrap().clone();
    for col in ["version", "kind", "d", "n", "l", "epsilon", "tol", "seed"] {
        assert!(headers.iter().any(|h| h == col), "missing column {col}");
    }
    assert_eq!(rdr.records().count(), 3);

    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s["kind"], "fluctuation");
    assert!(s["config"].is_object());
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn runs_are_deterministic_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, w) in [(&a, "1"), (&b, "2")] {
        let o = run(&["run", &config("smoke.json"), "--workers", w, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert_eq!(read(&a.path().join("fluctuation.csv")), read(&b.path().join("fluctuation.csv")));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "kind = \"fluctuation\"\nn_samples = 2\n[grid]\nd = 1\n[field]\nepsilon = -1.0\n[family]\nname = \"linear:midpoint\"\n[sweep]\nl_over_eps = [8, 16]\nxi = [1.0]\n",
    )
    .unwrap();
    let o = run(&["run", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("field.epsilon"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("typo.json");
    std::fs::write(
        &p,
        r#"{"kind": "fluctuation", "n_samples": 1, "grid": {"d": 1}, "field": {"epsilon": 1.0},
            "family": {"name": "linear:midpoint"}, "sweep": {"l_over_eps": [8]}, "seeds": 3}"#,
    )
    .unwrap();
    let o = run(&["run", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fit_subcommand_reports_slope() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pts.csv");
    let mut body = String::from("x,y\n");
    for i in 0..5 {
        let x = 2f64.powi(i);
        body.push_str(&format!("{x},{}\n", 3.0 * x.powf(-0.5)));
    }
    std::fs::write(&p, body).unwrap();
    let o = run(&["fit", p.to_str().unwrap(), "--x", "x", "--y", "y"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["slope"].as_f64().unwrap() + 0.5).abs() < 1e-12);
}

#[test]
fn check_mode_passes_on_structure_config() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["run", &config("structure_2d.toml"), "--check", "--out", out.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("PASS")));
    assert!(!stdout.lines().any(|l| l.starts_with("FAIL")));
}
