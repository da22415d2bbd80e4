use std::path::Path;
use std::process::{Command, Output};

use spheregap_cli::read_report_summary;

fn spheregap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spheregap"))
        .args(args)
        .env_remove("SPHEREGAP_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(s.lines().count(), 1, "{s}");
    s
}

fn rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn constants_table() {
    let o = spheregap(&["constants", "--n", "2..2"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.contains('\r'));
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let data = rows(&text);
    assert_eq!(data.len(), 1);
    let col = |name: &str| &data[0][header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("p"), "0.866025403784");
    assert_eq!(col("clifford_max"), "19.7392088022");
    assert_eq!(col("vol_sphere"), "12.5663706144");
    assert_eq!(col("integral_einstein"), "1.33333333333");

    let o = spheregap(&["constants", "--n", "1..100", "--delta", "0,0.5,2"]);
    assert!(o.status.success());
    assert_eq!(rows(&String::from_utf8(o.stdout).unwrap()).len(), 100);

    for bad in [["constants", "--n", "3..1"], ["constants", "--n", "x"], ["constants", "--delta", "-1"]] {
        let o = spheregap(&bad);
        assert_eq!(o.status.code(), Some(2), "{bad:?}");
        assert!(stderr_line(&o).starts_with("error: usage: "));
    }
}

#[test]
fn report_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("report");
    let o = spheregap(&[
        "verify", "--manifold", "covered-circle:2,2", "--suite", "density/*", "--suite", "gap-constants/*", "--format", "both", "--out",
        base.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_report_summary(&base.with_extension("json")).unwrap();
    assert_eq!(s.failed, 0);
    assert_eq!(s.total, s.passed);
    let csv_text = std::fs::read_to_string(base.with_extension("csv")).unwrap();
    assert_eq!(rows(&csv_text).len(), s.total);

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(base.with_extension("json")).unwrap()).unwrap();
    let first = &json["checks"][0];
    assert!(first["lhs"].as_str().unwrap().contains('e'));
    assert!(first.get("runtime_ms").is_none());
    assert_eq!(json["config"]["manifolds"][0], "covered-circle:2,2");
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("from-file.json");
    std::fs::write(
        &cfg,
        format!(
            "manifolds = [\"equator:1,2\"]\nsuite = [\"quadrature/*\"]\nseed = 3\nout = {:?}\n[grids]\n\"equator:1,2\" = \"64/2\"\n[tolerances]\n\"quadrature/*\" = 0.5\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = spheregap(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 3);
    assert_eq!(json["checks"][0]["grid"], "64@product/2");
    assert_eq!(json["checks"][0]["tol"], "5.00000000000000e-1");

    // Flags win over the file.
    let flagged = dir.path().join("flagged.json");
    let o = spheregap(&["verify", "--config", cfg.to_str().unwrap(), "--seed", "9", "--tol", "quadrature/*=0.25", "--out", flagged.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&flagged).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 9);
    assert_eq!(json["checks"][0]["tol"], "2.50000000000000e-1");

    std::fs::write(&cfg, "manifold = [\"equator:1,2\"]\n").unwrap();
    let o = spheregap(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: config: "));
}

#[test]
fn error_paths() {
    let o = spheregap(&["verify", "--suite", "constants/*", "--out", "/no/such/dir/r.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: output: "));

    let o = spheregap(&["verify", "--manifold", "sphere:2,3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("covered-circle:m,N"));

    let o = spheregap(&["verify", "--suite", "nothing-here"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("gap-constants/rigidity-three"));

    let o = spheregap(&["verify", "--suite", "constants/*", "--format", "both"]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_spheregap"))
        .args(["verify", "--suite", "constants/*"])
        .env("SPHEREGAP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = spheregap(&["verify", "--suite", "constants/gap-limit", "--tol", "constants/gap-limit=1e-9"]);
    assert_eq!(o.status.code(), Some(1));

    let o = spheregap(&["profile", "--n", "2", "--a", "0,0,1,0", "--r", "-1:0.5:4"]);
    assert_eq!(o.status.code(), Some(2));
    let o = spheregap(&["profile", "--n", "2", "--a", "0,0,0,0"]);
    assert_eq!(o.status.code(), Some(2));
}

fn profile_rows(path: &Path) -> Vec<[f64; 4]> {
    rows(&std::fs::read_to_string(path).unwrap())
        .into_iter()
        .map(|r| [0, 1, 2, 3].map(|i| r[i].parse::<f64>().unwrap()))
        .collect()
}

#[test]
fn profiles() {
    let dir = tempfile::tempdir().unwrap();
    let pole = dir.path().join("pole.csv");
    let o = spheregap(&["profile", "--manifold", "equator:2,3", "--a", "0,0,1,0", "--out", pole.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for [r, f, _, err] in profile_rows(&pole) {
        assert!((f - std::f64::consts::PI).abs() <= err, "r = {r}: F = {f} err = {err}");
    }
    assert!(dir.path().join("pole.xi.csv").exists());

    let cl = dir.path().join("clifford.csv");
    let o = spheregap(&["--threads", "1", "profile", "--k", "1", "--n", "2", "--a", "image:0,0", "--out", cl.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let upper: Vec<[f64; 4]> = profile_rows(&cl).into_iter().filter(|r| r[0] > 0.0).collect();
    for w in upper.windows(2) {
        assert!(w[1][1] <= w[0][1] + w[0][3] + w[1][3]);
    }

    let o = spheregap(&["xi", "--m", "2", "--a", "image:1.0", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let xi: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(xi["multiplicity"], 2);
    assert!((xi["estimate"].as_f64().unwrap() - 2.0).abs() < 0.05);
}

#[test]
fn catalog_lists_members() {
    let o = spheregap(&["catalog"]);
    assert!(o.status.success());
    let data = rows(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(data.len(), 7);
    assert!(data.iter().any(|r| r[0] == "clifford:1,3" && r[2] == "3"));
    let o = spheregap(&["catalog", "--manifold", "clifford:2,4", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["hypersurface"], "true");
}
