use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use cimsim_cli::report::documented;
use cimsim_cli::Experiment;

fn cimsim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cimsim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = cimsim(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn error_json(o: &Output) -> Value {
    assert!(!o.status.success());
    serde_json::from_slice(&o.stderr).expect("stderr is one JSON object")
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

fn write(dir: &TempDir, name: &str, body: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn same_seed_gives_identical_files() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["simulate", "--cycles", "3", "--seed", "7", "--workers", "1"], &a);
    ok(&["simulate", "--cycles", "3", "--seed", "7", "--workers", "4"], &b);
    for f in ["outputs.csv", "summary.json", "summary.txt", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = t.path().join("c");
    ok(&["simulate", "--cycles", "3", "--seed", "8"], &c);
    assert_ne!(fs::read(a.join("outputs.csv")).unwrap(), fs::read(c.join("outputs.csv")).unwrap());
}

#[test]
fn montecarlo_is_independent_of_worker_count() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["montecarlo", "--points", "300", "--images", "1", "--workers", "1"], &a);
    ok(&["montecarlo", "--points", "300", "--images", "1", "--workers", "3"], &b);
    for f in ["montecarlo.csv", "conv.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn ideal_characterization_is_perfectly_linear() {
    let t = TempDir::new().unwrap();
    ok(&["characterize", "--ideal", "--step", "4", "--points", "50"], t.path());
    let lin = t.path().join("linearity.csv");
    let dnl = csv_column(&lin, "dnl");
    let inl = csv_column(&lin, "inl");
    assert!(dnl.len() > 400);
    assert!(dnl.iter().filter(|d| !d.is_empty()).all(|d| d.parse::<f64>().unwrap() == 0.0));
    assert!(inl.iter().all(|d| d.parse::<f64>().unwrap() == 0.0));
    let s = summary(t.path());
    assert_eq!(s["metrics"]["lsb_mac"], 32.0);
    assert_eq!(s["metrics"]["sigma_v"], 0.0);
}

#[test]
fn montecarlo_reports_both_sigmas() {
    let t = TempDir::new().unwrap();
    ok(&["montecarlo", "--points", "500", "--images", "0"], t.path());
    let m = &summary(t.path())["metrics"];
    let base = m["sigma_baseline"].as_f64().unwrap();
    let enh = m["sigma_enhanced"].as_f64().unwrap();
    assert!(base > 0.0 && enh > 0.0 && enh < base, "{base} {enh}");
    assert!(!t.path().join("conv.csv").exists());
}

#[test]
fn identity_matrix_recovers_activations() {
    let t = TempDir::new().unwrap();
    let eye: String = (0..64)
        .map(|i| (0..64).map(|j| if i == j { "1" } else { "0" }).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let acts: Vec<u32> = (0..64).map(|i| (i * 7 % 16) as u32).collect();
    let input = acts.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let m = write(&t, "eye.csv", &eye);
    let x = write(&t, "x.csv", &input);
    let out = t.path().join("out");
    ok(&["map", "--ideal", "--matrix", &m, "--input", &x], &out);
    let got = csv_column(&out.join("map.csv"), "output");
    // Each column is one activation; the readout reconstructs it to within
    // one ADC quantum (16 MAC units at the default r).
    for (a, g) in acts.iter().zip(&got) {
        let g: i64 = g.parse().unwrap();
        assert!((g - *a as i64).abs() <= 16, "{a} -> {g}");
    }
    let s = summary(&out);
    assert_eq!(s["metrics"]["invocations"], 1);
    assert_eq!(s["metrics"]["col_blocks"], 4);
}

#[test]
fn out_of_range_weight_names_the_line() {
    let t = TempDir::new().unwrap();
    let m = write(&t, "m.csv", "# weights\n1,2\n3,8\n");
    let e = error_json(&cimsim(&["map", "--matrix", &m], &t.path().join("o")));
    assert_eq!(e["error"], "range");
    assert_eq!(e["line"], 3);
    assert_eq!(e["value"], 8);
}

#[test]
fn empty_matrix_is_no_work() {
    let t = TempDir::new().unwrap();
    let m = write(&t, "m.csv", "# nothing here\n\n");
    let e = error_json(&cimsim(&["map", "--matrix", &m], &t.path().join("o")));
    assert_eq!(e["error"], "no_work");
}

#[test]
fn wide_matrix_needs_streaming() {
    let t = TempDir::new().unwrap();
    let row = vec!["1"; 80].join(",") + "\n";
    let m = write(&t, "m.csv", &row.repeat(64));
    let e = error_json(&cimsim(&["map", "--matrix", &m], &t.path().join("o")));
    assert_eq!(e["error"], "simulation");
    let out = t.path().join("s");
    ok(&["map", "--matrix", &m, "--streaming"], &out);
    assert_eq!(summary(&out)["metrics"]["invocations"], 2);
}

#[test]
fn bad_config_reports_position_and_validation() {
    let t = TempDir::new().unwrap();
    let c = write(&t, "bad.toml", "[analog]\nvdd = 1.1\nboost = \"two\"\n");
    let e = error_json(&cimsim(&["simulate", "--config", &c], &t.path().join("o")));
    assert_eq!(e["error"], "parse");
    assert_eq!(e["line"], 3);

    let e = error_json(&cimsim(&["simulate", "--set", "analog.boost=3"], &t.path().join("o")));
    assert_eq!(e["error"], "validation");
    assert_eq!(e["field"], "analog.boost");

    let o = cimsim(&["simulate", "--seed", "18446744073709551615"], &t.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");
}

#[test]
fn summaries_follow_the_schema() {
    let t = TempDir::new().unwrap();
    let m = write(&t, "m.csv", &"1,-2,3\n".repeat(10));
    let runs: [(Experiment, Vec<&str>); 6] = [
        (Experiment::Simulate, vec!["simulate", "--cycles", "1"]),
        (Experiment::Characterize, vec!["characterize", "--step", "64", "--trials", "1", "--points", "20"]),
        (Experiment::Montecarlo, vec!["montecarlo", "--points", "50", "--images", "1"]),
        (Experiment::Sweep, vec!["sweep", "--cycles", "2"]),
        (Experiment::Map, vec!["map", "--matrix", &m]),
        (Experiment::Fom, vec!["fom", "--cycles", "2"]),
    ];
    for (exp, args) in runs {
        let out = t.path().join(exp.name());
        ok(&args, &out);
        let s = summary(&out);
        assert_eq!(s["schema"], 1);
        assert_eq!(s["experiment"], exp.name());
        assert_eq!(s["seed"], 1);
        let keys: Vec<&str> = s["metrics"].as_object().unwrap().keys().map(String::as_str).collect();
        let mut want: Vec<&str> = documented(exp).to_vec();
        want.sort_unstable();
        assert_eq!(keys, want, "{}", exp.name());
        for f in s["files"].as_array().unwrap() {
            assert!(out.join(f.as_str().unwrap()).exists(), "{f} missing");
        }
        // The effective config written next to the results parses back.
        let cfg = fs::read_to_string(out.join("config.toml")).unwrap();
        cimsim_cli::config::parse_config(&cfg).unwrap();
    }
}

#[test]
fn explain_config_lists_every_key() {
    let t = TempDir::new().unwrap();
    let o = cimsim(&["simulate", "--explain-config"], t.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), cimsim_cli::config::PROVENANCE.len());
    assert!(text.contains("noise.k_narrow") && text.contains("fitted"));
    assert!(!t.path().join("summary.json").exists());
}
