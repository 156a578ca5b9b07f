use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade")).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const QUICK: &str = r#"
seed = 5
[scan]
settings = [[-1, 1], [0, 0], [1, -1], [1, 1]]
time_per_setting = "10 ms"
flux_scale = 1e7
[analysis]
time_bin = "2 ms"
"#;

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn stats_report() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("o");
    let r = cascade(&["stats", "--out-dir", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let s = read_json(out.join("stats.json"));
    let ratio = s["multipair_ratio_value"].as_f64().or_else(|| s["multipair_ratio"]["Finite"]["ratio"].as_f64());
    assert!(ratio.is_some_and(|r| (r - 16.6).abs() < 0.1), "{s}");
    let m = read_json(out.join("manifest.json"));
    assert_eq!(m["command"], "stats");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn stats_power_override_and_csv() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("o");
    let r = cascade(&["stats", "--power", "614 uW", "--format", "csv", "--out-dir", out.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(out.join("stats.csv").exists());
    let r = cascade(&["stats", "--power", "12 parsecs", "--out-dir", t.path().join("bad").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!t.path().join("bad").exists());
}

#[test]
fn spectrum_outputs() {
    let t = TempDir::new().unwrap();
    let cfg = config(t.path(), "c.toml", "[pump]\nell = 2\n[second_source]\nr_w0 = 4.3\n");
    let out = t.path().join("o");
    let r = cascade(&["--config", &cfg, "spectrum", "--out-dir", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(out.join("mode_weights.json")).unwrap();
    assert!(text.contains("\"pump\""));
    let csv_out = t.path().join("c");
    let r = cascade(&["--config", &cfg, "--format", "csv", "spectrum", "--out-dir", csv_out.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(csv_out.join("mode_weights.csv").exists());
    assert!(csv_out.join("weight_matrix.csv").exists());
}

#[test]
fn simulate_is_reproducible_and_analyzable() {
    let t = TempDir::new().unwrap();
    let cfg = config(t.path(), "q.toml", QUICK);
    let a = t.path().join("a");
    let b = t.path().join("b");
    for dir in [&a, &b] {
        let r = cascade(&["--config", &cfg, "simulate", "--out-dir", dir.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let files = listing(&a);
    assert_eq!(files, listing(&b));
    assert!(files.contains(&"scan.json".to_string()));
    assert!(files.contains(&"calibration.json".to_string()));
    for k in 0..4 {
        let name = format!("setting_{k:03}.tags");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
        assert!(files.contains(&format!("setting_{k:03}.truth.json")));
    }
    let truth = read_json(a.join("setting_001.truth.json"));
    assert!(truth["conversions"].as_u64().unwrap() > 0);

    let c = t.path().join("c");
    let r = cascade(&["--config", &cfg, "--seed", "6", "simulate", "--out-dir", c.to_str().unwrap()]);
    assert!(r.status.success());
    assert_ne!(fs::read(a.join("setting_000.tags")).unwrap(), fs::read(c.join("setting_000.tags")).unwrap());

    let m = t.path().join("m");
    let scan = a.join("scan.json");
    let r = cascade(&["--config", &cfg, "analyze", "--scan", scan.to_str().unwrap(), "--out-dir", m.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let mf = listing(&m);
    assert!(mf.contains(&"matrix_heralded.json".to_string()));
    assert!(mf.contains(&"matrix_unheralded.json".to_string()));
    assert!(mf.contains(&"histogram_unheralded_0_0.csv".to_string()));
    let mat = read_json(m.join("matrix_unheralded.json"));
    assert_eq!(mat["config_hash"], read_json(a.join("scan.json"))["config_hash"]);
    assert!(mat["cells"]["0,0"]["raw"].as_u64().unwrap() > mat["cells"]["1,1"]["raw"].as_u64().unwrap());

    // A matrix compared with itself.
    let cmp = t.path().join("cmp");
    let ju = m.join("matrix_unheralded.json");
    let r = cascade(&["compare", ju.to_str().unwrap(), ju.to_str().unwrap(), "--out-dir", cmp.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = read_json(cmp.join("compare.json"));
    assert!((report["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(report["deltas"].as_object().unwrap().values().all(|d| d.as_f64() == Some(0.0)));

    // CSV matrices compare the same way as JSON ones.
    let mc = t.path().join("mc");
    let r = cascade(&["--config", &cfg, "--format", "csv", "analyze", "--scan", scan.to_str().unwrap(), "--out-dir", mc.to_str().unwrap()]);
    assert!(r.status.success());
    let hc = mc.join("matrix_heralded.csv");
    let hj = m.join("matrix_heralded.json");
    let cmp2 = t.path().join("cmp2");
    let r = cascade(&["compare", hj.to_str().unwrap(), hc.to_str().unwrap(), "--out-dir", cmp2.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!((read_json(cmp2.join("compare.json"))["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    // Segments given explicitly.
    let seg = t.path().join("seg");
    let spec = format!("{}=0,0", a.join("setting_001.tags").display());
    let r = cascade(&["analyze", "--segment", &spec, "--pump-ell", "0", "--out-dir", seg.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(seg.join("matrix_heralded.json").exists());
}

#[test]
fn missing_config_exits_2_without_output() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("o");
    let r = cascade(&["--config", "/nonexistent/x.toml", "simulate", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn invalid_config_exits_2_without_output() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("o");
    for (k, text) in [
        "[scan]\nbogus = 1\n",
        "[herald]\nsplit = 3\n",
        "[detectors.signal]\nefficiency = 1.5\n",
        "[first_source]\ncoherence_time = \"3 kg\"\n",
        "[first_source]\ndrive_power = \"50 mW\"\n",
        "seed = \"x\"\n",
    ]
    .iter()
    .enumerate()
    {
        let cfg = config(t.path(), &format!("c{k}.toml"), text);
        let r = cascade(&["--config", &cfg, "simulate", "--out-dir", out.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(2), "{text}: {}", String::from_utf8_lossy(&r.stderr));
        assert!(!out.exists(), "{text}");
    }
}

#[test]
fn numerical_failure_exits_3_without_output() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("o");
    // The accidental target sits below the heralding dark-count floor.
    let cfg = config(t.path(), "c.toml", "[calibration]\naccidental_per_hour = 1e-9\n");
    let r = cascade(&["--config", &cfg, "simulate", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists());
}

#[test]
fn io_failures_exit_4_without_partial_output() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("o");
    let r = cascade(&["analyze", "--segment", "/nonexistent.tags=0,0", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
    assert!(!out.exists());

    let junk = t.path().join("junk.tags");
    fs::write(&junk, b"CASCADETAGS\0garbage").unwrap();
    let spec = format!("{}=0,0", junk.display());
    let r = cascade(&["analyze", "--segment", &spec, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
    assert!(!out.exists());

    // Output directory path occupied by a file.
    let blocked = t.path().join("file");
    fs::write(&blocked, b"x").unwrap();
    let r = cascade(&["stats", "--out-dir", blocked.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
    assert_eq!(fs::read(&blocked).unwrap(), b"x");
    assert_eq!(listing(t.path()), vec!["file".to_string(), "junk.tags".to_string()]);
}

#[test]
fn compare_rejects_mismatched_matrices() {
    let t = TempDir::new().unwrap();
    let a = config(
        t.path(),
        "a.csv",
        "# config_hash=x\n# pump_ell=0\n# heralded=false\nell_s,ell_i,raw,integration_time_s,accidentals,accidental_per_hour,rate_per_hour,error_per_hour\n0,0,1,1,0,0,5,1\n1,-1,1,1,0,0,3,1\n",
    );
    let b = config(
        t.path(),
        "b.csv",
        "# config_hash=y\n# pump_ell=0\n# heralded=false\nell_s,ell_i,raw,integration_time_s,accidentals,accidental_per_hour,rate_per_hour,error_per_hour\n0,0,1,1,0,0,5,1\n",
    );
    let out = t.path().join("o");
    let r = cascade(&["compare", &a, &b, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists());
    let r = cascade(&["compare", &a, &a, "--out-dir", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
}
