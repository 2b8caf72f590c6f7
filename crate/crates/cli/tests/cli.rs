use std::path::Path;
use std::process::{Command, Output};

const SIP: &str = "family = \"SIP\"\nL = 3\nshape = 1.0\nalpha = 0.5\ngamma = 2.5\ndelta = 1.0\nbeta = 3.0\n";

fn ipsdual(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipsdual"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn invalid_family_is_a_config_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "bad.toml", &SIP.replace("\"SIP\"", "\"SIPP\""));
    let out = ipsdual(tmp.path(), &["simulate", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("family"));
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ipsdual(tmp.path(), &["simulate", "--config", "nope.toml"]).status.code(), Some(2));
    assert_eq!(ipsdual(tmp.path(), &["stationary"]).status.code(), Some(2));
    assert_eq!(ipsdual(tmp.path(), &["verify", "nonsense"]).status.code(), Some(2));
}

#[test]
fn unknown_config_field_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.toml", &format!("{SIP}alhpa = 1.0\n"));
    let out = ipsdual(tmp.path(), &["stationary", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alhpa"));
}

#[test]
fn simulate_replays_bit_exactly_regardless_of_threads() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sip.toml", SIP);
    let base = ["simulate", "--config", "sip.toml", "--seed", "7", "--samples", "2e3", "--format", "json"];
    let a = ipsdual(tmp.path(), &[&base[..], &["--out-dir", "a", "--threads", "1"]].concat());
    let b = ipsdual(tmp.path(), &[&base[..], &["--out-dir", "b", "--threads", "3"]].concat());
    assert!(a.status.success() && b.status.success());
    let (ja, jb) = (
        std::fs::read(tmp.path().join("a/summary.json")).unwrap(),
        std::fs::read(tmp.path().join("b/summary.json")).unwrap(),
    );
    assert_eq!(ja, jb);
    let m = manifest(&tmp.path().join("a"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["model"]["family"], "SIP");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
    let summary: serde_json::Value = serde_json::from_slice(&ja).unwrap();
    assert_eq!(summary["means"].as_array().unwrap().len(), 3);
}

#[test]
fn set_overrides_config_fields() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sip.toml", SIP);
    let out = ipsdual(tmp.path(), &["stationary", "--config", "sip.toml", "--set", "L=2", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/stationary.json")).unwrap()).unwrap();
    assert_eq!(v["profile"].as_array().unwrap().len(), 2);
    assert_eq!(manifest(&tmp.path().join("out"))["config"]["model"]["L"], 2);
}

#[test]
fn verify_suite_passes_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ipsdual(tmp.path(), &["verify", "absorption"]);
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/verify_absorption.json")).unwrap()).unwrap();
    assert_eq!(r["passed"], true);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["verdict"] == "pass"));
}

#[test]
fn reproduce_fig1_has_expected_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ipsdual(tmp.path(), &["reproduce", "fig1"]);
    assert!(out.status.success());
    let mut rd = csv::Reader::from_path(tmp.path().join("out/fig1.csv")).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["j", "i", "d_i", "e_i"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    // i = 2..5 for each of j = 1/2, 1, 3/2, 2.
    assert_eq!(rows.len(), 16);
    let js: std::collections::BTreeSet<String> = rows.iter().map(|r| r[0].to_string()).collect();
    assert_eq!(js.len(), 4);
}

#[test]
fn reproduce_profiles_agree_with_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    for fam in ["sep", "bep"] {
        let dir = format!("p_{fam}");
        let out = ipsdual(tmp.path(), &["reproduce", "profiles", "--family", fam, "--out-dir", &dir]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut rd = csv::Reader::from_path(tmp.path().join(dir).join("profiles.csv")).unwrap();
        for r in rd.records() {
            let dev: f64 = r.unwrap()[3].parse().unwrap();
            assert!(dev < 1e-10);
        }
    }
}

#[test]
fn reproduce_mft_table_decreases() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ipsdual(tmp.path(), &["reproduce", "mft", "--family", "sep", "--L", "20,50,100", "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/micro_macro.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert_eq!(v["decreasing"], true);
}

#[test]
fn mft_and_absorption_commands_emit_tables() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sip.toml", SIP);
    assert!(ipsdual(tmp.path(), &["mft", "--config", "sip.toml"]).status.success());
    let text = std::fs::read_to_string(tmp.path().join("out/mft.csv")).unwrap();
    assert!(text.contains("functional_typical"));
    let out = ipsdual(tmp.path(), &["absorption", "--config", "sip.toml", "--walkers", "1,3"]);
    assert!(out.status.success());
    let mut rd = csv::Reader::from_path(tmp.path().join("out/absorption.csv")).unwrap();
    let total: f64 = rd.records().map(|r| r.unwrap()[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let out = ipsdual(tmp.path(), &["absorption", "--config", "sip.toml", "--walkers", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_load() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let out = ipsdual(tmp.path(), &["mft", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}
