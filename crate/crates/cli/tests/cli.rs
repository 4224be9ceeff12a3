use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn lgtime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgtime"))
        .args(args)
        .output()
        .expect("spawn lgtime")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn digests(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let h = Sha256::digest(std::fs::read(&p).unwrap());
            (p.file_name().unwrap().to_string_lossy().into_owned(), format!("{h:x}"))
        })
        .collect()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL_LG: &str = r#"{"lg": {"quick_records_per_tag": 1000, "raw_records": 3}}"#;

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_LG);
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = lgtime(&["lg", "--quick", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        digests(&out)
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let c = run("c", "8");
    assert_eq!(a, b);
    for f in ["quantum_lg.csv", "quantum_raw.bin", "quantum_lg.json", "line_response.csv", "quantum_raw.bin.json"] {
        assert!(a.contains_key(f), "missing {f}: {:?}", a.keys());
    }
    assert_ne!(a["quantum_lg.csv"], c["quantum_lg.csv"]);
    let data = |d: &str| {
        std::fs::read_to_string(tmp.path().join(d).join("line_response.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(data("a"), data("c"));
}

#[test]
fn outputs_carry_expected_headers_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_LG);
    let out = tmp.path().join("o");
    let o = lgtime(&["lg", "--quick", "--model", "telegraph", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let header = |f: &str| {
        std::fs::read_to_string(out.join(f))
            .unwrap()
            .lines()
            .find(|l| !l.starts_with('#'))
            .unwrap()
            .to_string()
    };
    assert_eq!(header("telegraph_lg.csv"), "tau_ns,f,sigma,sys_lo,sys_hi");
    assert_eq!(header("telegraph_spectrum_sz.csv"), "freq_Hz,density");
    assert_eq!(header("line_response.csv"), "freq_Hz,R,dR_over_R");
    let j = read_json(&out.join("telegraph_lg.json"));
    assert_eq!(j["provenance"]["command"], "lg");
    assert_eq!(j["provenance"]["seed"], 1);
    assert_eq!(j["provenance"]["parameters"]["run"]["model"], "telegraph");
    let raw = std::fs::metadata(out.join("telegraph_raw.bin")).unwrap().len();
    let side = read_json(&out.join("telegraph_raw.bin.json"));
    let len = side["record_len"].as_u64().unwrap();
    assert_eq!(raw, 3 * len * 2 * 8);
}

#[test]
fn ideal_curve_peaks_at_three_halves() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lgtime(&["lg", "--ideal", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    let j = read_json(&tmp.path().join("ideal_lg.json"));
    let f = j["data"]["f_star"].as_f64().unwrap();
    assert!((f - 1.5).abs() < 1e-9, "f* = {f}");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("f* = 1.5000"), "{stdout}");
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let unknown = write_config(tmp.path(), r#"{"qubit": {"t3_s": 1e-7}}"#);
    assert_eq!(lgtime(&["lg", "--ideal", "--config", &unknown, "--out", out]).status.code(), Some(2));
    let nested = write_config(tmp.path(), r#"{"lg": {"budget": {"dr_over_r": 0.01, "foo": 1}}}"#);
    assert_eq!(lgtime(&["lg", "--ideal", "--config", &nested, "--out", out]).status.code(), Some(2));
    let bad = write_config(tmp.path(), r#"{"cavity": {"kappa_hz": -1.0}}"#);
    assert_eq!(lgtime(&["rabi", "--config", &bad, "--out", out]).status.code(), Some(2));
    let missing = tmp.path().join("nope.json");
    assert_eq!(
        lgtime(&["spectra", "--config", missing.to_str().unwrap(), "--out", out]).status.code(),
        Some(2)
    );
    let o = lgtime(&["lg", "--ideal", "--model", "macrospin", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(lgtime(&["rabi", "--ideal", "--out", out]).status.code(), Some(2));
}

#[test]
fn perturbed_qubit_fails_validation_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"qubit": {"t2_s": 1.0e-7}, "rabi": {"duration_s": 1.0e-6, "step_s": 2.0e-9}}"#,
    );
    let out = tmp.path().join("o");
    let o = lgtime(&["validate", "--quick", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout.lines().find(|l| l.contains("criterion  3")).expect(&stdout);
    assert!(line.contains("FAIL"), "{line}");
    let report = read_json(&out.join("validation.json"));
    assert_eq!(report["data"]["passed"], false);
}
