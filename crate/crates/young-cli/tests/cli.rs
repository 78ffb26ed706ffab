use std::path::{Path, PathBuf};
use std::process::Command;

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

fn ystruct(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ystruct"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn full_run_writes_the_report_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let o = ystruct(&["all", "--config", cfg.to_str().unwrap(), "--plots"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "report.json",
        "timings.json",
        "tails.csv",
        "tails_star.csv",
        "axioms.json",
        "filtration.csv",
        "stats/correlation.csv",
        "stats/clt_histogram.csv",
        "tails.svg",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["map"], "linear-cat");

    let again = ystruct(&["report", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("report.json")).unwrap(), report);
}

#[test]
fn bad_config_exits_nonzero_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = ystruct(&["build-net", "--map", "linear-cat", "--set", "delta0=-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = std::fs::read_to_string(dir.path().join("error.json")).unwrap();
    assert!(err.contains("delta0"));
}

#[test]
fn missing_inputs_fail_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let o = ystruct(&["refine", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(dir.path().join("error.json").exists());
}
