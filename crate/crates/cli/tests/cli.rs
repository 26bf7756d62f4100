use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_critical-ls"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn malformed_decomposition_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "[coupling]\nbeta = 1, 0; 0, 1\ndecomposition = 0, 3\n").unwrap();
    let out = bin().args(["coupling-check", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MalformedDecomposition"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "[domain]\nkind = ball\nradiuss = 1\n").unwrap();
    let out = bin().args(["robin", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn coupling_check_on_symmetric_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["coupling-check", "--config"]).arg(config("pair.conf")).arg("--out").arg(dir.path()).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("c=(0.57735, 0.57735), e=(0.70711, 0.70711)"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("coupling.csv")).unwrap();
    assert!(csv.starts_with("#schema=1\ngroup,component,c,e,row_value\n"));
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn robin_on_unit_ball() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["robin", "--config"]).arg(config("singleton_ball.conf")).arg("--out").arg(dir.path()).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("critical point (0.00000, 0.00000, 0.00000, 0.00000), r = 0.02533, non-degenerate"), "{text}");
}

#[test]
fn tolerance_scale_tightens_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["error-scaling", "--tolerance-scale", "1e-6", "--config"])
        .arg(config("singleton_ball.conf"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_section_is_a_numerical_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["reduce", "--config"]).arg(config("pair.conf")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[domain]"));
}
