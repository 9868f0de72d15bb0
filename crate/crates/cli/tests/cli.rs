use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_btauthlab"))
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(config: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(config).args(extra).output().unwrap()
}

#[test]
fn exit_status_table() {
    let table = [
        ("bonded-mismatch/reference.toml", 0),
        ("bonded-mismatch/macos.toml", 1),
        ("bonded-mismatch/gnome-bluez.toml", 1),
        ("bonded-mismatch/windows.toml", 1),
        ("bonded-mismatch/ios.toml", 1),
        ("bonded-mismatch/samsung-android.toml", 1),
        ("bonded-mismatch/google-android.toml", 1),
        ("bonded-mismatch/peripheral.toml", 1),
        ("reason-coding/reference.toml", 0),
        ("reason-coding/samsung-android.toml", 1),
        ("reason-coding/google-android.toml", 1),
        ("key-toggle.toml", 1),
        ("mitm-absent.toml", 0),
        ("forced-repairing/google-android.toml", 1),
    ];
    for (rel, code) in table {
        let out = run(&scenarios().join(rel), &[]);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{rel}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn undeclared_device_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenarios().join("bonded-mismatch/reference.toml"))
        .unwrap()
        .replace("to = \"headset\"", "to = \"speaker\"");
    std::fs::write(&path, text).unwrap();
    let out = run(&path, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speaker"));

    let out = run(&dir.path().join("missing.toml"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_traces_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let report = dir.path().join("out/report.jsonl");
    let out = run(
        &scenarios().join("bonded-mismatch/google-android.toml"),
        &[
            "--trace-out",
            traces.to_str().unwrap(),
            "--report-out",
            report.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    for stem in ["00-1A-7D-DA-71-01", "00-1A-7D-DA-71-02"] {
        let bytes = std::fs::read(traces.join(format!("{stem}.btsnoop"))).unwrap();
        assert_eq!(&bytes[..8], b"btsnoop\0");
    }
    let report = std::fs::read_to_string(report).unwrap();
    assert_eq!(report.lines().count(), 6);
    assert!(report.lines().last().unwrap().contains("PAIRING_REMOVED"));
}

#[test]
fn seed_override_keeps_the_verdict() {
    let path = scenarios().join("bonded-mismatch/samsung-android.toml");
    let a = run(&path, &["--seed-override", "1"]);
    let b = run(&path, &["--seed-override", "2"]);
    assert_eq!(a.status.code(), Some(1));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn matrix_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("matrix.jsonl");
    let out = bin()
        .arg("matrix")
        .arg(scenarios().join("matrix"))
        .args(["--report-out", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("invalid-key-effect/bt")).unwrap();
    let cells: Vec<&str> = row.split_whitespace().skip(1).collect();
    assert_eq!(
        cells,
        [
            "INDICATOR_ONLY",
            "INDICATOR_ONLY",
            "ERROR_TEXT",
            "ERROR_TEXT",
            "ERROR_TEXT",
            "PAIRING_REMOVED",
            "NO_INDICATION",
            "SECURITY_WARNING"
        ]
    );
    assert!(std::fs::read_to_string(report).unwrap().lines().count() > 0);

    let out = bin()
        .arg("matrix")
        .arg(scenarios().join("matrix"))
        .args(["--profiles", "reference,nokia"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lists_profiles() {
    let out = bin().arg("--list-profiles").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("[[profiles]]").count(), 8);
    assert!(text.contains("name = \"google-android\""));
}
