use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lasp_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lasp-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 8] = [
    "--duration",
    "200",
    "--ads",
    "3",
    "--threshold",
    "40",
    "--sample-interval",
    "30",
];

fn run_dirs(out: &Path) -> Vec<String> {
    let mut dirs: Vec<String> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn run_writes_metrics_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mut args = vec![
        "run",
        "--clients",
        "6",
        "--topology",
        "hyparview",
        "--mode",
        "delta",
        "--seed",
        "1",
        "--overlay-dump",
        "--out",
        out,
    ];
    args.extend(SMALL);
    let result = lasp_sim(&args);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );

    let dirs = run_dirs(tmp.path());
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].starts_with("hyparview-delta-6-s1-"));
    let dir = tmp.path().join(&dirs[0]);
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("tick,sender,receiver,payload_kind,variable_id,bytes,instrumented,phase")
    );
    let summary = fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("total_impressions: 120"));
    assert!(summary.contains("trace.conservation: true"));
    let overlay = fs::read_to_string(dir.join("overlay.csv")).unwrap();
    assert_eq!(overlay.lines().next(), Some("tick,node,active_peers"));
    assert_eq!(String::from_utf8(result.stdout).unwrap(), summary);
}

#[test]
fn identical_flags_give_identical_csv() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    for tmp in [&tmp_a, &tmp_b] {
        let mut args = vec![
            "run",
            "--clients",
            "5",
            "--mode",
            "state",
            "--seed",
            "3",
            "--out",
            tmp.path().to_str().unwrap(),
        ];
        args.extend(SMALL);
        assert!(lasp_sim(&args).status.success());
    }
    let read = |tmp: &tempfile::TempDir| {
        let dir = tmp.path().join(&run_dirs(tmp.path())[0]);
        fs::read(dir.join("metrics.csv")).unwrap()
    };
    assert_eq!(read(&tmp_a), read(&tmp_b));
}

#[test]
fn star_with_delta_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let result = lasp_sim(&[
        "run",
        "--clients",
        "32",
        "--topology",
        "star",
        "--mode",
        "delta",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("delta-based dissemination is not available with the star topology"),
        "{stderr}"
    );
    assert!(run_dirs(tmp.path()).is_empty());
}

#[test]
fn bad_flags_are_rejected() {
    for args in [
        vec!["run", "--topology", "ring"],
        vec!["run", "--latency", "3,1"],
        vec!["run", "--churn", "1.5"],
        vec!["run", "--duration", "100", "--impressions-per-client", "50"],
    ] {
        let tmp = tempfile::tempdir().unwrap();
        let mut args = args.clone();
        args.extend(["--out", tmp.path().to_str().unwrap()]);
        assert!(!lasp_sim(&args).status.success(), "{args:?} accepted");
    }
}

#[test]
fn sweep_covers_every_valid_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--clients",
        "4,6",
        "--repeat",
        "2",
        "--out",
        tmp.path().to_str().unwrap(),
    ];
    args.extend(SMALL);
    let result = lasp_sim(&args);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let dirs = run_dirs(tmp.path());
    // 2 sizes x 2 repetitions x (star/state, hyparview/state, hyparview/delta).
    assert_eq!(dirs.len(), 12, "{dirs:?}");
    assert!(!dirs.iter().any(|d| d.starts_with("star-delta")));
    for d in &dirs {
        let dir = tmp.path().join(d);
        assert!(dir.join("metrics.csv").exists());
        assert!(dir.join("summary.txt").exists());
    }
    assert_eq!(
        String::from_utf8(result.stdout).unwrap().lines().count(),
        12
    );
}
