use std::path::Path;
use std::process::{Command, Output};

fn handover(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handover")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn single_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = handover(&["single", "--trials", "1", "--zero-noise", "--serial", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r/single-needle1-l2r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 29);
    assert!(csv.starts_with("variant,needle,direction,config,seed,success,failure"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/single-needle1-l2r.json")).unwrap()).unwrap();
    assert_eq!(json["table"]["rows"][0]["total"], 28);
}

#[test]
fn trial_failures_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = handover(&["multi", "--trials", "1", "--fail-at", "0", "--out", "r"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("handovers   0"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("r/multi-needle1-towards.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",0,"));
}

#[test]
fn render_then_fit_recovers_the_needle() {
    let dir = tempfile::tempdir().unwrap();
    let o = handover(&["render", "--zero-noise", "--out", "m"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    let gripper = out.lines().find_map(|l| l.strip_prefix("gripper ")).unwrap().to_string();
    let o = handover(
        &["fit", "--left", "m/towards-tip-0-left.pgm", "--right", "m/towards-tip-0-right.pgm", "--gripper", &gripper],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let center: Vec<f64> = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("center"))
        .unwrap()
        .split(',')
        .map(|s| s.trim().parse().unwrap())
        .collect();
    let g: Vec<f64> = gripper.split(',').map(|s| s.parse().unwrap()).collect();
    let d = center.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!((d - 0.0125).abs() < 0.002, "center {d} m from the gripper");
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!handover(&["single", "--needle", "7"], dir.path()).status.success());
    assert!(!handover(&["render", "--start", "sideways-tip-0"], dir.path()).status.success());
    assert!(!handover(&["single", "--noise-profile", "missing.ini"], dir.path()).status.success());
}
