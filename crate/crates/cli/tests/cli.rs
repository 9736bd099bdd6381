use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multicrit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn convergents_print_fibonacci_denominators() {
    let out = run(&["convergents", "--target", "golden", "--depth", "8"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let q: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(&q[..7], ["1", "1", "2", "3", "5", "8", "13"]);
}

#[test]
fn rigid_partition_is_written_as_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let out = run(&["partition", "--level", "5", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("\"passed\": true"));
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 1 + 8 + 13);
}

#[test]
fn report_on_a_small_config_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("suite.toml");
    std::fs::write(
        &config,
        "target = \"golden\"\nlevels = [1, 4]\ngrid = 8\n\n[[maps]]\nid = \"a\"\ncritical_points = [[0.0, 3]]\n\n[[maps]]\nid = \"b\"\ncritical_points = [[0.3, 3]]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("report");
    let out = run(&["report", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("PASS") && !text.contains("FAIL"));
    for name in ["bounds.csv", "crd.csv", "scaling.csv", "spread.csv", "qs.csv", "summary.json", "crd.svg"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["all_passed"], true);
}

#[test]
fn malformed_critical_point_is_rejected() {
    let out = run(&["partition", "--level", "2", "--critical", "0.5"]);
    assert!(!out.status.success());
}
