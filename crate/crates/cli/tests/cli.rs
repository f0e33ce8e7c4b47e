use std::path::Path;
use std::process::{Command, Output};

fn obscheck(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obscheck"))
        .args(args)
        .env("OBSCHECK_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn sample_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn samples_two_points_in_one_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = obscheck(
        &[
            "samples",
            "--dim",
            "1",
            "--count",
            "2",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("LCD distance"));
    let mut v: Vec<f64> = sample_rows(&out).into_iter().map(|r| r[0]).collect();
    v.sort_by(f64::total_cmp);
    assert!(
        (v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9,
        "{v:?}"
    );
}

#[test]
fn samples_five_points_are_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = obscheck(
        &[
            "samples",
            "--dim",
            "2",
            "--count",
            "5",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let rows = sample_rows(&out);
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        assert!(rows.contains(&neg));
    }
}

#[test]
fn samples_zero_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = obscheck(
        &[
            "samples",
            "--dim",
            "1",
            "--count",
            "0",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn missing_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = obscheck(&["run", "--model", "/no/such/model.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/model.json"));
}

#[test]
fn malformed_expression_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    std::fs::write(
        &model,
        r#"{"parameters":[{"name":"a","true_value":1.0}],"mean":"a +","scale":"1"}"#,
    )
    .unwrap();
    let o = obscheck(&["run", "--model", model.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset 3"));
}

#[test]
fn bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&obscheck(&["run", "--bogus"], dir.path())), 1);
    assert_eq!(
        code(&obscheck(
            &["run", "--model", "bundled:variance", "--K", "1"],
            dir.path()
        )),
        1
    );
    assert_eq!(code(&obscheck(&["--help"], dir.path())), 0);
}

#[test]
fn ridge_model_exits_not_observable() {
    let dir = tempfile::tempdir().unwrap();
    let o = obscheck(
        &[
            "run",
            "--model",
            "bundled:ratio_ridge",
            "--T",
            "4",
            "--K",
            "20",
            "-q",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn run_writes_report_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let plot = dir.path().join("plot.csv");
    let o = obscheck(
        &[
            "run",
            "--model",
            "bundled:variance",
            "--T",
            "4,12",
            "--K",
            "30",
            "--out",
            out.to_str().unwrap(),
            "--plot",
            plot.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("OBSERVABLE"));
    assert!(stdout.contains("0.320000"), "{stdout}");
    let csv = std::fs::read_to_string(&plot).unwrap();
    assert!(csv.starts_with("T,k,param,estimate,passed\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 30);

    let r = obscheck(&["report", out.to_str().unwrap()], dir.path());
    assert_eq!(code(&r), 0);
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("LVar(b)"));
    assert!(text.contains("Part II"));
}

#[test]
fn report_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("r{threads}.json"));
        let o = obscheck(
            &[
                "run",
                "--model",
                "bundled:mean_variance",
                "--T",
                "4",
                "--K",
                "40",
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
                "-q",
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0);
        reports.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn every_bundled_model_renders() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "variance",
        "mean_variance",
        "sum_ridge",
        "reciprocal",
        "ratio_sqrt_a",
        "ratio_sqrt_ab",
        "ratio_ridge",
        "product_ridge",
    ] {
        let out = dir.path().join(format!("{name}.json"));
        let o = obscheck(
            &[
                "run",
                "--model",
                &format!("bundled:{name}"),
                "--T",
                "4",
                "--K",
                "12",
                "--out",
                out.to_str().unwrap(),
                "-q",
            ],
            dir.path(),
        );
        assert!(matches!(code(&o), 0 | 3), "{name}");
        let r = obscheck(&["report", out.to_str().unwrap()], dir.path());
        assert_eq!(code(&r), 0, "{name}");
        if code(&o) == 3 {
            assert!(String::from_utf8_lossy(&r.stdout).contains("0 passing runs"));
        }
    }
}

#[test]
fn malformed_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{not json").unwrap();
    assert_eq!(
        code(&obscheck(&["report", p.to_str().unwrap()], dir.path())),
        1
    );
}
