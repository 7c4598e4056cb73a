use std::path::Path;
use std::process::{Command, Output};

fn trisaddle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trisaddle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// (kind, IT) pairs from a solve table.
fn iterations(text: &str) -> Vec<(String, usize)> {
    text.lines()
        .filter_map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                [kind, it, _, _, _] => it.parse().ok().map(|it| (kind.to_string(), it)),
                _ => None,
            }
        })
        .collect()
}

#[test]
fn solve_stokes_f3_takes_two_steps() {
    let out = trisaddle(&["solve", "--problem", "stokes-modified", "--p", "32", "--recipe", "ex61", "--kinds", "f3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(iterations(&stdout(&out)), vec![("f3".to_string(), 2)]);
}

#[test]
fn exact_bounds_for_block_diagonal() {
    let out = trisaddle(&["bounds", "--problem", "stokes-modified", "--p", "4", "--recipe", "exact", "--kinds", "d"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().find(|l| l.starts_with("d ")).unwrap().split_whitespace().collect();
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[2].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = trisaddle(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_kind_is_usage_error() {
    let out = trisaddle(&["solve", "--problem", "stokes-modified", "--p", "4", "--kinds", "f9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_one() {
    let out = trisaddle(&["solve", "--problem", "stokes-modified", "--p", "8", "--kinds", "d", "--maxit", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generated_files_solve_like_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let sysdir = dir.path().join("img");
    let sysdir = sysdir.to_str().unwrap();
    let gen = trisaddle(&["generate", "--problem", "image-restoration", "--p", "6", "--out", sysdir]);
    assert_eq!(gen.status.code(), Some(0));
    for f in ["A.mtx", "B.mtx", "C.mtx", "D.mtx", "system.json"] {
        assert!(Path::new(sysdir).join(f).exists(), "{f}");
    }
    let mem = trisaddle(&["solve", "--problem", "image-restoration", "--p", "6", "--recipe", "ex62"]);
    let file = trisaddle(&["solve", "--input", sysdir, "--recipe", "ex62"]);
    assert_eq!(mem.status.code(), Some(0));
    assert_eq!(file.status.code(), Some(0));
    let a = iterations(&stdout(&mem));
    assert_eq!(a.len(), 8);
    assert_eq!(a, iterations(&stdout(&file)));
}

fn strip_timing(v: &mut serde_json::Value) {
    for row in v["rows"].as_array_mut().unwrap() {
        row["wall_time_ms"] = serde_json::Value::Null;
    }
}

#[test]
fn bench_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let stem = dir.path().join(name);
        let out = trisaddle(&[
            "bench",
            "--problem",
            "stokes-modified",
            "--sizes",
            "4,6",
            "--recipe",
            "ex61",
            "--out",
            stem.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let text = std::fs::read_to_string(stem.with_extension("json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["rows"].as_array().unwrap().len(), 16);
        let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
        assert_eq!(csv.lines().count(), 17);
        strip_timing(&mut v);
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"problems":[{"generated":{"family":"stokes-modified","p":4}}],"recipe":"ex61","kinds":["d","f5"],
            "solver":{"tol":1e-6,"maxit":1000,"restart":null,"record_history":false},"droptol":1e-8}"#,
    )
    .unwrap();
    let out = trisaddle(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let kinds: Vec<String> = iterations(&stdout(&out)).into_iter().map(|(k, _)| k).collect();
    assert_eq!(kinds, ["d", "f5"]);
    let out = trisaddle(&["solve", "--config", cfg.to_str().unwrap(), "--kinds", "f3"]);
    let kinds: Vec<String> = iterations(&stdout(&out)).into_iter().map(|(k, _)| k).collect();
    assert_eq!(kinds, ["f3"]);
}

#[test]
fn spectrum_plotdata_for_exact_f3_is_one_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let out = trisaddle(&[
        "spectrum",
        "--problem",
        "stokes-modified",
        "--p",
        "4",
        "--recipe",
        "exact",
        "--kinds",
        "f3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let csv = std::fs::read_to_string(dir.path().join("spectrum_f3.csv")).unwrap();
    let mut lines = csv.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(lines.next(), Some("re,im,in_box"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 64);
    for r in rows {
        let f: Vec<f64> = r.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((f[0] - 1.0).abs() < 1e-6 && f[1].abs() < 1e-6, "{r}");
    }
}

#[test]
fn spectrum_contains_all_kinds_for_stokes() {
    let out = trisaddle(&["spectrum", "--problem", "stokes-modified", "--p", "4", "--recipe", "ex61"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.trim_end().ends_with("yes")).count(), 8);
}

#[test]
fn validate_poisson_control() {
    let out = trisaddle(&["validate", "--problem", "poisson-control", "--grid-pow", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASSED"));
}
