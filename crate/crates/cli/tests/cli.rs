use std::path::Path;
use std::process::{Command, Output};

use hbem_cli::scatter::ScatterReport;

fn hbem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbem")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn scatter(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["scatter", "--config", config, "--out", out];
    args.extend_from_slice(extra);
    hbem(&args)
}

#[test]
fn help_documents_outputs() {
    let out = hbem(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for col in ["theta_deg,re,im,abs_u,TS_dB", "speedup", "Exit codes"] {
        assert!(text.contains(col), "missing {col}");
    }
}

#[test]
fn scatter_writes_far_field_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", r#"{"mesh": {"type": "sphere", "level": 2}, "wavenumber": 1.0}"#);
    let out = scatter(dir.path(), &cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut reader = csv::Reader::from_path(dir.path().join("far_field.csv")).unwrap();
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, ["theta_deg", "re", "im", "abs_u", "TS_dB"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3600);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    assert!((rows[1][0].parse::<f64>().unwrap() - 0.1).abs() < 1e-12);
    for r in &rows {
        let (re, im, abs): (f64, f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!((re.hypot(im) - abs).abs() <= 1e-12 * abs.max(1e-300));
    }

    let report: ScatterReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scatter_report.json")).unwrap()).unwrap();
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.config.evaluation_points, 3600);
    assert_eq!(report.config.wavenumber, Some(1.0));
    assert!(report.config.frequency.is_some());
    assert!(report.residual <= report.config.solver_tolerance);
    assert_eq!(report.residual_history.len(), report.iterations + 1);
}

#[test]
fn scatter_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let json = r#"{"mesh": {"type": "sphere", "level": 1}, "wavenumber": 0.5, "evaluation_points": 90}"#;
    for d in [&a, &b] {
        let cfg = write_config(d.path(), "s.json", json);
        assert!(scatter(d.path(), &cfg, &["--workers", "1"]).status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("far_field.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn under_resolved_mesh_is_refused_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    // about four elements per wavelength on the level-1 sphere
    let mesh = hbem::mesh::refine_unit_sphere(1).unwrap();
    let k = 2.0 * std::f64::consts::PI / (4.0 * mesh.mean_edge_length());
    let cfg = write_config(
        dir.path(),
        "s.json",
        &format!(r#"{{"mesh": {{"type": "sphere", "level": 1}}, "wavenumber": {k}, "evaluation_points": 36}}"#),
    );
    let refused = scatter(dir.path(), &cfg, &[]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("wavelength"));
    assert!(!dir.path().join("far_field.csv").exists());
    let forced = scatter(dir.path(), &cfg, &["--force"]);
    assert!(forced.status.success(), "{}", String::from_utf8_lossy(&forced.stderr));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "bad.json", r#"{"wavenumbr": 1.0}"#);
    assert_eq!(scatter(dir.path(), &unknown, &[]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(scatter(dir.path(), missing.to_str().unwrap(), &[]).status.code(), Some(2));
    let no_mesh = write_config(dir.path(), "m.json", r#"{"mesh": {"type": "file", "path": "absent.msh"}}"#);
    assert_eq!(scatter(dir.path(), &no_mesh, &[]).status.code(), Some(2));
    let bench = write_config(dir.path(), "b.json", r#"{"levels": []}"#);
    let out = hbem(&["bench", "--config", &bench, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.json",
        r#"{"levels": [1], "repetitions": 1, "operators": ["slp"], "equations": [{"type": "helmholtz", "wavenumber": 2.0}]}"#,
    );
    let out = hbem(&["bench", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--mode", "hmatrix"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("bench_speedups.csv")).unwrap();
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        headers,
        ["operator", "equation", "n", "mode", "precision", "t_reference_s", "t_batched_s", "speedup"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][3], "hmatrix");
    let runs = csv::Reader::from_path(dir.path().join("bench_runs.csv")).unwrap().into_records().count();
    assert_eq!(runs, 2);
}
