use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vlasov-dlr"));
    c.env("RUST_LOG", "warn").env_remove("VLASOV_DLR_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

/// Rows without the wall-clock column.
fn without_wall_time(header: &[String], rows: &[Vec<String>]) -> Vec<Vec<String>> {
    let w = column(header, "wall_time_s");
    rows.iter()
        .map(|r| r.iter().enumerate().filter(|(i, _)| *i != w).map(|(_, x)| x.clone()).collect())
        .collect()
}

#[test]
fn landau_defaults_start_with_closed_form_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["-o", "time.t_final=3e-3", "-o", "time.tau=1e-3", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("run.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][column(&header, "t")].parse::<f64>().unwrap(), 0.0);
    // E = -(a/k) sin(kx) on [0, 4π]: ½∫E² = ½ (a/k)² 2π
    let exact = 0.5 * (0.01f64 / 0.5).powi(2) * 2.0 * std::f64::consts::PI;
    let e0: f64 = rows[0][column(&header, "electric_energy")].parse().unwrap();
    assert!((e0 - exact).abs() <= 1e-3 * exact, "{e0} vs {exact}");
    assert_eq!(rows[0][column(&header, "continuity_res_rho")], "NaN");
    assert!(out.join("manifest.toml").exists());
    assert!(out.join("final.ckpt").exists());
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"completed\""), "{manifest}");
    assert!(manifest.contains("scenario = \"landau_1d\""), "{manifest}");
}

#[test]
fn free_transport_has_no_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ft");
    let o = run(&[
        "-o",
        "scenario=\"free_transport_2d\"",
        "-o",
        "mesh.n_x=[4]",
        "-o",
        "mesh.n_v=[8]",
        "-o",
        "time.t_final=1e-2",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("run.csv"));
    let e = column(&header, "electric_energy");
    assert!(header.contains(&"momentum_2".to_string()));
    assert!(rows.iter().all(|r| r[e].parse::<f64>().unwrap() == 0.0));
    assert!(out.join("adapt.csv").exists());
}

#[test]
fn invalid_alpha_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let o = run(&["-o", "integrator.alpha=2", "-o", "time.tau=0", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().find(|l| l.starts_with('{')).expect("error record");
    let record: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(record["status"], "error");
    assert_eq!(record["kind"], "config");
    let msg = record["message"].as_str().unwrap();
    assert!(msg.contains("integrator.alpha") && msg.contains("time.tau"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn config_file_and_dry_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        "scenario = \"custom\"\n[mesh]\nn_x = [8]\nn_v = [16]\n[custom]\namplitude = 0.05\nwavenumber = 0.5\nv_sigma = 1.0\n",
    )
    .unwrap();
    let o = run(&[path.to_str().unwrap(), "--dry-run", "-o", "time.tau=5e-4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("amplitude = 0.05"), "{text}");
    assert!(text.contains("tau = 0.0005"), "{text}");
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["-o", "time.tau=1e-3", "-o", "mesh.n_x=[8]", "-o", "mesh.n_v=[16]", "--threads", "2"];
    let go = |name: &str, tf: &str, resume: Option<&Path>| {
        let out = dir.path().join(name);
        let mut args: Vec<String> = common.iter().map(|s| s.to_string()).collect();
        args.extend(["-o".into(), format!("time.t_final={tf}"), "--output".into(), out.display().to_string()]);
        if let Some(r) = resume {
            args.extend(["--resume".into(), r.display().to_string()]);
        }
        let o = bin().args(&args).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = go("a", "0.02", None);
    let b = go("b", "0.02", None);
    let (ha, ra) = read_csv(&a.join("run.csv"));
    let (_, rb) = read_csv(&b.join("run.csv"));
    assert_eq!(without_wall_time(&ha, &ra), without_wall_time(&ha, &rb));

    let c = go("c", "0.01", None);
    go("c", "0.02", Some(&c.join("final.ckpt")));
    let (_, rc) = read_csv(&c.join("run.csv"));
    assert_eq!(without_wall_time(&ha, &ra), without_wall_time(&ha, &rc));
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"VDLRCKPT\x01\x00\x00\x00garbage").unwrap();
    let o = run(&["--resume", bad.to_str().unwrap(), "--output", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("\"kind\":\"checkpoint\""), "{stderr}");
}
