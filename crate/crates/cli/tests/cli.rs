use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 7

[domain]
Lx = 1.0
Ly = 1.0
nx = 20
ny = 12

[coefficients]
kappa_expr = "1"
mu_expr = "(x-0.5)^2 + (y-0.5)^2"
u0_expr = "2*exp(-20*((x-0.5)^2 + (y-0.5)^2))"

[time]
T = 0.02

[outputs]
snapshot_times = [0.01, 0.02]
heatmaps = true
"#;

fn chemolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemolab")).args(args).output().expect("spawn chemolab")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn pgm_dims(bytes: &[u8]) -> (usize, usize) {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(64)]).into_owned();
    let mut it = text.split_ascii_whitespace().filter(|t| !t.starts_with('#'));
    assert_eq!(it.next(), Some("P5"));
    (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
}

#[test]
fn negative_mu_is_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("mu_expr = \"(x-0.5)^2 + (y-0.5)^2\"", "mu_expr = \"-1\""));
    let out = chemolab(&["run", &cfg, "--out", &dir.path().join("o").display().to_string()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mu") && err.contains(">= 0"), "stderr: {}", err);
    assert!(!dir.path().join("o").join("diagnostics.csv").exists());
}

#[test]
fn run_writes_csv_sidecars_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let o = dir.path().join("o");
    let out = chemolab(&["run", &cfg, "--out", &o.display().to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("stop_reason=t_reached_T"));

    let csv = fs::read_to_string(o.join("diagnostics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("t,dt,mass,sup_u,argmax_x,argmax_y,A,z_bound"));
    assert!(fs::read_to_string(o.join("run.meta")).unwrap().contains("config.domain.nx=20"));
    assert!(fs::read_to_string(o.join("effective.toml")).unwrap().contains("mu_expr"));

    for t in ["0.01", "0.02"] {
        for f in ["u", "v"] {
            let pgm = fs::read(o.join("snapshots").join(format!("{}_t{}.pgm", f, t))).unwrap();
            assert_eq!(pgm_dims(&pgm), (20, 12));
            assert!(o.join("snapshots").join(format!("{}_t{}.txt", f, t)).exists());
        }
    }
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let o = dir.path().join(name);
        assert!(chemolab(&["run", &cfg, "--out", &o.display().to_string()]).status.success());
        csvs.push(fs::read(o.join("diagnostics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn sweep_over_amplitude_makes_one_dir_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let o = dir.path().join("sweep");
    let mut args = vec!["sweep".to_string(), cfg, "--key".into(), "coefficients.u0_expr".into()];
    for a in [1, 2, 4, 8] {
        args.push("--value".into());
        args.push(format!("{}*exp(-20*((x-0.5)^2 + (y-0.5)^2))", a));
    }
    args.extend(["--out".into(), o.display().to_string()]);
    let out = Command::new(env!("CARGO_BIN_EXE_chemolab")).args(&args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..4 {
        let run = o.join(format!("run_{:03}", i));
        assert!(run.join("diagnostics.csv").exists());
        assert!(fs::read_to_string(run.join("run.meta")).unwrap().contains("blowup.triggered="));
    }
    let sweep = fs::read_to_string(o.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
}

#[test]
fn cutoff_check_prints_constant_and_writes_grids() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("c");
    let out = chemolab(&[
        "cutoff-check",
        "--x0",
        "0",
        "0.5",
        "--r-inner",
        "0.1",
        "--r-outer",
        "0.3",
        "--eta",
        "0.2",
        "--nx",
        "32",
        "--ny",
        "32",
        "--out",
        &o.display().to_string(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bounds_hold=true") && stdout.contains("c_phi="));
    for f in ["phi.txt", "grad_phi.txt", "lap_phi.txt", "cutoff.meta"] {
        assert!(o.join(f).exists(), "{}", f);
    }
}

#[test]
fn cutoff_check_rejects_bad_radii() {
    let dir = tempfile::tempdir().unwrap();
    let out = chemolab(&[
        "cutoff-check",
        "--x0",
        "0.5",
        "0.5",
        "--r-inner",
        "0.3",
        "--r-outer",
        "0.1",
        "--eta",
        "0.2",
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn maxreg_writes_report_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("m");
    let out = chemolab(&[
        "maxreg",
        "--nx",
        "4",
        "--ny",
        "4",
        "--T",
        "0.1",
        "--p",
        "2,3",
        "--budget",
        "30",
        "--out",
        &o.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = fs::read_to_string(o.join("probe.meta")).unwrap();
    assert!(meta.contains("K_hat.p2.q2=") && meta.contains("svd_norm.p2.q2="));
    let samples = fs::read_to_string(o.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().next(), Some("p,q,K_hat,iterations"));
    assert_eq!(samples.lines().count(), 3);
}

#[test]
fn verify_single_criterion_reports_summary() {
    let out = chemolab(&["verify", "--only", "4"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS criterion  4"));
    assert!(stdout.contains("summary passed=1 failed=0 failed_ids=none"));
}
