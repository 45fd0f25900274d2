//! End-to-end tests of the command-line interface: exit codes, strict
//! config parsing, manifest completeness and reproducibility. Simulation
//! configs here are deliberately small; the desk-scale golden runs live in
//! the acceptance suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ballflow")
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn ballflow")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL_SIM: &str = r#"
[geometry]
kind = "ball"
radius = 1.0

[discretization]
l_max = 2
n_max = 1

[physics]
nu = 0.1
alpha_kind = "constant"
alpha_value = 0.5

[run]
u0 = "random"
u0_energy = 1.0
u0_spectral_scale = 10.0
dt = 0.001
t_final = 0.3
cadence = 10
seed = 7
"#;

#[test]
fn geometry_golden_configs_classify_correctly() {
    for (config, expected_dim) in [
        ("geometry_ball.toml", 3),
        ("geometry_spheroid.toml", 1),
        ("geometry_triaxial.toml", 0),
    ] {
        let tmp = tempfile::tempdir().unwrap();
        let out = run_cli(&[
            "geometry",
            "--config",
            config_path(config).to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "{config}: {out:?}");
        let report = fs::read_to_string(tmp.path().join("geometry_report.txt")).unwrap();
        assert!(
            report.contains(&format!("ker_s_dimension = {expected_dim}")),
            "{config}: {report}"
        );
    }
}

#[test]
fn spectrum_reports_kernel_and_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "spectrum",
        "--config",
        config_path("spectrum_alpha0.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let constants = fs::read_to_string(tmp.path().join("constants.txt")).unwrap();
    assert!(constants.contains("null_dimension = 3"));
    assert!(constants.contains("mu1 ="));
    let spectrum = fs::read_to_string(tmp.path().join("spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("index,eigenvalue"));

    let tmp1 = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "spectrum",
        "--config",
        config_path("spectrum_alpha1.toml").to_str().unwrap(),
        "--out",
        tmp1.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let constants = fs::read_to_string(tmp1.path().join("constants.txt")).unwrap();
    assert!(constants.contains("null_dimension = 0"));
    let sigma1 = constants
        .lines()
        .find(|l| l.starts_with("sigma1 = "))
        .and_then(|l| l.split(" = ").nth(1))
        .and_then(|v| v.trim().parse::<f64>().ok())
        .unwrap();
    assert!(sigma1 > 0.0);
}

#[test]
fn misspelled_config_key_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[physics]\nviscosity = 0.1\n");
    let out = run_cli(&["spectrum", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("viscosity"), "stderr: {stderr}");
}

#[test]
fn invalid_geometry_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[geometry]\nkind = \"ball\"\nradius = -1.0\n");
    let out = run_cli(&[
        "geometry",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3, "{out:?}");
}

#[test]
fn simulate_writes_manifest_covering_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SIM);
    let out_dir = tmp.path().join("run");
    let out = run_cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--plot",
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");

    let manifest = fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    let parsed: toml::Value = toml::from_str(&manifest).unwrap();
    let files = parsed["files"].as_table().unwrap();
    for entry in fs::read_dir(&out_dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().to_string();
        if name == "manifest.toml" {
            continue;
        }
        let recorded = files
            .get(&name)
            .and_then(|v| v.as_str())
            .unwrap_or_else(|| panic!("file {name} missing from manifest"));
        let actual = ballflow::cli::sha256_file(&entry.path()).unwrap();
        assert_eq!(recorded, actual, "checksum mismatch for {name}");
    }
    assert!(files.contains_key("series.csv"));
    assert!(files.contains_key("decay.svg"));
    let svg = fs::read_to_string(out_dir.join("decay.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn identical_seeds_give_identical_csv_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SIM);
    let mut digests = Vec::new();
    for run_dir in ["a", "b"] {
        let out_dir = tmp.path().join(run_dir);
        let out = run_cli(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0);
        digests.push(ballflow::cli::sha256_file(&out_dir.join("series.csv")).unwrap());
    }
    assert_eq!(digests[0], digests[1]);

    // A different seed changes the trajectory.
    let out_dir = tmp.path().join("c");
    let out = run_cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "8",
    ]);
    assert_eq!(exit_code(&out), 0);
    let other = ballflow::cli::sha256_file(&out_dir.join("series.csv")).unwrap();
    assert_ne!(digests[0], other);
}

#[test]
fn oversized_nonlinear_data_aborts_with_exit_6() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[geometry]
kind = "ball"

[discretization]
l_max = 2
n_max = 1

[physics]
nu = 0.1

[run]
u0 = "random"
u0_energy = 1e8
dt = 0.001
t_final = 0.2
cadence = 1
seed = 3
"#,
    );
    let out = run_cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    // The linear stability guard passes but the quadratic term blows up the
    // explicit step; the run must abort with the instability exit code.
    assert_eq!(exit_code(&out), 6, "{out:?}");
}

#[test]
fn variable_friction_run_reports_measured_rate() {
    // Exploratory configuration: nonconstant alpha >= 0 on the ball.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[geometry]
kind = "ball"

[discretization]
l_max = 2
n_max = 1

[physics]
nu = 0.1
alpha_kind = "cos2"
alpha_value = 0.5
alpha_amplitude = 1.0

[run]
u0 = "random"
u0_energy = 1.0
u0_spectral_scale = 10.0
dt = 0.001
t_final = 0.5
cadence = 5
seed = 12
"#,
    );
    let out_dir = tmp.path().join("out");
    let out = run_cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let report = fs::read_to_string(out_dir.join("run_report.txt")).unwrap();
    assert!(report.contains("eta = "));
    assert!(report.contains("min_alpha = 5.0"));
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Exact exponential: exit 0.
    let mut good = String::from("t,E\n");
    for k in 0..=2000 {
        let t = k as f64 * 1e-3;
        good.push_str(&format!("{t},{}\n", 2.0 * (-1.5 * t).exp()));
    }
    let good_path = tmp.path().join("good.csv");
    fs::write(&good_path, &good).unwrap();
    let out = run_cli(&[
        "verify",
        "--series",
        good_path.to_str().unwrap(),
        "--rate",
        "1.5",
        "--out",
        tmp.path().join("v0").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");

    // Constant trajectory: hypothesis fails, exit 7.
    let mut flat = String::from("t,E\n");
    for k in 0..=100 {
        flat.push_str(&format!("{},1.0\n", k as f64 * 0.01));
    }
    let flat_path = tmp.path().join("flat.csv");
    fs::write(&flat_path, &flat).unwrap();
    let out = run_cli(&[
        "verify",
        "--series",
        flat_path.to_str().unwrap(),
        "--rate",
        "1.0",
        "--out",
        tmp.path().join("v1").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 7, "{out:?}");

    // Trajectory satisfying the integral hypothesis for a small rate but
    // violating the exponential bound claimed at a larger rate is not
    // constructible (the theorem holds), so the bound-failure path is
    // exercised by verifying a decaying-then-flat sequence where the
    // hypothesis holds only thanks to the curvature allowance while the
    // pointwise bound fails: y = e^{-2 K t} early, then held constant at a
    // level above the e^{-K t} envelope... such data violates the
    // hypothesis too. Exit 8 is therefore covered at the unit level via the
    // error mapping; here we assert the mapping constant.
    assert_eq!(
        ballflow::cli::CliError::BoundFailed(2.0).exit_code(),
        ballflow::cli::EXIT_BOUND_FAIL
    );
}

#[test]
fn verify_reads_named_and_derived_columns() {
    let tmp = tempfile::tempdir().unwrap();
    // Small simulation with a conserved rigid component; verify E_dev.
    let cfg = write_config(
        tmp.path(),
        r#"
[geometry]
kind = "ball"

[discretization]
l_max = 2
n_max = 1

[physics]
nu = 0.1

[run]
u0 = "random"
u0_energy = 0.09
u0_spectral_scale = 10.0
deflate_kernel = false
dt = 0.001
t_final = 6.0
cadence = 2
seed = 21
"#,
    );
    let out_dir = tmp.path().join("sim");
    let out = run_cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    // Rate: 4 nu mu1 from the run report.
    let report = fs::read_to_string(out_dir.join("run_report.txt")).unwrap();
    let rate: f64 = report
        .lines()
        .find(|l| l.starts_with("rate_mu = "))
        .and_then(|l| l.split(" = ").nth(1))
        .and_then(|v| v.trim().parse().ok())
        .unwrap();
    let out = run_cli(&[
        "verify",
        "--series",
        out_dir.join("series.csv").to_str().unwrap(),
        "--rate",
        &format!("{rate}"),
        "--column",
        "E_dev",
        "--out",
        tmp.path().join("v").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let gr = fs::read_to_string(tmp.path().join("v").join("gronwall_report.txt")).unwrap();
    assert!(gr.contains("bound_ok = true"), "{gr}");
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let out = run_cli(&["spectrum"]);
    assert_eq!(exit_code(&out), 2);
}
