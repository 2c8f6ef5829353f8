use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evodiff::config::load_config;
use evodiff::io::read_snapshot;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evodiff"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn exec(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("binary runs");
    (
        status.code().expect("exit code"),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

#[test]
fn examples_complete_with_status_zero() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["brusselator.toml", "reversible.toml", "example3.toml"] {
        let out = dir.path().join(name);
        let (code, stdout, stderr) =
            exec(bin().arg("run").arg(config(name)).arg("--out").arg(&out));
        assert_eq!(code, 0, "{name}: {stdout}{stderr}");
        assert!(stdout.starts_with("completed"));
        assert!(out.join("diagnostics.csv").is_file());
        assert!(out.join("manifest.json").is_file());
    }
}

#[test]
fn blowup_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = exec(
        bin().arg("run").arg(config("blowup.toml")).arg("--out").arg(dir.path()),
    );
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.starts_with("blowup-detected"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["termination"]["kind"], "blowup-detected");
}

#[test]
fn run_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let (code, ..) = exec(
        bin().arg("run").arg(config("reversible.toml")).arg("--out").arg(dir.path()),
    );
    assert_eq!(code, 0);
    let (header, first) = read_snapshot(&dir.path().join("snapshot_00000.bin")).unwrap();
    assert_eq!((header.n, header.m, header.counts.clone()), (2, 3, vec![17, 17]));
    assert_eq!(first.t, 0.0);
    // the first snapshot is exactly the configured initial data
    let cfg = load_config(&config("reversible.toml")).unwrap();
    let (_, init) = cfg.build().unwrap();
    assert_eq!(first.components, init.components);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let keys: Vec<&str> = manifest["deviations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["key"].as_str().unwrap())
        .collect();
    assert!(keys.contains(&"box-boundary") && keys.contains(&"k1-relaxation"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let csv = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let header_row = csv.lines().next().unwrap();
    assert_eq!(
        header_row,
        "t,l1_bulk_1,l1_bulk_2,l1_bulk_3,l1_boundary_1,l1_boundary_2,l1_boundary_3,\
         sup,min,evolving_mass,lyapunov_p,conservation_residual"
    );
}

#[test]
fn invalid_configuration_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("reversible.toml"))
        .unwrap()
        .replace("t_end = 0.5", "t_end = 5.0\nsafety = 2.0")
        .replace("nodes = [17, 17]", "nodes = [17]");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let (code, _, stderr) = exec(bin().arg("run").arg(&path));
    assert_eq!(code, 1);
    assert!(stderr.contains("time.t_end") && stderr.contains("growth.horizon"), "{stderr}");
    assert!(stderr.contains("time.safety") && stderr.contains("grid.nodes"), "{stderr}");
}

#[test]
fn export_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for what in ["diagnostics", "slices", "final"] {
        for dir in [&a, &b] {
            let (code, ..) = exec(
                bin().args(["export"]).arg(config("reversible.toml"))
                    .args(["--what", what, "--out"]).arg(dir.path()),
            );
            assert_eq!(code, 0);
        }
        let file = format!("{}.csv", what);
        assert_eq!(
            std::fs::read(a.path().join(&file)).unwrap(),
            std::fs::read(b.path().join(&file)).unwrap()
        );
    }
    let (code, _, stderr) = exec(
        bin().arg("export").arg(config("reversible.toml")).args(["--what", "everything"]),
    );
    assert_eq!(code, 1);
    assert!(stderr.contains("unknown export selector"));
}

#[test]
fn check_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("conditions.json");
    let (code, stdout, _) = exec(
        bin().arg("check").arg(config("reversible.toml")).arg("--report").arg(&report),
    );
    assert_eq!(code, 0);
    assert!(stdout.contains("quasi-positivity"));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let sums = parsed
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["condition"].as_str().unwrap().starts_with("intermediate-sums"))
        .unwrap();
    assert_eq!(sums["constants"]["L1"], 0.0);
}

#[test]
fn kernel_and_convergence_subcommands() {
    let (code, stdout, _) = exec(bin().args(["kernel", "--op", "cn", "--n", "2"]));
    assert_eq!(code, 0);
    let row: Vec<f64> = stdout.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[4] / (4.0 * std::f64::consts::PI) - 1.0).abs() < 1e-8);

    let (code, stdout, _) = exec(bin().args(["kernel", "--op", "verify-z0", "--n", "1", "--mode", "standard"]));
    assert_eq!(code, 0);
    assert!(stdout.contains(",false"));

    let (code, ..) = exec(bin().args(["kernel", "--op", "density", "--n", "1", "--geometry", "circle"]));
    assert_eq!(code, 1);

    let (code, stdout, _) = exec(bin().args(["convergence", "linear"]));
    assert_eq!(code, 0);
    assert!(stdout.contains("exact"));
    let (code, ..) = exec(bin().args(["convergence", "no-such-case"]));
    assert_eq!(code, 1);
}

#[test]
fn lyapunov_and_duality_subcommands() {
    let (code, stdout, _) = exec(bin().arg("lyapunov").arg(config("brusselator.toml")));
    assert_eq!(code, 0);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("t,P"));
    assert!(lines.all(|l| l.split(',').nth(1).is_some_and(|p| p.parse::<f64>().unwrap() > 0.0)));

    let (code, stdout, _) = exec(bin().arg("dual-check").arg(config("reversible.toml")).args(["--xi", "1 + x*y"]));
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("\"passes\": true"));
}

#[test]
fn thread_cap_is_validated() {
    let (code, ..) = exec(bin().env("EVODIFF_THREADS", "1").args(["kernel", "--op", "cn", "--n", "3"]));
    assert_eq!(code, 0);
    let (code, _, stderr) = exec(bin().env("EVODIFF_THREADS", "many").args(["kernel", "--op", "cn"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("EVODIFF_THREADS"));
}
