//! End-to-end checks of the `civi` binary surface: subcommands, config
//! rejection, case files, and manifest re-runs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn civi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_civi"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("civi_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn mini_toy_config(dir: &Path) -> PathBuf {
    let path = dir.join("toy.toml");
    std::fs::write(
        &path,
        r#"
experiment = "toy"
target = "two-modal"
seed = 3
n = 64
eval_samples = 300
[schedule]
c_alpha = 3e-4
c_beta = 0.99
c1 = 16
c2 = 32
c3 = 16
c_gamma = 0.9
mu = 0.999
d_t = 16
iters = 10
[model]
hidden = [10, 10]
"#,
    )
    .unwrap();
    path
}

#[test]
fn toy_subcommand_writes_all_artifacts() {
    let dir = tmp("toy_artifacts");
    let cfg = mini_toy_config(&dir);
    let out = dir.join("run");
    let status = civi()
        .args(["toy", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--deterministic"])
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "trajectory.csv",
        "samples.csv",
        "learned_grid.csv",
        "target_grid.csv",
        "manifest.toml",
        "summary.toml",
    ] {
        assert!(out.join(f).exists(), "missing artifact {f}");
    }
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next().unwrap(), "t,loss,grad_norm,alpha,wall_ms");
    assert_eq!(lines.count(), 10);
    let grid = std::fs::read_to_string(out.join("target_grid.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "x,y,logdensity");
    assert_eq!(grid.lines().count(), 100 * 100 + 1);
}

#[test]
fn rerun_reproduces_trajectory_bytes() {
    let dir = tmp("rerun");
    let cfg = mini_toy_config(&dir);
    let out1 = dir.join("a");
    assert!(civi()
        .args(["toy", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out1)
        .args(["--deterministic"])
        .status()
        .unwrap()
        .success());
    let out2 = dir.join("b");
    assert!(civi()
        .args(["rerun", "--manifest"])
        .arg(out1.join("manifest.toml"))
        .arg("--out")
        .arg(&out2)
        .status()
        .unwrap()
        .success());
    let a = std::fs::read(out1.join("trajectory.csv")).unwrap();
    let b = std::fs::read(out2.join("trajectory.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tmp("badcfg");
    let path = dir.join("bad.toml");
    let text = std::fs::read_to_string(mini_toy_config(&dir)).unwrap();
    std::fs::write(
        &path,
        text.replace("iters = 10", "iters = 10\nwarmup_iters = 3"),
    )
    .unwrap();
    let out = civi()
        .args(["toy", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warmup_iters"), "stderr: {stderr}");
}

#[test]
fn unknown_toy_target_is_rejected() {
    let dir = tmp("badtarget");
    let out = civi()
        .args(["toy", "--target", "spiral", "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown toy target"), "stderr: {stderr}");
}

#[test]
fn recurrence_case_file_verdict() {
    let dir = tmp("recurrence");
    let good = dir.join("good.toml");
    std::fs::write(
        &good,
        "c_eta = 2.0\nc_zeta = 1.0\na = 0.2\nb = 1.0\nc1 = 1.0\nc2 = 1.0\na1 = 1.0\nhorizon = 10000\n",
    )
    .unwrap();
    let out = civi()
        .args(["recurrence", "--case"])
        .arg(&good)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("HOLDS"));

    // constraint violation is a rejected case
    let bad = dir.join("bad.toml");
    std::fs::write(
        &bad,
        "c_eta = 1.0\nc_zeta = 1.0\na = 0.2\nb = 1.0\nc1 = 1.0\nc2 = 1.0\na1 = 1.0\nhorizon = 10000\n",
    )
    .unwrap();
    let out = civi()
        .args(["recurrence", "--case"])
        .arg(&bad)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("rejected case"));
}

#[test]
fn synth_blr_then_train_smoke() {
    let dir = tmp("synth");
    let csv = dir.join("data.csv");
    assert!(civi()
        .args(["synth-blr", "--rows", "30", "--coeffs", "0.5,-0.5", "--out"])
        .arg(&csv)
        .args(["--seed", "4"])
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 30);

    // a tiny blr run over it
    let cfgp = dir.join("blr.toml");
    std::fs::write(
        &cfgp,
        format!(
            r#"
experiment = "blr"
dataset = "{}"
seed = 5
n = 32
eval_samples = 200
mcmc_steps = 20000
[schedule]
c_alpha = 1e-3
c_beta = 0.99
c1 = 8
c2 = 16
c3 = 8
c_gamma = 0.9
mu = 0.999
d_t = 8
iters = 6
[model]
hidden = [8, 8]
cov = "cholesky"
"#,
            csv.display()
        ),
    )
    .unwrap();
    let out = dir.join("blrrun");
    assert!(civi()
        .args(["blr", "--config"])
        .arg(&cfgp)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    assert!(out.join("comparison.csv").exists());
    assert!(out.join("posterior_samples.csv").exists());
    let cmp = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(cmp.starts_with("coord,vi_mean,vi_std,mcmc_mean,mcmc_std"));
}

#[test]
fn gradcheck_subcommand_passes() {
    let out = civi().args(["gradcheck", "--seed", "6"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gradcheck overall: PASS"), "{stdout}");
}
