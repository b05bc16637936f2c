use std::path::Path;
use std::process::{Command, Output};

use tatwave::io::{read_field, read_trace};
use tatwave::norms::norm_omega;
use tatwave::{make_medium, MediumSpec};

fn tatwave(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tatwave")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn phantom(dir: &Path, n: usize) {
    let out = tatwave(dir, &["make-phantom", "--blobs", "0.45,0.55,0.08,1", "--grid", &n.to_string(), "--out", "p.epf"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn simulate_then_reconstruct_recovers_the_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 41);
    let out = tatwave(d, &["simulate", "--phantom", "p.epf", "--medium", "twolens", "--lambda", "full:1", "--tau", "2.0", "--out", "d.ept"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = tatwave(d, &["info", "d.ept"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("format=EPT1") && text.contains("nx=41"), "{text}");

    let out = tatwave(
        d,
        &[
            "reconstruct", "cg", "--data", "d.ept", "--medium", "twolens", "--lambda", "full:1", "--out", "u.epf",
            "--history", "h.csv", "--tol", "1e-6", "--max-iter", "60",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let truth = read_field(d.join("p.epf")).unwrap();
    let est = read_field(d.join("u.epf")).unwrap();
    let med = make_medium(&MediumSpec::two_lens(), *truth.grid()).unwrap();
    let err = norm_omega(&est.sub(&truth).unwrap(), &med).unwrap() / norm_omega(&truth, &med).unwrap();
    assert!(err < 0.05, "relative error {err}");
    let history = std::fs::read_to_string(d.join("h.csv")).unwrap();
    assert!(history.starts_with("iter,residual_or_update,ratio"));
}

#[test]
fn noise_and_fine_factor_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 21);
    let base = ["simulate", "--phantom", "p.epf", "--medium", "const:1", "--lambda", "faces:right,top:1", "--tau", "1.5"];
    let run = |extra: &[&str], out: &str| {
        let args: Vec<&str> = base.iter().chain(extra).chain(&["--out", out]).copied().collect();
        assert_eq!(code(&tatwave(d, &args)), 0);
        read_trace(d.join(out)).unwrap()
    };
    let clean = run(&["--fine-factor", "1"], "a.ept");
    let noisy = run(&["--fine-factor", "1", "--noise", "0.1", "--seed", "4"], "b.ept");
    let again = run(&["--fine-factor", "1", "--noise", "0.1", "--seed", "4"], "c.ept");
    let fine = run(&[], "f.ept");
    assert_eq!(noisy.trace.values(), again.trace.values());
    assert_ne!(clean.trace.values(), noisy.trace.values());
    assert_ne!(clean.trace.values(), fine.trace.values());
    for (k, &g) in clean.bnd.gamma().iter().enumerate() {
        if !g {
            assert!((0..noisy.trace.times().levels()).all(|n| noisy.trace.get(n, k) == 0.0));
        }
    }
}

#[test]
fn neumann_without_impedance_reports_not_converged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 21);
    let out = tatwave(
        d,
        &["simulate", "--phantom", "p.epf", "--medium", "const:1", "--lambda", "none", "--gamma", "full", "--tau", "2", "--out", "d.ept"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = tatwave(d, &["reconstruct", "neumann", "--data", "d.ept", "--medium", "const:1", "--out", "u.epf"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("not converged"));
}

#[test]
fn mismatched_lambda_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 21);
    let sim = ["simulate", "--phantom", "p.epf", "--medium", "const:1", "--lambda", "full:1", "--tau", "1.5", "--out", "d.ept"];
    assert_eq!(code(&tatwave(d, &sim)), 0);
    let out = tatwave(d, &["reconstruct", "cg", "--data", "d.ept", "--medium", "const:1", "--lambda", "full:2", "--out", "u.epf"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn malformed_inputs_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.epf"), b"not a header\n").unwrap();
    let out = tatwave(d, &["info", "bad.epf"]);
    assert_eq!(code(&out), 1);
    assert_eq!(stderr(&out).trim().lines().count(), 1);

    phantom(d, 21);
    let bytes = std::fs::read(d.join("p.epf")).unwrap();
    std::fs::write(d.join("short.epf"), &bytes[..bytes.len() - 8]).unwrap();
    assert_eq!(code(&tatwave(d, &["info", "short.epf"])), 1);

    let out = tatwave(d, &["info", "p.epf", "--bogus"]);
    assert_ne!(code(&out), 0);
    assert_eq!(stderr(&out).trim().lines().count(), 1);
    assert_ne!(code(&tatwave(d, &["simulate", "--phantom", "p.epf", "--medium", "const:-1", "--lambda", "full:1", "--tau", "1", "--out", "x.ept"])), 0);
    assert_ne!(code(&tatwave(d, &["make-phantom", "--blobs", "0.05,0.5,0.1,1", "--out", "edge.epf"])), 0);
    assert_eq!(code(&tatwave(d, &["--help"])), 0);
}

#[test]
fn pgm_flag_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = tatwave(d, &["make-phantom", "--kind", "smoothed_disks", "--count", "3", "--seed", "2", "--grid", "33", "--out", "p.epf", "--pgm"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let img = std::fs::read(d.join("p.pgm")).unwrap();
    assert!(img.starts_with(b"P5\n33 33\n255\n"));
    assert_eq!(img.len(), b"P5\n33 33\n255\n".len() + 33 * 33);
    let sim = ["simulate", "--phantom", "p.epf", "--medium", "const:1", "--lambda", "full:1", "--tau", "1", "--out", "d.ept", "--pgm"];
    assert_eq!(code(&tatwave(d, &sim)), 0);
    assert!(std::fs::read(d.join("d.pgm")).unwrap().starts_with(b"P5\n"));
}

#[test]
fn diagnostics_subcommands_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = tatwave(d, &["adjoint-check", "--mode", "exact", "--trials", "3", "--seed", "1", "--report", "a.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.contains("exact_discrete")));

    let out = tatwave(
        d,
        &["gcc", "--medium", "const:1", "--gamma-spec", "faces:right", "--fan", "horizontal:10", "--directions", "9", "--report", "r.csv"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let tau: f64 = text.lines().find_map(|l| l.strip_prefix("tau_hat=")).unwrap().parse().unwrap();
    assert!((tau - 1.98).abs() < 0.01, "{text}");

    phantom(d, 21);
    let out = tatwave(d, &["energy-check", "--phantom", "p.epf", "--medium", "twolens", "--lambda", "full:1", "--out", "e.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(d.join("e.csv")).unwrap();
    assert!(csv.starts_with("level,t,energy,staggered,conservation"));
}
