use std::process::Command;

use serde_json::Value;
use sha2::{Digest, Sha256};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_ellipticfund"))
        .args(args)
        .env_remove("ELLIPTICFUND_THREADS")
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn report(args: &[&str]) -> Value {
    let r = run(args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    serde_json::from_str(&r.stdout).unwrap()
}

/// Raw text of the value stored under `key` in a canonical report, which
/// is itself canonical.
fn raw_field<'a>(text: &'a str, key: &str, next_key: &str) -> &'a str {
    let start = text.find(&format!("\"{key}\":")).unwrap() + key.len() + 3;
    let end = text.find(&format!(",\"{next_key}\":")).unwrap();
    &text[start..end]
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[test]
fn pucci_plus_exponent_in_three_dimensions() {
    let v = report(&["exponent", "--op", "pucci+", "--lambda", "1", "--Lambda", "2", "--dim", "3"]);
    let p = &v["payload"];
    assert!((p["alpha_star"].as_f64().unwrap() - 3.0).abs() <= 1e-10);
    assert_eq!(p["method"], "rotinv_root");
    assert_eq!(p["oracle"]["alpha_star"].as_f64().unwrap(), 3.0);
    assert!(p["oracle"]["difference"].as_f64().unwrap().abs() <= 1e-10);
}

#[test]
fn planar_laplacian_on_the_circle_is_the_log_branch() {
    let v = report(&["exponent", "--op", "laplacian", "--dim", "2", "--method", "circle"]);
    let p = &v["payload"];
    assert_eq!(p["branch"], "log");
    assert_eq!(p["method"], "circle_bisection");
    assert!(p["alpha_star"].as_f64().unwrap().abs() <= 1e-3);
}

#[test]
fn identical_runs_give_identical_payload_bytes() {
    for args in [
        &["exponent", "--op", "f2", "--dim", "5"][..],
        &["game", "--op", "pucci+", "--paths", "400", "--seed", "11"][..],
    ] {
        let (a, b) = (run(args), run(args));
        assert_eq!(a.code, 0, "{}", a.stderr);
        assert_eq!(raw_field(&a.stdout, "payload", "payload_hash"), raw_field(&b.stdout, "payload", "payload_hash"));
        assert_eq!(raw_field(&a.stdout, "payload_hash", "versions"), raw_field(&b.stdout, "payload_hash", "versions"));
    }
}

#[test]
fn game_payload_does_not_depend_on_thread_count() {
    let args = ["game", "--op", "laplacian", "--dim", "3", "--paths", "300"];
    let bin = env!("CARGO_BIN_EXE_ellipticfund");
    let with = |threads: &str| {
        let out = Command::new(bin).args(args).env("ELLIPTICFUND_THREADS", threads).output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        raw_field(&text, "payload", "payload_hash").to_string()
    };
    assert_eq!(with("1"), with("4"));
}

#[test]
fn asymmetric_spec_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.json");
    std::fs::write(
        &path,
        r#"{"kind": "linear", "dim": 2, "lambda": 1, "Lambda": 2, "A": [[1.5, 0.1], [0.101, 1.5]]}"#,
    )
    .unwrap();
    let r = run(&["exponent", "--spec-file", path.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    let err: Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert_eq!(err["error"]["code"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("asymmetry"), "{}", r.stderr);
}

#[test]
fn f1_builtin_weights_the_extreme_eigenvalues() {
    let v = report(&["check", "--op", "f1", "--lambda", "1", "--Lambda", "2", "--dim", "4"]);
    assert_eq!(v["operator"]["kind"], "eigen_sym");
    let coeffs: Vec<f64> = v["operator"]["coeffs"].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect();
    assert_eq!(coeffs, vec![2.0, 1.0, 1.0, 2.0]);
    assert_eq!(v["payload"]["h1_h2"]["h1_pass"], true);
    assert_eq!(v["payload"]["sandwich"]["pass"], true);
    assert_eq!(v["warnings"].as_array().unwrap().len(), 0);
}

#[test]
fn csv_outputs_have_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 3] = [
        (&["profile", "--op", "laplacian", "--ntheta", "32"], "theta,phi"),
        (&["annulus", "--op", "laplacian", "--grid-h", "0.03125"], "x,y,u"),
        (&["ladder", "--op", "laplacian", "--dim", "3", "--paths", "500"], "r,p_hat,stderr"),
    ];
    for (k, (args, header)) in cases.into_iter().enumerate() {
        let stdout = run(args);
        assert_eq!(stdout.code, 0, "{}", stdout.stderr);
        assert_eq!(stdout.stdout.lines().next().unwrap(), header);
        assert!(!stdout.stdout.contains('\r'));

        let path = dir.path().join(format!("out{k}.csv"));
        let mut with_out = args.to_vec();
        with_out.extend(["--out", path.to_str().unwrap()]);
        let r = run(&with_out);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let csv = std::fs::read_to_string(&path).unwrap();
        assert_eq!(csv, stdout.stdout);
        let v: Value = serde_json::from_str(&r.stdout).unwrap();
        assert_eq!(v["payload"]["csv_header"], header);
    }
}

#[test]
fn emitted_hashes_match_recomputation() {
    let r = run(&["exponent", "--op", "linear", "--lambda", "1", "--Lambda", "3", "--dim", "3", "--method", "rotinv"]);
    // diag(1, 3, 3) is not rotationally invariant
    assert_eq!(r.code, 2, "{}", r.stderr);

    let r = run(&["check", "--op", "pucci-", "--dim", "3"]);
    assert_eq!(r.code, 0);
    let operator = raw_field(&r.stdout, "operator", "operator_hash");
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["operator_hash"], sha256_hex(operator));
    assert_eq!(v["payload_hash"], sha256_hex(raw_field(&r.stdout, "payload", "payload_hash")));

    // loading the emitted operator reproduces the same hash
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.json");
    std::fs::write(&path, operator).unwrap();
    let again = report(&["check", "--spec-file", path.to_str().unwrap()]);
    assert_eq!(again["operator_hash"], v["operator_hash"]);
}

#[test]
fn game_embeds_the_radial_oracle() {
    let v = report(&["game", "--op", "laplacian", "--dim", "3", "--paths", "4000", "--x0", "0,0.5,0"]);
    let p = &v["payload"];
    assert!((p["oracle"]["p_exact"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let (p_hat, se) = (p["p_hat"].as_f64().unwrap(), p["stderr"].as_f64().unwrap());
    assert!((p_hat - 1.0 / 3.0).abs() <= 3.0 * se);
    assert_eq!(p["config"]["n_paths"], 4000);
}

#[test]
fn error_exit_codes() {
    // unknown builtin, bad flag, spec-file game: invalid configuration
    assert_eq!(run(&["exponent", "--op", "pucci"]).code, 2);
    assert_eq!(run(&["exponent", "--op", "pucci+", "--nonsense"]).code, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.json");
    std::fs::write(&path, r#"{"kind": "pucci+", "dim": 2, "lambda": 1, "Lambda": 2}"#).unwrap();
    assert_eq!(run(&["game", "--spec-file", path.to_str().unwrap(), "--paths", "100"]).code, 2);
    // ladder too deep for the path budget: non-convergence
    let r = run(&["ladder", "--op", "laplacian", "--dim", "3", "--R", "1", "--r", "0.1,0.001,0.00001", "--paths", "100"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    // unwritable output: I/O failure
    let bad = dir.path().join("missing").join("out.json");
    let r = run(&["exponent", "--op", "laplacian", "--out", bad.to_str().unwrap()]);
    assert_eq!(r.code, 1);
    let err: Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn help_and_version_exit_cleanly() {
    let r = run(&["--help"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("exponent"));
    assert_eq!(run(&["--version"]).code, 0);
}
