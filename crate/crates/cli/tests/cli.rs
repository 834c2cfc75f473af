use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;

use dnls::export::parse_csv;

fn dnls(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dnls"))
        .args(args)
        .env("DNLS_LOG", "off")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SINGLE_MODE: &str = r#"
[physics]
gamma = 0.5
[grid]
M = 64
[scheme]
dt = 1e-3
horizon = 2
store_every = 250
[initial]
modes = [[3, 1.0]]
"#;

#[test]
fn single_mode_final_norm_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SINGLE_MODE);
    let out = dir.path().join("out");
    let (code, _, err) = dnls(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let (header, rows) = parse_csv(&std::fs::read_to_string(out.join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(header[..2], ["t", "l2_sq"]);
    assert_eq!(rows.len(), 9);
    let last = rows.last().unwrap();
    let exact = 2.0 * PI * (-2.0 * 0.5 * last[0]).exp();
    assert!((last[1] - exact).abs() <= 1e-8, "{} vs {exact}", last[1]);
    for name in ["trajectory.json", "checkpoint.bin", "config.toml", "summary.json", "run_meta.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn invalid_config_exits_with_config_code_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &SINGLE_MODE.replace("M = 64", "M = 64\nN = 32\nbogus = 1"));
    let out = dir.path().join("out");
    let (code, _, err) = dnls(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 2);
    let summary: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(summary["status"], "config_error");
    assert_eq!(summary["errors"].as_array().unwrap().len(), 2);
    assert!(!out.exists());
}

#[test]
fn replay_is_byte_identical_except_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let text = SINGLE_MODE.replace("[[3, 1.0]]", "[[3, 1.0], [-1, 0.3, 0.2]]") + "[diagnostics]\nprobes = true\ntail_cutoffs = [4]\n";
    let cfg = write(dir.path(), "c.toml", &text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(dnls(&["simulate", "--config", s(&cfg), "--out", s(&a), "--seed", "5"]).0, 0);
    assert_eq!(dnls(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "5"]).0, 0);
    for name in ["trajectory.csv", "trajectory.json", "checkpoint.bin", "config.toml", "summary.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    // The snapshot alone reproduces the run.
    let c = dir.path().join("c");
    assert_eq!(dnls(&["simulate", "--config", s(&a.join("config.toml")), "--out", s(&c)]).0, 0);
    assert_eq!(std::fs::read(a.join("trajectory.csv")).unwrap(), std::fs::read(c.join("trajectory.csv")).unwrap());
}

const FORCED: &str = r#"
seed = 3
[physics]
gamma = 0.3
forcing_profile = { amplitude = 0.2, exponent = 0.6, kmax = 10 }
[grid]
M = 64
[scheme]
dt = 1e-3
horizon = 1
store_every = 100
[initial]
random = { norm = 2.0, band = 8 }
[diagnostics]
probes = true
"#;

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let long = write(dir.path(), "long.toml", FORCED);
    let short = write(dir.path(), "short.toml", &FORCED.replace("horizon = 1", "horizon = 0.5"));
    let (full, half, rest) = (dir.path().join("full"), dir.path().join("half"), dir.path().join("rest"));
    assert_eq!(dnls(&["simulate", "--config", s(&long), "--out", s(&full)]).0, 0);
    assert_eq!(dnls(&["simulate", "--config", s(&short), "--out", s(&half)]).0, 0);
    let (code, _, err) = dnls(&[
        "simulate", "--config", s(&long), "--out", s(&rest), "--resume", s(&half.join("checkpoint.bin")),
    ]);
    assert_eq!(code, 0, "{err}");
    let read = |p: &Path| parse_csv(&std::fs::read_to_string(p.join("trajectory.csv")).unwrap()).unwrap().1;
    let (full_rows, half_rows, rest_rows) = (read(&full), read(&half), read(&rest));
    let joined: Vec<Vec<f64>> = half_rows.into_iter().chain(rest_rows).collect();
    assert_eq!(joined.len(), full_rows.len());
    for (a, b) in joined.iter().zip(&full_rows) {
        let (a, b): (Vec<u64>, Vec<u64>) = (a.iter().map(|x| x.to_bits()).collect(), b.iter().map(|x| x.to_bits()).collect());
        assert_eq!(a, b);
    }
    assert_eq!(std::fs::read(full.join("checkpoint.bin")).unwrap(), std::fs::read(rest.join("checkpoint.bin")).unwrap());
}

#[test]
fn periodic_checkpoints_do_not_change_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let plain = write(dir.path(), "p.toml", FORCED);
    let chunked = write(dir.path(), "c.toml", &FORCED.replace("store_every = 100", "store_every = 100\ncheckpoint_every = 300"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(dnls(&["simulate", "--config", s(&plain), "--out", s(&a)]).0, 0);
    assert_eq!(dnls(&["simulate", "--config", s(&chunked), "--out", s(&b)]).0, 0);
    assert_eq!(std::fs::read(a.join("trajectory.csv")).unwrap(), std::fs::read(b.join("trajectory.csv")).unwrap());
}

#[test]
fn resume_refuses_foreign_or_damaged_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", FORCED);
    let first = dir.path().join("first");
    assert_eq!(dnls(&["simulate", "--config", s(&cfg), "--out", s(&first)]).0, 0);
    let ck = first.join("checkpoint.bin");

    let other = write(dir.path(), "o.toml", &FORCED.replace("gamma = 0.3", "gamma = 0.4"));
    let (code, _, err) = dnls(&["simulate", "--config", s(&other), "--out", s(&dir.path().join("x")), "--resume", s(&ck)]);
    assert_eq!(code, 4);
    assert!(err.contains("different configuration"), "{err}");

    let bytes = std::fs::read(&ck).unwrap();
    let cut = write(dir.path(), "cut.bin", "");
    std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let (code, _, err) = dnls(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("y")), "--resume", s(&cut)]);
    assert_eq!(code, 4);
    assert!(err.contains("checksum"), "{err}");
}

#[test]
fn weak_limit_experiment_reports_the_gap_law() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[grid]\nM = 128\n[experiment]\nn_list = [8, 16, 32]\nparams = { sample_factors = [0.5, 1.0] }\n",
    );
    let out = dir.path().join("out");
    let (code, _, err) = dnls(&["experiment", "weak_limit", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let gap = report["checks"].as_array().unwrap().iter().find(|c| c["claim"] == "gap-law").unwrap();
    assert_eq!(gap["status"], "pass");
    assert_eq!(report["config"]["m"], 128);
}

#[test]
fn experiment_params_typos_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[experiment]\nparams = { membrs = 3 }\n");
    let (code, _, err) = dnls(&["experiment", "absorbing_ball", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("membrs"));
    assert_eq!(dnls(&["experiment", "nonsense", "--out", s(&dir.path().join("o"))]).0, 2);
}

#[test]
fn blow_up_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // Far too large a step for a large focusing datum under an explicit scheme.
    let cfg = write(
        dir.path(),
        "c.toml",
        "[physics]\ngamma = 0.1\n[grid]\nM = 32\n[scheme]\nmethod = \"etd_rk2\"\ndt = 0.5\nhorizon = 200\n[initial]\nrandom = { norm = 200.0, band = 10 }\n",
    );
    let (code, _, err) = dnls(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("blow_up"));
}

#[test]
fn resonance_sweep_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[bourgain]\nresonance = { trials = 2000, kmax = 500 }\n");
    let out = dir.path().join("o");
    let (code, stdout, err) = dnls(&["bourgain", "resonance", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("\"pass\""));
    assert!(out.join("report.json").exists());
}
