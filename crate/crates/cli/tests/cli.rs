//! End-to-end tests of the `dulqa` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dulqa::io::{load_checkpoint, parse_instance};
use dulqa::ising::generate_sk;

fn dulqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dulqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dulqa(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_round_trips_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    ok(&[
        "generate",
        "--n",
        "12",
        "--count",
        "2",
        "--seed",
        "40",
        "--out-dir",
        d,
    ]);
    let a = fs::read_to_string(dir.path().join("sk_n12_s40.txt")).unwrap();
    assert_eq!(parse_instance(&a).unwrap(), generate_sk(12, 40).unwrap());
    assert_eq!(
        parse_instance(&fs::read_to_string(dir.path().join("sk_n12_s41.txt")).unwrap()).unwrap(),
        generate_sk(12, 41).unwrap()
    );
    ok(&[
        "generate",
        "--n",
        "12",
        "--count",
        "1",
        "--seed",
        "40",
        "--out-dir",
        d,
    ]);
    assert_eq!(
        fs::read_to_string(dir.path().join("sk_n12_s40.txt")).unwrap(),
        a
    );
}

#[test]
fn two_spin_file_has_one_coupling_line() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "generate",
        "--n",
        "2",
        "--seed",
        "3",
        "--out-dir",
        p(dir.path()),
    ]);
    let text = fs::read_to_string(dir.path().join("sk_n2_s3.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "n 2");
    let j: f64 = lines[1].strip_prefix("J 0 1 ").unwrap().parse().unwrap();
    assert_eq!(j, generate_sk(2, 3).unwrap().coupling(0, 1));
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn zero_init_run_is_stationary() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "generate",
        "--n",
        "10",
        "--seed",
        "1",
        "--out-dir",
        p(dir.path()),
    ]);
    let inst = dir.path().join("sk_n10_s1.txt");
    let out = dir.path().join("run.csv");
    ok(&[
        "run",
        "--instance",
        p(&inst),
        "--tau",
        "5",
        "--restarts",
        "1",
        "--seed",
        "9",
        "--eta",
        "0.3",
        "--zero-init",
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("# tool=dulqa "));
    assert!(csv.contains("# master_seed=9\n"));
    assert!(csv.contains("# input.instance=sha256:"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 7 * 4);
    for r in rows.iter().filter(|r| r[0] == "0") {
        let s: f64 = r[2].parse().unwrap();
        let ew: f64 = r[3].parse().unwrap();
        assert!((ew + (1.0 - s)).abs() < 1e-15, "{r:?}");
    }
    assert!(rows.iter().any(|r| r[0] == "mean"));
    assert!(rows
        .iter()
        .filter(|r| r[0] == "sd")
        .all(|r| r[3].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn checkpoint_tau_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "generate",
        "--n",
        "6",
        "--seed",
        "1",
        "--out-dir",
        p(dir.path()),
    ]);
    let ckpt = dir.path().join("ck.txt");
    fs::write(&ckpt, "tau=2\n0,0.1,1\n1,0.1,1\n2,0.1,1\n").unwrap();
    let out = dulqa(&[
        "run",
        "--instance",
        p(&dir.path().join("sk_n6_s1.txt")),
        "--tau",
        "4",
        "--seed",
        "1",
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tau 2") && err.contains("--tau is 4"), "{err}");
}

fn train_config(dir: &Path, name: &str, lr: f64) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.toml"));
    fs::write(
        &path,
        format!(
            "[train]\nn = 8\ntau = 4\nn_epoch = 3\nbatch_size = 2\neta0 = 0.1\ngamma0 = 1.0\n\
             f = 0.5\nouter_lr = {lr}\nstrategy = \"ensemble\"\nmaster_seed = 21\n\n\
             [output]\ncheckpoint = \"{name}.ckpt\"\nloss_log = \"{name}.loss.csv\"\nstate = \"{name}.state\"\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn zero_learning_rate_keeps_initial_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(dir.path(), "lr0", 0.0);
    ok(&["train", "--config", p(&cfg)]);
    let sched = load_checkpoint(&dir.path().join("lr0.ckpt")).unwrap();
    assert!(sched.eta().iter().all(|&e| e == 0.1));
    assert!(sched.gamma().iter().all(|&g| g == 1.0));
    let log = fs::read_to_string(dir.path().join("lr0.loss.csv")).unwrap();
    assert_eq!(data_rows(&log).len(), 4 * 3);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_config(dir.path(), "a", 1e-2);
    let b = train_config(dir.path(), "b", 1e-2);
    ok(&["train", "--config", p(&a)]);
    ok(&["train", "--config", p(&b), "--stop-after", "2"]);
    assert!(!dir.path().join("b.ckpt").exists());
    ok(&["train", "--config", p(&b)]);
    let body = |f: &str| {
        let t = fs::read_to_string(dir.path().join(f)).unwrap();
        t.lines()
            .filter(|l| !l.starts_with("# input.config"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body("a.ckpt"), body("b.ckpt"));
    assert_eq!(body("a.loss.csv"), body("b.loss.csv"));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(dir.path(), "x", 1e-3);
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("n = 8", "n = 8\nepochs = 3");
    fs::write(&cfg, text).unwrap();
    assert_eq!(
        dulqa(&["train", "--config", p(&cfg)]).status.code(),
        Some(2)
    );
}

const BENCH: &str = "kind = \"trajectory\"\nmaster_seed = 5\nsizes = [10]\ntau = 6\nrestarts = 4\n";

#[test]
fn empty_roster_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("b.toml");
    fs::write(&spec, BENCH).unwrap();
    let out = dulqa(&[
        "bench",
        "--spec",
        p(&spec),
        "--out-dir",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("roster is empty"));
}

#[test]
fn manifest_tracks_inputs_and_threads_do_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ck.txt");
    fs::write(
        &ckpt,
        "tau=6\n".to_string()
            + &(0..=6)
                .map(|t| format!("{t},0.2,1.1\n"))
                .collect::<String>(),
    )
    .unwrap();
    let spec = dir.path().join("b.toml");
    let text = format!(
        "{BENCH}tune_budget = 3\ntune_restarts = 2\n\n[[solver]]\nkind = \"dulqa\"\nlabel = \"t\"\ncheckpoint = \"ck.txt\"\n\n\
         [[solver]]\nkind = \"lqa_gd\"\n\n[[solver]]\nkind = \"lqa_adam\"\nstep_size = 0.05\n"
    );
    fs::write(&spec, &text).unwrap();
    let run = |out: &str, threads: &str| {
        let o = dir.path().join(out);
        ok(&[
            "--threads",
            threads,
            "bench",
            "--spec",
            p(&spec),
            "--out-dir",
            p(&o),
        ]);
        (
            fs::read_to_string(o.join("manifest.txt")).unwrap(),
            fs::read_to_string(o.join("trajectory.csv")).unwrap(),
        )
    };
    let (m1, c1) = run("o1", "1");
    let (m2, c2) = run("o2", "3");
    assert_eq!(m1, m2);
    assert_eq!(c1, c2);
    assert!(m1.contains("reference.omega=0.623"));
    assert!(m1.contains("input.checkpoint.t=sha256:"));
    assert!(c1.contains("dulqa_t") && c1.contains("lqa_gd") && c1.contains("lqa_adam"));

    fs::write(
        &ckpt,
        fs::read_to_string(&ckpt)
            .unwrap()
            .replace("3,0.2", "3,0.25"),
    )
    .unwrap();
    let (m3, _) = run("o3", "1");
    assert_ne!(m1, m3);
    fs::write(
        &ckpt,
        fs::read_to_string(&ckpt)
            .unwrap()
            .replace("3,0.25", "3,0.2"),
    )
    .unwrap();
    let (m4, _) = run("o4", "1");
    assert_eq!(m1, m4);
}

#[test]
fn verify_passes() {
    let out = ok(&["verify", "--seed", "1"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        6,
        "{text}"
    );
}
