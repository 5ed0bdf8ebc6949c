use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn clste(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clste")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_cnf_prints_shapes_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = clste(dir.path(), &["gen-cnf", "sudoku9", "--out", "s.cnf"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "m=8991 n=729");
    let text = fs::read_to_string(dir.path().join("s.cnf")).unwrap();
    assert!(text.starts_with("p cnf 729 8991"));
    assert_eq!(fs::read_to_string(dir.path().join("s.cnf.names")).unwrap().lines().count(), 729);

    let o = clste(dir.path(), &["gen-cnf", "member3"]);
    assert_eq!(stdout(&o).trim(), "m=40 n=50");
    assert!(dir.path().join("member3.cnf").exists());
}

#[test]
fn unknown_task_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = clste(dir.path(), &["gen-cnf", "nosuch"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown task"));
    assert!(o.stdout.is_empty());
}

#[test]
fn check_reports_entailment_and_deduce_set() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.cnf"), "p cnf 3 2\n-1 -2 3 0\n-1 2 0\n").unwrap();
    fs::write(dir.path().join("g.cnf.names"), "a\nb\nc\n").unwrap();
    fs::write(dir.path().join("f"), "1\n").unwrap();
    fs::write(dir.path().join("empty"), "").unwrap();

    let o = clste(dir.path(), &["check", "g.cnf", "f"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("SAT\n"));
    assert!(out.contains("entails: 2 (b), 3 (c)"), "{out}");
    assert!(out.contains("deduce-set: clause 2"), "{out}");

    let o = clste(dir.path(), &["check", "g.cnf", "empty"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("deduce-set: none"));
}

#[test]
fn check_flags_unsat_and_cap() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("u.cnf"), "p cnf 1 2\n1 0\n-1 0\n").unwrap();
    let o = clste(dir.path(), &["check", "u.cnf"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "UNSAT");
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));

    fs::write(dir.path().join("big.cnf"), "p cnf 30 1\n1 0\n").unwrap();
    let o = clste(dir.path(), &["check", "big.cnf"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--cap"));

    let o = clste(dir.path(), &["check", "missing.cnf"]);
    assert!(!o.status.success());
}

#[test]
fn grad_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = clste(dir.path(), &["grad-verify", "--trials", "100", "--seed", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("golden: OK (max dev 0.0e0)"));
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().all(|l| l.contains(": OK")));
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["train", "mnist-add", "--synthetic", "--epochs", "5", "--seed", "1", "--train-size", "200", "--test-size", "100", "--out", out]
    };
    let a = clste(dir.path(), &args("a"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = clste(dir.path(), &args("b"));
    assert!(b.status.success());
    let ca = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let cb = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,loss_total,loss_base,loss_cnf,loss_bound,loss_sum,loss_hint,acc_test"));
    assert_eq!(lines.count(), 5);
    assert!(dir.path().join("a/checkpoint.json").exists());

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/run.json")).unwrap()).unwrap();
    assert_eq!(run["task"], "mnistadd");
    assert_eq!(run["train"]["weights"]["beta"], 0.1);
    assert_eq!(run["train"]["binarizer"], "Prob");
}

#[test]
fn config_file_sits_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "# small run\nepochs = 2\nlr = 0.01\nbeta = 0.3\nfn = b\n").unwrap();
    let o = clste(
        dir.path(),
        &["train", "mnistadd", "--config", "run.cfg", "--lr", "0.002", "--train-size", "50", "--test-size", "20", "--out", "c"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("c/run.json")).unwrap()).unwrap();
    assert_eq!(run["train"]["epochs"], 2);
    assert_eq!(run["train"]["lr"], 0.002);
    assert_eq!(run["train"]["weights"]["beta"], 0.3);
    assert_eq!(run["train"]["binarizer"], "Sign");

    fs::write(dir.path().join("bad.cfg"), "nosuch = 1\n").unwrap();
    let o = clste(dir.path(), &["train", "mnistadd", "--config", "bad.cfg"]);
    assert!(!o.status.success());
}

#[test]
fn sudoku_train_eval_solve() {
    let dir = tempfile::tempdir().unwrap();
    let o = clste(
        dir.path(),
        &["train", "sudoku4", "--unsupervised", "--epochs", "1", "--train-size", "100", "--test-size", "20", "--out", "s"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s/run.json")).unwrap()).unwrap();
    assert_eq!(run["train"]["weights"]["alpha"], 1.0);
    assert_eq!(run["train"]["weights"]["beta"], 0.1);
    assert_eq!(run["data"]["unsupervised"], true);

    let o = clste(dir.path(), &["eval", "--checkpoint", "s/checkpoint.json"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("acc_wo=") && out.contains("acc_w="), "{out}");

    let o = clste(dir.path(), &["solve", "--checkpoint", "s/checkpoint.json", "--inference-trick", "1234341221434321"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "1234341221434321 valid");

    let o = clste(dir.path(), &["solve", "--checkpoint", "s/checkpoint.json", "1.3...1.2.4....1"]);
    assert!(o.status.success());
    let line = stdout(&o);
    let board = line.split_whitespace().next().unwrap();
    assert_eq!(board.len(), 16);
    assert_eq!(&board[..1], "1");

    let o = clste(dir.path(), &["solve", "--checkpoint", "s/checkpoint.json", "1134341221434321"]);
    assert!(!o.status.success());
}
