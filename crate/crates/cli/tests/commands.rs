use std::path::Path;
use std::process::{Command, Output};

fn air_rl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_air-rl")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = air_rl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn help_lists_the_commands() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["collect", "train", "evaluate", "sweep", "reproduce"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn bad_input_fails_with_a_message() {
    let out = air_rl(&["reproduce", "--figure", "nope", "--out", "/tmp/unused-air-rl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown figure"));
    let out = air_rl(&["train", "--algo", "cql", "--data", "x.csv", "--out", "p.json"]);
    assert!(!out.status.success());
}

#[test]
fn collect_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    ok(&["collect", "--env", "order", "--policy", "random", "--episodes", "3", "--seed", "5", "--out", &p("d.csv")]);
    assert!(Path::new(&p("d.meta")).exists());
    std::fs::write(p("fqi.cfg"), "fclass=tabular\n").unwrap();
    ok(&["train", "--algo", "fqi-air", "--data", &p("d.csv"), "--config", &p("fqi.cfg"), "--out", &p("pi.json")]);
    ok(&["evaluate", "--policy", &p("pi.json"), "--data", &p("d.csv"), "--out", &p("offline.csv")]);
    let offline = std::fs::read_to_string(p("offline.csv")).unwrap();
    assert!(offline.starts_with("n,j_hat,bound,zeta,seed"));
    let out = ok(&["evaluate", "--policy", &p("pi.json"), "--env", "order", "--env-seed", "5", "--rollouts", "4"]);
    assert!(!out.stdout.is_empty());
}
