use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
schema_version = 1
target_domain = "target60"
seeds = [0, 1]

[protocol]
rounds = 2
epochs_source = 1
epochs_finetune = 1
epochs_idd = 1

[hyper]
total_epochs = 6
eta0 = 0.05
batch_size = 32

[architecture]
generator = [8]

[[domains]]
name = "rot0"
rotation_deg = 0.0
n_train = 60
n_test = 60

[[domains]]
name = "rot20"
rotation_deg = 20.0
n_train = 60
n_test = 60

[[domains]]
name = "target60"
rotation_deg = 60.0
n_train = 60
n_test = 60
"#;

fn fact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fact"))
        .args(args)
        .env("FACT_WORKERS", "1")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = fact(&[
        "run",
        &cfg,
        "--seed",
        "3",
        "--repeats",
        "2",
        "--variant",
        "fact-nf",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let results = out.join("results.csv");
    assert_eq!(data_rows(&results), 2);
    let csv = std::fs::read_to_string(&results).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",fact-nf,")), "{csv}");
    assert!(out.join("summary.csv").exists() && out.join("accuracy.svg").exists());

    let again = dir.path().join("again");
    let o = fact(&["report", results.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(std::fs::read(again.join("results.csv")).unwrap(), std::fs::read(&results).unwrap());
    assert!(again.join("traces").read_dir().unwrap().count() == 2);
}

#[test]
fn sweep_rounds_with_explicit_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("sw");
    let o = fact(&[
        "sweep",
        &cfg,
        "--axis",
        "rounds",
        "--values",
        "2,3",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(data_rows(&out.join("results.csv")), 2);
    assert!(out.join("accuracy_rounds.svg").exists());
}

#[test]
fn failures_exit_nonzero_with_a_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &format!("{TINY}\nbogus_key = 1\n"));
    let o = fact(&["run", &bad]);
    assert!(!o.status.success());
    assert!(text(&o).contains("[config]"), "{}", text(&o));

    let o = fact(&[
        "report",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(text(&o).contains("[load]"), "{}", text(&o));

    let cfg = write_config(dir.path(), TINY);
    let o = fact(&["sweep", &cfg, "--axis", "sideways"]);
    assert!(!o.status.success());
    assert!(text(&o).contains("[config]") || text(&o).contains("[sweep]"), "{}", text(&o));
}
