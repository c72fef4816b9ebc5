use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"seed = 5

[generator]
num_sequences = 3
min_frames = 40
max_frames = 45
feature_dim = 12

[train]
max_epochs = 2
hidden_dim = 24
embed_dim = 8

[eval]
queries = 40
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reconcile")).args(args).output().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn gen_train_and_eval_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data, model, out) = (path(dir.path(), "c.toml"), path(dir.path(), "d"), path(dir.path(), "m.mdl"), path(dir.path(), "r"));
    std::fs::write(&cfg, CONFIG).unwrap();
    assert!(cli(&["gen", "--config", &cfg, "--out", &data]).status.success());
    assert!(Path::new(&data).join("manifest.json").exists());
    let trained = cli(&["train-embed", "--config", &cfg, "--data", &data, "--out", &model]);
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));
    let eval = cli(&["eval", "retrieval", "--config", &cfg, "--data", &data, "--model", &model, "--out", &out]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(Path::new(&out).join("retrieval.json")).unwrap()).unwrap();
    assert_eq!(report["metric"], "retrieval");
    let auc = report["values"]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let text = std::fs::read_to_string(Path::new(&out).join("retrieval.txt")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("auc=")));

    let aligned = path(dir.path(), "align.json");
    let bad = cli(&["align", "--data", &data, "--model", &model, "--query", "seq000", "--target", "seq001", "--chunk-len", "1", "--out", &aligned]);
    assert_eq!(bad.status.code(), Some(1));
    let good = cli(&["align", "--data", &data, "--model", &model, "--query", "seq000", "--target", "seq001", "--out", &aligned]);
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stderr));
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(cli(&["no-such-command"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "absent");
    let out = path(dir.path(), "m.mdl");
    assert_eq!(cli(&["train-embed", "--data", &missing, "--out", &out]).status.code(), Some(2));
    let cfg = path(dir.path(), "bad.toml");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(cli(&["gen", "--config", &cfg, "--out", &out]).status.code(), Some(1));
}
