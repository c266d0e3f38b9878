use std::process::Command;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_steinformer")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"no_such_key": 1}}"#).unwrap();
    assert_eq!(run(&["count-params", "--config", cfg.to_str().unwrap()]).0, 2);
    assert_eq!(run(&["count-params", "--set", "model.heads=0"]).0, 2);
    let out = dir.path().join("s");
    assert_eq!(run(&["synth", "--out", out.to_str().unwrap(), "--size", "48"]).0, 2);
    let missing = dir.path().join("missing");
    assert_eq!(run(&["train", "--train-dir", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 3);
    assert_eq!(run(&["eval", "--weights", missing.join("w.stein").to_str().unwrap()]).0, 1);
}

#[test]
fn synth_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let (code, _) = run(&["synth", "--out", data.to_str().unwrap(), "--count", "2", "--size", "32", "--seed", "3"]);
    assert_eq!(code, 0);
    for sub in ["A", "B", "label"] {
        assert_eq!(std::fs::read_dir(data.join(sub)).unwrap().count(), 2);
    }
    let (code, out) = run(&["count-params", "--seed", "3"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["params"].as_u64().unwrap() > 0);
    let (code, out) = run(&["dct-check", "--sizes", "3,5"]);
    assert_eq!(code, 0);
    assert!(out.contains("gram_error"));
}
