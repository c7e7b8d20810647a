use std::path::Path;
use std::process::{Command, Output};

fn dhge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhge")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn json_lines(o: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const SPEC: &str = "kind = \"drift-stream\"\ncommunities = 2\nusers = 40\nitems = 20\np_in = 0.3\np_out = 0.02\nfeature_dim = 3\nbatches = 2\nnew_users_per_batch = 3\ndrifting_users_per_batch = 2\n";

const CONFIG: &str = "rng_seed = 1\nstatic_refresh_every = 2\n\
    [paths]\nedges = \"edges.tsv\"\nfeatures = \"features.tsv\"\nschema = \"schema.tsv\"\ntest = \"test.tsv\"\n\
    increments = [\"increment_0.tsv\", \"increment_1.tsv\"]\nsnapshot_dir = \"snap\"\n\
    [model]\nhidden_dim = 8\nbatch_size = 32\n[train]\nepochs = 2\n[eval]\nnegatives_per_user = 5\n";

fn fixture() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("spec.toml"), SPEC).unwrap();
    let o = dhge(d.path(), &["gen-fixture", "--kind", "drift-stream", "--out", ".", "--spec", "spec.toml", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_lines(&o)[0]["event"], "fixture");
    assert!(d.path().join("dhge.toml").exists());
    std::fs::write(d.path().join("small.toml"), CONFIG).unwrap();
    d
}

#[test]
fn train_evaluate_retrieve() {
    let d = fixture();
    let p = d.path();
    let o = dhge(p, &["train", "--config", "small.toml"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = json_lines(&o);
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["manifest"]["version"], 1);

    let o = dhge(p, &["evaluate", "--config", "small.toml", "--ranks", "ranks.csv"]);
    assert!(o.status.success());
    let rep = &json_lines(&o)[0]["report"];
    assert_eq!(rep["n_users"], 40);
    assert!(p.join("ranks.csv").exists());

    let a = dhge(p, &["retrieve", "--config", "small.toml", "--user", "0:4", "--k", "50"]);
    let b = dhge(p, &["retrieve", "--config", "small.toml", "--user", "0:4", "--k", "50", "--version", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 20);
    assert!(text.lines().all(|l| l.split('\t').count() == 3 && l.starts_with("1\t")));
}

#[test]
fn update_then_stream() {
    let d = fixture();
    let p = d.path();
    assert!(dhge(p, &["train", "--config", "small.toml"]).status.success());
    let o = dhge(p, &["update", "--config", "small.toml", "--edges", "increment_0.tsv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let up = &json_lines(&o)[0];
    assert_eq!(up["report"]["n_new_nodes"], 3);
    assert_eq!(up["manifest"]["parent"], 1);

    let o = dhge(p, &["simulate-stream", "--config", "small.toml", "--snapshot-dir", "stream", "--test", "test.tsv", "--test", "test_0.tsv", "--test", "test_1.tsv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = json_lines(&o);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[2]["step"]["retrained"], true);
    assert_eq!(lines[3]["event"], "freshness");
    assert!(p.join("stream").is_dir());
}

#[test]
fn exit_codes() {
    let d = fixture();
    let p = d.path();
    let o = dhge(p, &["evaluate", "--config", "small.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
    assert!(o.stdout.is_empty());

    std::fs::write(p.join("bad.toml"), "[paths]\nsnapshot_dir = \"s\"\nbogus = 1\n").unwrap();
    assert_eq!(dhge(p, &["train", "--config", "bad.toml"]).status.code(), Some(2));
    assert_eq!(dhge(p, &["train"]).status.code(), Some(2));

    std::fs::write(p.join("broken.tsv"), "0\t1\tnot-a-number\n").unwrap();
    let mut cfg = CONFIG.replace("edges.tsv", "broken.tsv");
    cfg = cfg.replace("\"snap\"", "\"snap2\"");
    std::fs::write(p.join("broken.toml"), cfg).unwrap();
    assert_eq!(dhge(p, &["train", "--config", "broken.toml"]).status.code(), Some(3));
}

#[test]
fn seed_flag_changes_digest() {
    let d = fixture();
    let p = d.path();
    let a = json_lines(&dhge(p, &["train", "--config", "small.toml", "--snapshot-dir", "a"]));
    let b = json_lines(&dhge(p, &["train", "--config", "small.toml", "--snapshot-dir", "b", "--seed", "9"]));
    let c = json_lines(&dhge(p, &["train", "--config", "small.toml", "--snapshot-dir", "c"]));
    assert_eq!(a[2]["manifest"]["model_sha256"], c[2]["manifest"]["model_sha256"]);
    assert_ne!(a[2]["manifest"]["config_digest"], b[2]["manifest"]["config_digest"]);
}
