use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 12] = [
    "generate",
    "ingest",
    "vocab",
    "index",
    "graph",
    "cluster",
    "seeds-sweep",
    "compact",
    "tags",
    "recognize",
    "evaluate",
    "end-to-end",
];

const TINY: &str = r#"
[data]
generator_seed = 3

[data.generator]
queries_per_object = 2
query_duplicates = 1

[[data.generator.groups]]
archetype = "flat-small"
count = 3
views = 8

[[data.generator.groups]]
archetype = "solid3d"
count = 1
views = 12

[vocab]
k = 200
sample_size = 5000
max_iterations = 5

[clustering]
seeds = 40

[sweep]
seed_counts = [5, 20, 40]

[tradeoff]
thresholds = [15]
methods = ["dominating-set"]
"#;

fn lmrec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmrec"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
}

#[test]
fn help_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let top = lmrec(&["--help"], dir.path());
    assert!(top.status.success());
    for sub in SUBCOMMANDS {
        let out = lmrec(&[sub, "--help"], dir.path());
        assert!(out.status.success(), "{sub} --help failed");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn recognize_before_index_names_the_index_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let args = ["--config", "tiny.toml", "--out", "run"];
    assert!(lmrec(&[&args[..], &["generate"]].concat(), dir.path()).status.success());
    let out = lmrec(&[&args[..], &["recognize"]].concat(), dir.path());
    assert_eq!(out.status.code(), Some(5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("`index`"), "{stderr}");
}

#[test]
fn unknown_config_keys_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[vocab]\nkk = 3\n").unwrap();
    let out = lmrec(&["--config", "bad.toml", "vocab"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn end_to_end_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    for run in ["a", "b"] {
        let out = lmrec(&["--config", "tiny.toml", "--out", run, "end-to-end"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["report.json", "manifest.json", "clusters.jsonl", "graph.jsonl", "tradeoff.csv", "tags.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn stages_chain_through_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let base = ["--config", "tiny.toml", "--out", "run", "--rng-seed", "11"];
    for stage in [&["generate"][..], &["vocab"], &["index"], &["graph"], &["cluster"], &["tags"]] {
        let out = lmrec(&[&base[..], stage].concat(), dir.path());
        assert!(out.status.success(), "{stage:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = lmrec(&[&base[..], &["compact", "--method", "kvq", "--threshold", "20"]].concat(), dir.path());
    assert!(out.status.success());
    let out = lmrec(&[&base[..], &["recognize", "--method", "center", "--top-k", "1"]].concat(), dir.path());
    assert!(out.status.success());
    let out = lmrec(&[&base[..], &["evaluate", "--method", "overlap"]].concat(), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    for name in ["vocab.bin", "index.bin", "graph.jsonl", "clusters.jsonl", "kept.jsonl", "tags.csv", "report.json"] {
        assert!(manifest["artifacts"][name]["sha256"].is_string(), "{name} missing from manifest");
    }
    // A different config makes existing artifacts stale, which is a warning only.
    let out = Command::new(env!("CARGO_BIN_EXE_lmrec"))
        .args(["--config", "tiny.toml", "--out", "run", "--rng-seed", "12", "tags"])
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("under config"));
}
