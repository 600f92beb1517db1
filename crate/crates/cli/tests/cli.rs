use std::path::Path;
use std::process::{Command, Output};

use featclash_core::experiments::SummaryRow;

fn featclash(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featclash"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("FEATCLASH_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str =
    "vocab_size = 400\nbase_size = 300\ntest_per_region = 40\nn_counterexamples = 20\n";

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.toml"), config).unwrap();
    dir
}

#[test]
fn gen_is_byte_identical_and_seed_sensitive() {
    let dir = setup(SMALL);
    ok(&featclash(
        dir.path(),
        &["--out", "a", "gen", "--config", "d.toml"],
    ));
    ok(&featclash(
        dir.path(),
        &["--out", "b", "gen", "--config", "d.toml"],
    ));
    ok(&featclash(
        dir.path(),
        &["--out", "c", "--seed", "7", "gen", "--config", "d.toml"],
    ));
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    for f in [
        "train.jsonl",
        "validation.jsonl",
        "test-both.jsonl",
        "manifest.json",
    ] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "train.jsonl"), read("c", "train.jsonl"));
    let m = |d: &str| -> serde_json::Value {
        serde_json::from_slice(&read(d, "manifest.json")).unwrap()
    };
    assert_ne!(m("a")["config_sha256"], m("c")["config_sha256"]);
    assert_eq!(m("a")["files"].as_array().unwrap().len(), 6);
}

#[test]
fn overwrite_needs_force() {
    let dir = setup(SMALL);
    ok(&featclash(
        dir.path(),
        &["--out", "a", "gen", "--config", "d.toml"],
    ));
    let again = featclash(dir.path(), &["--out", "a", "gen", "--config", "d.toml"]);
    assert_eq!(again.status.code(), Some(2));
    ok(&featclash(
        dir.path(),
        &["--out", "a", "--force", "gen", "--config", "d.toml"],
    ));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = setup("vocab_sise = 10\n");
    let o = featclash(dir.path(), &["gen", "--config", "d.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocab_sise"));

    let dir = setup("strong_features = [\"no-such-feature\"]\n");
    assert_eq!(
        featclash(dir.path(), &["gen", "--config", "d.toml"])
            .status
            .code(),
        Some(2)
    );

    let dir = setup("vocab_size = 4\nbase_size = 10\n");
    assert_eq!(
        featclash(dir.path(), &["gen", "--config", "d.toml"])
            .status
            .code(),
        Some(2)
    );

    let dir = setup("");
    let o = featclash(dir.path(), &["hardness", "--feature", "middle-duplicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_reports_malformed_line() {
    let dir = setup(SMALL);
    ok(&featclash(
        dir.path(),
        &["--out", "a", "gen", "--config", "d.toml"],
    ));
    let text = std::fs::read_to_string(dir.path().join("a/train.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"seq\": [1, 2";
    std::fs::write(dir.path().join("broken.jsonl"), lines.join("\n")).unwrap();
    let o = featclash(dir.path(), &["inspect", "broken.jsonl"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn inspect_audits_pools_from_manifest() {
    let dir = setup(SMALL);
    ok(&featclash(
        dir.path(),
        &["--out", "a", "gen", "--config", "d.toml"],
    ));
    for f in [
        "a/train.jsonl",
        "a/validation.jsonl",
        "a/test-strong-only.jsonl",
    ] {
        let v: serde_json::Value =
            serde_json::from_str(&ok(&featclash(dir.path(), &["inspect", f, "--json"]))).unwrap();
        assert_eq!(v["stats"]["pool_violations"], 0, "{f}");
        assert_eq!(v["stats"]["label_strong_mismatch"], 0, "{f}");
    }
}

#[test]
fn tiny_train_writes_outputs() {
    let dir = setup(&format!(
        "dim = 4\n[train]\nmax_epochs = 2\n[dataset]\n{}",
        SMALL
    ));
    let out = ok(&featclash(
        dir.path(),
        &["--out", "t", "train", "--config", "d.toml"],
    ));
    assert!(out.starts_with("best_epoch"));
    for f in [
        "history.jsonl",
        "checkpoint.bin",
        "report.json",
        "manifest.json",
    ] {
        assert!(dir.path().join("t").join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_resumes_and_aggregates() {
    let spec = "family = \"noise\"\nseeds = [1, 2, 3]\ndim = 4\ntest_per_region = 30\n\
                [grid]\nvocab = [300]\nbase_size = [300]\nn_ce = [20]\nnoise = [0.05]\nstrong = [\"prefix-duplicate\"]\n\
                [train]\nmax_epochs = 2\n";
    let dir = setup(spec);
    ok(&featclash(
        dir.path(),
        &[
            "--out",
            "s",
            "sweep",
            "--config",
            "d.toml",
            "--workers",
            "2",
        ],
    ));
    let resumed = ok(&featclash(
        dir.path(),
        &["--out", "s", "sweep", "--config", "d.toml"],
    ));
    assert!(resumed.contains("0 run, 3 already done"), "{resumed}");

    ok(&featclash(dir.path(), &["--out", "s", "aggregate"]));
    let mut rdr = csv_reader(&dir.path().join("s/summary.csv"));
    let rows: Vec<SummaryRow> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r.n_seeds, 3);
    for (lo, mean, hi) in [
        (r.weak_only_lo, r.weak_only_mean, r.weak_only_hi),
        (r.neither_lo, r.neither_mean, r.neither_hi),
    ] {
        let (lo, mean, hi) = (lo.unwrap(), mean.unwrap(), hi.unwrap());
        assert!(lo <= mean && mean <= hi, "{lo} {mean} {hi}");
    }

    std::fs::write(dir.path().join("d.toml"), spec.replace("0.05", "0.1")).unwrap();
    let clash = featclash(dir.path(), &["--out", "s", "sweep", "--config", "d.toml"]);
    assert_eq!(clash.status.code(), Some(2));
}

fn csv_reader(path: &Path) -> csv::Reader<std::fs::File> {
    csv::Reader::from_path(path).unwrap()
}
