//! End-to-end acceptance suite on the desk profile.
//!
//! Prints one `PASS`/`FAIL` line per criterion. Set `FEATCLASH_ACCEPT_DIR` to
//! keep (and resume) the work directory, and `FEATCLASH_STRICT=1` to turn any
//! failing criterion into a nonzero exit status.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use featclash_core::experiments::{aggregate, read_results, ResultRow, SummaryRow};
use featclash_core::metrics::{bootstrap_ci, lower_quantile, Region};
use featclash_core::neural::gradcheck::{check_coords, sample_coords};
use featclash_core::neural::{ModelConfig, ModelParams, ParamGroup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

struct Suite {
    dir: PathBuf,
    outcomes: Vec<Outcome>,
}

impl Suite {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!(
            "{} criterion {id}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        self.outcomes.push(Outcome { id, pass, detail });
    }

    fn run(&mut self, id: usize, f: impl FnOnce(&Path) -> Result<(bool, String), String>) {
        let start = Instant::now();
        match f(&self.dir) {
            Ok((pass, detail)) => self.record(
                id,
                pass,
                format!("{detail} [{:.0}s]", start.elapsed().as_secs_f64()),
            ),
            Err(e) => self.record(id, false, format!("error: {e}")),
        }
    }
}

fn featclash(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_featclash"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("FEATCLASH_OUT")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "featclash {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), String> {
    std::fs::write(dir.join(name), text).map_err(|e| e.to_string())
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

/// Runs (or resumes) a sweep in `<dir>/<name>` and returns its per-cell summary.
fn sweep(dir: &Path, name: &str, spec: &str) -> Result<Vec<SummaryRow>, String> {
    let cfg = format!("{name}.toml");
    write(dir, &cfg, spec)?;
    featclash(dir, &["--out", name, "sweep", "--config", &cfg])?;
    let rows = read_results(&dir.join(name).join("results.csv")).map_err(|e| e.to_string())?;
    let failed: Vec<&ResultRow> = rows.iter().filter(|r| !r.is_ok()).collect();
    if let Some(r) = failed.first() {
        return Err(format!("{} failed jobs, first: {}", failed.len(), r.status));
    }
    Ok(aggregate(&rows))
}

fn cell<'a>(
    rows: &'a [SummaryRow],
    pred: impl Fn(&SummaryRow) -> bool,
) -> Result<&'a SummaryRow, String> {
    rows.iter()
        .find(|r| pred(r))
        .ok_or_else(|| "missing cell".to_string())
}

fn mean(r: &SummaryRow, region: Region) -> f64 {
    r.mean(region).unwrap_or(f64::NAN)
}

fn gradient_check(_: &Path) -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for _ in 0..5 {
        let vocab = rng.random_range(4..12);
        let config = ModelConfig {
            vocab_size: vocab,
            embed_dim: rng.random_range(3..=8),
            hidden_dim: rng.random_range(3..=8),
            mlp_hidden: rng.random_range(3..=8),
            seq_len: rng.random_range(2..=6),
        };
        let mut params = ModelParams::<f64>::init(config, &mut rng);
        for g in [
            ParamGroup::LstmBias,
            ParamGroup::MlpBias,
            ParamGroup::OutBias,
        ] {
            for v in params.group_mut(g) {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let batch: Vec<Vec<u32>> = (0..rng.random_range(2..6))
            .map(|_| {
                (0..config.seq_len)
                    .map(|_| rng.random_range(0..vocab as u32))
                    .collect()
            })
            .collect();
        let labels: Vec<u8> = batch.iter().map(|_| rng.random_range(0..2)).collect();
        let idx = sample_coords(&params, &batch, 20, &mut rng);
        for c in check_coords(&params, &batch, &labels, &idx, 1e-4).map_err(|e| e.to_string())? {
            worst = worst.max(c.relative_error(1e-7));
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        checked >= 200 && worst <= 1e-4 && secs < 60.0,
        format!("{checked} coordinates, max relative error {worst:.2e}, {secs:.1}s"),
    ))
}

fn hardness_grouping(dir: &Path) -> Result<(bool, String), String> {
    let out = dir.join("hardness");
    let path = out.join("hardness.json");
    let start = Instant::now();
    if !path.exists() {
        featclash(dir, &["--out", "hardness", "hardness", "--feature", "all"])?;
    }
    let secs = start.elapsed().as_secs_f64();
    let v = read_json(&path)?;
    let auc: BTreeMap<String, f64> = v["results"]
        .as_array()
        .ok_or("no results")?
        .iter()
        .map(|r| {
            (
                r["feature"].as_str().unwrap_or_default().to_string(),
                r["error_auc"].as_f64().unwrap_or(f64::NAN),
            )
        })
        .collect();
    let get = |k: &str| auc.get(k).copied().ok_or(format!("no AUC for {k}"));
    let (c1, pd, fld) = (
        get("contains-1")?,
        get("prefix-duplicate")?,
        get("first-last-duplicate")?,
    );
    let (adj, cf) = (get("adjacent-duplicate")?, get("contains-first")?);
    let easy = c1.max(pd).max(fld);
    let c1_min = [pd, fld, adj, cf].iter().all(|&x| c1 <= x);
    let reused = if secs < 1.0 { " (reused)" } else { "" };
    Ok((
        adj >= 2.0 * easy && cf >= 2.0 * easy && c1_min && secs < 1800.0,
        format!(
            "AUC c1 {c1:.3} prefix {pd:.3} fld {fld:.3} adj {adj:.3} cf {cf:.3}; threshold 2x{easy:.3}={:.3}; {secs:.0}s{reused}",
            2.0 * easy
        ),
    ))
}

const HARDNESS_SWEEP: &str = "family = \"hardness\"\n";

fn easy_collapse(dir: &Path) -> Result<(bool, String), String> {
    let rows = sweep(dir, "hardness-sweep", HARDNESS_SWEEP)?;
    let r = cell(&rows, |r| r.strong_feature == "contains-1" && r.n_ce == 10)?;
    let (wo, so) = (mean(r, Region::WeakOnly), mean(r, Region::StrongOnly));
    Ok((
        wo <= 0.05 && so <= 0.05,
        format!("contains-1 @10 CEs: weak-only {wo:.4}, strong-only {so:.4} (need <= 0.05)"),
    ))
}

fn hard_resistance(dir: &Path) -> Result<(bool, String), String> {
    let rows = sweep(dir, "hardness-sweep", HARDNESS_SWEEP)?;
    let few = mean(
        cell(&rows, |r| {
            r.strong_feature == "contains-first" && r.n_ce == 10
        })?,
        Region::StrongOnly,
    );
    let many = mean(
        cell(&rows, |r| {
            r.strong_feature == "contains-first" && r.n_ce == 25_000
        })?,
        Region::StrongOnly,
    );
    Ok((
        few >= 0.5 && many <= 0.15,
        format!("contains-first strong-only: {few:.4} @10 CEs (need >= 0.5), {many:.4} @25000 CEs (need <= 0.15)"),
    ))
}

fn ce_type_asymmetry(dir: &Path) -> Result<(bool, String), String> {
    let spec = "family = \"ce-type\"\n[grid]\nstrong = [\"adjacent-duplicate\"]\nce_mix = [\"weak-only\"]\nn_ce = [2000]\n";
    let rows = sweep(dir, "ce-type", spec)?;
    let r = cell(&rows, |_| true)?;
    let (wo, so) = (mean(r, Region::WeakOnly), mean(r, Region::StrongOnly));
    Ok((
        wo <= 0.10 && so >= 0.5,
        format!("adjacent-duplicate + 2000 weak-only CEs: weak-only {wo:.4} (need <= 0.10), strong-only {so:.4} (need >= 0.5)"),
    ))
}

fn both_neither(dir: &Path) -> Result<(bool, String), String> {
    let rows = sweep(dir, "hardness-sweep", HARDNESS_SWEEP)?;
    let mut worst = (0.0f64, String::new());
    for r in &rows {
        for region in [Region::Both, Region::Neither] {
            let e = mean(r, region);
            if !(e <= worst.0) {
                worst = (
                    e,
                    format!("{} @{} CEs {}", r.strong_feature, r.n_ce, region.name()),
                );
            }
        }
    }
    Ok((
        worst.0 <= 0.02,
        format!(
            "{} cells, max both/neither error {:.4} at {}",
            rows.len(),
            worst.0,
            worst.1
        ),
    ))
}

fn control(dir: &Path) -> Result<(bool, String), String> {
    let rows = sweep(
        dir,
        "control",
        "family = \"control\"\n[grid]\nn_extra = [0, 25000]\n",
    )?;
    let none = cell(&rows, |r| r.n_extra == 0)?;
    let extra = cell(&rows, |r| r.n_extra == 25_000)?;
    let dw = (mean(extra, Region::WeakOnly) - mean(none, Region::WeakOnly)).abs();
    let ds = (mean(extra, Region::StrongOnly) - mean(none, Region::StrongOnly)).abs();
    Ok((dw <= 0.05 && ds <= 0.05, format!("first-last-duplicate +25000 defaults: |dweak-only| {dw:.4}, |dstrong-only| {ds:.4} (need <= 0.05)")))
}

fn multi_weak(dir: &Path) -> Result<(bool, String), String> {
    let rows = sweep(dir, "multi-weak", "family = \"multi-weak\"\n")?;
    let arm = |k: usize, purity: &str| -> Result<f64, String> {
        Ok(mean(
            cell(&rows, |r| r.k == k && r.purity.to_string() == purity)?,
            Region::StrongOnly,
        ))
    };
    let (k1, k2, k3) = (
        arm(1, "remove-at-most-one")?,
        arm(2, "remove-at-most-one")?,
        arm(3, "remove-at-most-one")?,
    );
    let pure = arm(3, "pure")?;
    Ok((
        k1 <= k2 && k2 <= k3 && (pure - k1).abs() <= 0.05,
        format!("strong-only k=1 {k1:.4}, k=2 {k2:.4}, k=3 {k3:.4}; pure k=3 {pure:.4} (|diff to k=1| {:.4})", (pure - k1).abs()),
    ))
}

fn generator_stats(dir: &Path) -> Result<(bool, String), String> {
    write(dir, "gen-k3.toml", "weak_symbols = [2, 3, 4]\n")?;
    featclash(
        dir,
        &[
            "--out",
            "gen-k3",
            "--force",
            "gen",
            "--config",
            "gen-k3.toml",
        ],
    )?;
    write(
        dir,
        "gen-ce.toml",
        "weak_symbols = [2, 3, 4]\nn_counterexamples = 2500\nce_mix = \"weak-only\"\n",
    )?;
    featclash(
        dir,
        &[
            "--out",
            "gen-ce",
            "--force",
            "gen",
            "--config",
            "gen-ce.toml",
        ],
    )?;
    let inspect = |f: &str| -> Result<serde_json::Value, String> {
        serde_json::from_str(&featclash(dir, &["inspect", f, "--json"])?).map_err(|e| e.to_string())
    };
    let base = inspect("gen-k3/train.jsonl")?;
    let rates: Vec<f64> = base["stats"]["weak_rate_given_strong"]
        .as_array()
        .ok_or("no weak rates")?
        .iter()
        .filter_map(|v| v.as_f64())
        .collect();
    let rates_ok = rates.len() == 3 && rates.iter().all(|r| (r - 4.0 / 7.0).abs() <= 0.02);
    let ce = inspect("gen-ce/train.jsonl")?;
    let group = &ce["by_provenance"]["weak-only-ce"];
    let ce_strong = group["strong_rate"].as_f64().unwrap_or(f64::NAN);
    let ce_n = group["n"].as_u64().unwrap_or(0);
    let mut violations = 0;
    for f in [
        "gen-k3/train.jsonl",
        "gen-k3/validation.jsonl",
        "gen-ce/train.jsonl",
        "gen-ce/validation.jsonl",
    ] {
        let v = if f == "gen-k3/train.jsonl" {
            base.clone()
        } else if f == "gen-ce/train.jsonl" {
            ce.clone()
        } else {
            inspect(f)?
        };
        violations += v["stats"]["pool_violations"]
            .as_u64()
            .ok_or(format!("{f}: no pool audit"))?;
    }
    Ok((
        rates_ok && ce_n > 0 && ce_strong == 0.0 && violations == 0,
        format!(
            "weak presence among positives {:?} (need 4/7 +- 0.02); weak-only CE strong rate {ce_strong} over {ce_n}; pool violations {violations}",
            rates.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()
        ),
    ))
}

fn determinism(dir: &Path) -> Result<(bool, String), String> {
    let spec =
        "family = \"hardness\"\nseeds = [42]\n[grid]\nstrong = [\"contains-1\"]\nn_ce = [10]\n";
    write(dir, "det.toml", spec)?;
    write(
        dir,
        "det-data.toml",
        "strong_features = [\"contains-1\"]\nn_counterexamples = 10\n",
    )?;
    let mut csv_rows = Vec::new();
    let mut bytes = Vec::new();
    for run in ["det-a", "det-b"] {
        let data = format!("{run}-data");
        featclash(
            dir,
            &[
                "--out",
                &data,
                "--force",
                "--seed",
                "42",
                "gen",
                "--config",
                "det-data.toml",
            ],
        )?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir.join(&data))
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        files.sort();
        bytes.push(
            files
                .iter()
                .map(|p| std::fs::read(p).unwrap_or_default())
                .collect::<Vec<_>>(),
        );
        featclash(
            dir,
            &[
                "--out",
                run,
                "--force",
                "--workers",
                "1",
                "sweep",
                "--config",
                "det.toml",
            ],
        )?;
        let rows = read_results(&dir.join(run).join("results.csv")).map_err(|e| e.to_string())?;
        csv_rows.push(
            rows.iter()
                .map(ResultRow::without_timing)
                .collect::<Vec<_>>(),
        );
    }
    let same_data = bytes[0] == bytes[1] && !bytes[0].is_empty();
    let same_rows = csv_rows[0] == csv_rows[1] && !csv_rows[0].is_empty();
    Ok((
        same_data && same_rows,
        format!("{} dataset files identical: {same_data}; {} result rows identical (wall_s excluded): {same_rows}", bytes[0].len(), csv_rows[0].len()),
    ))
}

fn bootstrap(_: &Path) -> Result<(bool, String), String> {
    let sample = [0.0, 1.0, 1.0, 0.0, 1.0];
    let n = sample.len();
    let mut means: Vec<f64> = (0..n.pow(n as u32))
        .map(|mut code| {
            let mut s = 0.0;
            for _ in 0..n {
                s += sample[code % n];
                code /= n;
            }
            s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let (lo, hi) = (lower_quantile(&means, 0.025), lower_quantile(&means, 0.975));
    let ci = bootstrap_ci(&sample, 1_000, 0.95, 0);
    Ok((
        ci.lower == lo && ci.upper == hi,
        format!(
            "exhaustive [{lo}, {hi}] over {} resamples, bootstrap [{}, {}]",
            means.len(),
            ci.lower,
            ci.upper
        ),
    ))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        for i in 1..=11 {
            println!("criterion_{i}: test");
        }
        return;
    }
    let keep = std::env::var_os("FEATCLASH_ACCEPT_DIR").map(PathBuf::from);
    let tmp;
    let dir = match keep {
        Some(d) => {
            std::fs::create_dir_all(&d).expect("create acceptance dir");
            d
        }
        None => {
            tmp = tempfile::tempdir().expect("temp dir");
            tmp.path().to_path_buf()
        }
    };
    println!("acceptance work directory: {}", dir.display());
    let mut suite = Suite {
        dir,
        outcomes: Vec::new(),
    };
    suite.run(1, gradient_check);
    suite.run(11, bootstrap);
    suite.run(9, generator_stats);
    suite.run(10, determinism);
    suite.run(2, hardness_grouping);
    suite.run(3, easy_collapse);
    suite.run(4, hard_resistance);
    suite.run(6, both_neither);
    suite.run(5, ce_type_asymmetry);
    suite.run(7, control);
    suite.run(8, multi_weak);

    suite.outcomes.sort_by_key(|o| o.id);
    let failed: Vec<&Outcome> = suite.outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "\nacceptance summary: {} passed, {} failed",
        suite.outcomes.len() - failed.len(),
        failed.len()
    );
    for o in &suite.outcomes {
        println!(
            "  {} {:>2}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.detail
        );
    }
    let strict = std::env::var("FEATCLASH_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
