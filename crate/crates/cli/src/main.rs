mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};
use featclash_core::datagen::{audit_pool, read_jsonl, write_jsonl, DatasetStats, Generator};
use featclash_core::experiments::{
    self, EarlyStopSet, Family, Precision, Profile, ResultRow, SweepSpec,
};
use featclash_core::metrics::{region_errors, Region};
use featclash_core::neural::Real;
use featclash_core::trainer::{self, predict_all, HardnessResult};
use featclash_core::{Error, Example, FeatureKind, Result};
use log::info;
use serde::Serialize;

use crate::config::TrainCommandConfig;
use crate::manifest::Manifest;

#[derive(Parser)]
#[command(
    name = "featclash",
    version,
    about = "Weak/strong feature benchmark: data, training, sweeps"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Output directory.
    #[arg(
        long,
        global = true,
        env = "FEATCLASH_OUT",
        default_value = "featclash-out"
    )]
    out: PathBuf,
    /// Overrides the seed (or the seed list) of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "desk")]
    profile: Profile,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overwrite existing outputs instead of refusing (sweeps restart from scratch).
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, validation and per-region test files.
    Gen {
        /// Dataset TOML laid over the profile defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model and report per-region test error.
    Train {
        /// TOML with a [dataset] table and optional dim, precision, early_stop_set, [train].
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Measure how hard features are to learn on their own.
    Hardness {
        /// Feature name, or `all` for the five standard features.
        #[arg(long, default_value = "all")]
        feature: String,
        /// Probe TOML laid over the profile defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "f32")]
        precision: PrecisionArg,
    },
    /// Run an experiment family; resumes an existing results file.
    Sweep {
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        family: Option<Family>,
        /// Sweep TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the jobs without running them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Bootstrap confidence intervals over seeds.
    Aggregate {
        /// Results CSV; defaults to `<out>/results.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Summary statistics of a dataset file.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        json: bool,
        /// Manifest used for the pool audit; defaults to the one next to the file.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownFeature(_) | Error::ImpossibleConstraint(_) => 2,
        Error::Divergence { .. } => 4,
        _ => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = cli.global;
    match cli.command {
        Command::Gen { config } => gen(&g, config.as_deref()),
        Command::Train { config } => train(&g, config.as_deref()),
        Command::Hardness {
            feature,
            config,
            precision,
        } => hardness(&g, &feature, config.as_deref(), precision),
        Command::Sweep {
            family,
            config,
            dry_run,
        } => sweep(&g, family, config.as_deref(), dry_run),
        Command::Aggregate { input } => aggregate(&g, input),
        Command::Inspect {
            file,
            json,
            manifest,
        } => inspect(&file, json, manifest.as_deref()),
    }
}

/// Creates the output directory and refuses to clobber any of `names` unless forced.
fn prepare_out(g: &Global, names: &[&str]) -> Result<()> {
    std::fs::create_dir_all(&g.out)?;
    if !g.force {
        if let Some(n) = names.iter().find(|n| g.out.join(n).exists()) {
            return Err(Error::config(format!(
                "{} already exists; pass --force to overwrite",
                g.out.join(n).display()
            )));
        }
    }
    Ok(())
}

fn write_examples(dir: &Path, name: &str, examples: &[Example]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(dir.join(name))?), examples)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn test_file(r: Region) -> String {
    format!("test-{}.jsonl", r.name())
}

fn gen(g: &Global, config_path: Option<&Path>) -> Result<()> {
    let cfg = config::dataset_config(config_path, g.profile, g.seed)?;
    let mut names = vec![
        "train.jsonl".to_string(),
        "validation.jsonl".into(),
        manifest::FILE_NAME.into(),
    ];
    names.extend(Region::ALL.map(test_file));
    prepare_out(g, &names.iter().map(String::as_str).collect::<Vec<_>>())?;

    let data = Generator::new(&cfg)?.generate_all()?;
    let mut m = Manifest::new("gen", &cfg)?;
    write_examples(&g.out, "train.jsonl", &data.train)?;
    m.add(&g.out, "train.jsonl", "train", Some(data.train.len()))?;
    write_examples(&g.out, "validation.jsonl", &data.validation)?;
    m.add(
        &g.out,
        "validation.jsonl",
        "validation",
        Some(data.validation.len()),
    )?;
    for (r, ex) in data.test.iter() {
        let name = test_file(r);
        write_examples(&g.out, &name, ex)?;
        m.add(&g.out, &name, "test", Some(ex.len()))?;
    }
    m.write(&g.out)?;
    println!(
        "wrote {} train, {} validation, {} test examples to {} (config {})",
        data.train.len(),
        data.validation.len(),
        data.test.iter().map(|(_, e)| e.len()).sum::<usize>(),
        g.out.display(),
        &m.config_sha256[..12]
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    best_epoch: usize,
    epochs_run: usize,
    hit_epoch_cap: bool,
    initial_val_error: f64,
    best_val_error: Option<f64>,
    test: featclash_core::RegionErrorReport,
    test_error: BTreeMap<&'static str, Option<f64>>,
}

fn train_native<T: Real>(c: &TrainCommandConfig, dir: &Path) -> Result<TrainReport> {
    let data = Generator::new(&c.dataset)?.generate_all()?;
    let test_all = data.test.all();
    let stop_set = match c.settings.early_stop_set {
        EarlyStopSet::Validation => &data.validation,
        EarlyStopSet::Test => &test_all,
    };
    let model =
        featclash_core::ModelConfig::new(c.dataset.vocab_size, c.settings.dim, c.dataset.seq_len);
    let (params, history) = trainer::train::<T>(model, &c.settings.train, &data.train, stop_set)?;
    history.write_jsonl(BufWriter::new(File::create(dir.join("history.jsonl"))?))?;
    params.write_checkpoint(BufWriter::new(File::create(dir.join("checkpoint.bin"))?))?;
    let test = region_errors(&predict_all(&params, &test_all)?, &test_all);
    Ok(TrainReport {
        best_epoch: history.best_epoch,
        epochs_run: history.epochs.len(),
        hit_epoch_cap: history.hit_epoch_cap,
        initial_val_error: history.initial_val_error,
        best_val_error: history.best().map(|e| e.val_error),
        test_error: Region::ALL
            .iter()
            .map(|&r| (r.name(), test.rate(r)))
            .collect(),
        test,
    })
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn train(g: &Global, config_path: Option<&Path>) -> Result<()> {
    let c = config::train_config(config_path, g.profile, g.seed)?;
    let files = [
        "history.jsonl",
        "checkpoint.bin",
        "report.json",
        manifest::FILE_NAME,
    ];
    prepare_out(g, &files)?;
    let report = match c.settings.precision {
        Precision::F32 => train_native::<f32>(&c, &g.out)?,
        Precision::F64 => train_native::<f64>(&c, &g.out)?,
    };
    write_json(&g.out.join("report.json"), &report)?;
    let mut m = Manifest::new("train", &c)?;
    m.add(&g.out, "history.jsonl", "output", Some(report.epochs_run))?;
    m.add(&g.out, "checkpoint.bin", "output", None)?;
    m.add(&g.out, "report.json", "output", None)?;
    m.write(&g.out)?;
    let errs: Vec<String> = Region::ALL
        .iter()
        .map(|&r| format!("{} {}", r.name(), fmt_rate(report.test.rate(r))))
        .collect();
    println!(
        "best_epoch {} of {} | test error: {}",
        report.best_epoch,
        report.epochs_run,
        errs.join(", ")
    );
    Ok(())
}

fn hardness(
    g: &Global,
    feature: &str,
    config_path: Option<&Path>,
    precision: PrecisionArg,
) -> Result<()> {
    let probe = config::probe(config_path, g.profile, g.seed)?;
    let features: Vec<FeatureKind> = if feature == "all" {
        FeatureKind::STANDARD.to_vec()
    } else {
        vec![feature.parse()?]
    };
    prepare_out(g, &["hardness.json"])?;
    let mut results: Vec<HardnessResult> = Vec::new();
    for f in features {
        info!("probing {f} over {} seeds", probe.seeds.len());
        let r = match precision {
            PrecisionArg::F32 => trainer::hardness_auc::<f32>(f, &probe)?,
            PrecisionArg::F64 => trainer::hardness_auc::<f64>(f, &probe)?,
        };
        println!(
            "{:<22} auc {:.4}  loss_auc {:.4}",
            f.to_string(),
            r.error_auc,
            r.loss_auc
        );
        results.push(r);
    }
    #[derive(Serialize)]
    struct Out<'a> {
        probe: &'a trainer::ProbeConfig,
        results: &'a [HardnessResult],
    }
    write_json(
        &g.out.join("hardness.json"),
        &Out {
            probe: &probe,
            results: &results,
        },
    )
}

fn sweep(
    g: &Global,
    family: Option<Family>,
    config_path: Option<&Path>,
    dry_run: bool,
) -> Result<()> {
    let mut spec = match (family, config_path) {
        (Some(f), _) => SweepSpec::new(f, g.profile),
        (None, Some(p)) => SweepSpec::from_toml(
            &std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?,
        )?,
        (None, None) => return Err(Error::config("either --family or --config is required")),
    };
    if let Some(s) = g.seed {
        spec.seeds = Some(vec![s]);
    }
    let jobs = experiments::expand(&spec)?;
    if dry_run {
        for j in &jobs {
            let d = &j.dataset;
            println!(
                "{} {} k={} n_ce={} mix={} purity={} base={} vocab={} eps={} extra={} seed={}",
                &j.key()[..12],
                j.strong_label(),
                d.k(),
                d.n_counterexamples,
                d.ce_mix.label(),
                d.ce_purity,
                d.effective_base_size(),
                d.vocab_size,
                d.noise_rate,
                d.n_default_extra,
                d.seed
            );
        }
        println!("{} jobs", jobs.len());
        return Ok(());
    }

    std::fs::create_dir_all(&g.out)?;
    let results = g.out.join("results.csv");
    let spec_path = g.out.join("sweep.toml");
    let text = spec.to_toml();
    if g.force {
        for p in [&results, &spec_path] {
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
    } else if results.exists() {
        let previous = std::fs::read_to_string(&spec_path).unwrap_or_default();
        if previous != text {
            return Err(Error::config(format!(
                "{} belongs to a different sweep; pass --force to start over",
                results.display()
            )));
        }
    }
    std::fs::write(&spec_path, &text)?;

    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let summary = experiments::run(&jobs, &results, g.workers, |row: &ResultRow| {
        let i = done.fetch_add(1, Ordering::Relaxed) + 1;
        println!(
            "[{i}] {} {} k={} n_ce={} mix={} seed={} | weak-only {} strong-only {} both {} neither {} | {:.1}s {}",
            row.family,
            row.strong_feature,
            row.k,
            row.n_ce,
            row.ce_mix,
            row.seed,
            fmt_rate(row.weak_only_err),
            fmt_rate(row.strong_only_err),
            fmt_rate(row.both_err),
            fmt_rate(row.neither_err),
            row.wall_s,
            row.status
        );
    })?;
    println!(
        "{total} jobs: {} run, {} already done, {} failed -> {}",
        summary.completed + summary.failed,
        summary.skipped,
        summary.failed,
        results.display()
    );
    Ok(())
}

fn aggregate(g: &Global, input: Option<PathBuf>) -> Result<()> {
    let input = input.unwrap_or_else(|| g.out.join("results.csv"));
    if !input.exists() {
        return Err(Error::config(format!("{} does not exist", input.display())));
    }
    let rows = experiments::read_results(&input)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        log::warn!("ignoring {failed} failed rows");
    }
    let summary = experiments::aggregate(&rows);
    prepare_out(g, &["summary.csv"])?;
    let out = g.out.join("summary.csv");
    experiments::write_summary(&out, &summary)?;
    for s in &summary {
        let cells: Vec<String> = Region::ALL
            .iter()
            .map(|&r| format!("{} {}", r.name(), fmt_rate(s.mean(r))))
            .collect();
        println!(
            "{} {} k={} n_ce={} mix={} (n={}) | {}",
            s.family,
            s.strong_feature,
            s.k,
            s.n_ce,
            s.ce_mix,
            s.n_seeds,
            cells.join(", ")
        );
    }
    println!("{} cells -> {}", summary.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct GroupStats {
    n: usize,
    strong_rate: f64,
    class_balance: f64,
}

#[derive(Serialize)]
struct InspectReport {
    file: String,
    role: Option<String>,
    stats: DatasetStats,
    by_provenance: BTreeMap<String, GroupStats>,
}

fn inspect(file: &Path, json: bool, manifest_path: Option<&Path>) -> Result<()> {
    let examples = read_jsonl(BufReader::new(File::open(file)?))?;
    let mut stats = DatasetStats::compute(&examples);

    let mut groups: BTreeMap<String, Vec<&Example>> = BTreeMap::new();
    for e in &examples {
        let p = e.provenance.to_string();
        let kind = p.split(':').next().unwrap_or(&p).to_string();
        groups.entry(kind).or_default().push(e);
    }
    let by_provenance = groups
        .into_iter()
        .map(|(k, v)| {
            let n = v.len();
            let strong = v.iter().filter(|e| e.strong_present).count();
            let pos = v.iter().filter(|e| e.label == 1).count();
            (
                k,
                GroupStats {
                    n,
                    strong_rate: strong as f64 / n as f64,
                    class_balance: pos as f64 / n as f64,
                },
            )
        })
        .collect();

    let manifest_path = manifest_path
        .map(Path::to_path_buf)
        .or_else(|| Manifest::beside(file));
    let mut role = None;
    if let Some(mp) = manifest_path {
        let m = Manifest::read(&mp)?;
        let name = file
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        match (m.command.as_str(), m.record(name)) {
            ("gen", Some(rec)) => {
                let cfg: featclash_core::DatasetConfig = serde_json::from_value(m.config.clone())?;
                let gen = Generator::new(&cfg)?;
                let forbidden = if rec.role == "test" {
                    &gen.train_pool
                } else {
                    &gen.test_pool
                };
                stats.pool_violations =
                    Some(audit_pool(&examples, &cfg.strong_features, forbidden));
                role = Some(rec.role.clone());
            }
            _ => log::warn!(
                "{} does not describe {name}; skipping the pool audit",
                mp.display()
            ),
        }
    }

    let report = InspectReport {
        file: file.display().to_string(),
        role,
        stats,
        by_provenance,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let s = &report.stats;
    println!("file              {}", report.file);
    if let Some(r) = &report.role {
        println!("role              {r}");
    }
    println!("examples          {}", s.n);
    println!("class balance     {:.4}", s.class_balance);
    println!("strong rate       {:.4}", s.strong_rate);
    println!("label mismatches  {}", s.label_strong_mismatch);
    println!("distinct symbols  {}", s.distinct_symbols);
    for i in 0..s.k {
        println!(
            "weak {i}            rate {:.4}  given strong {:.4}",
            s.weak_rate[i], s.weak_rate_given_strong[i]
        );
    }
    for (r, c) in &s.region_counts {
        println!("region {r:<12} {c}");
    }
    for (p, gs) in &report.by_provenance {
        println!(
            "source {p:<16} n {}  strong {:.4}  positive {:.4}",
            gs.n, gs.strong_rate, gs.class_balance
        );
    }
    if let Some(v) = s.pool_violations {
        println!("pool violations   {v}");
    }
    Ok(())
}
