//! Experiment families, grid expansion, a resumable sweep runner and
//! seed-level aggregation.
//!
//! | family         | varies                                            |
//! |----------------|---------------------------------------------------|
//! | `hardness`     | strong feature × counterexample budget (even mix) |
//! | `ce-type`      | strong feature × budget × weak-only/strong-only    |
//! | `train-size`   | strong feature × base size × budget               |
//! | `multi-weak`   | k × purity × budget                               |
//! | `noise`        | strong feature × label noise × budget             |
//! | `multi-strong` | strong-feature set × budget                       |
//! | `vocab`        | strong feature × vocabulary size × budget         |
//! | `control`      | extra default examples, no counterexamples        |
//! | `fixed-size`   | strong feature × budget at constant total size    |

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::datagen::{default_weak_symbols, CeMix, DatasetConfig, Generator, Purity};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::metrics::{bootstrap_ci, IntervalEstimate, Region, RegionErrorReport};
use crate::neural::{ModelConfig, ModelParams, Real};
use crate::trainer::{evaluate_regions, train, ProbeConfig, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Hardness,
    CeType,
    TrainSize,
    MultiWeak,
    Noise,
    MultiStrong,
    Vocab,
    Control,
    FixedSize,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Hardness,
        Family::CeType,
        Family::TrainSize,
        Family::MultiWeak,
        Family::Noise,
        Family::MultiStrong,
        Family::Vocab,
        Family::Control,
        Family::FixedSize,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Hardness => "hardness",
            Family::CeType => "ce-type",
            Family::TrainSize => "train-size",
            Family::MultiWeak => "multi-weak",
            Family::Noise => "noise",
            Family::MultiStrong => "multi-strong",
            Family::Vocab => "vocab",
            Family::Control => "control",
            Family::FixedSize => "fixed-size",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Family::Hardness => "region errors vs counterexample budget for each strong feature",
            Family::CeType => "weak-only vs strong-only counterexamples in isolation",
            Family::TrainSize => "counterexample budget at several base-set sizes",
            Family::MultiWeak => {
                "k = 1, 2, 3 weak features with impure strong-only counterexamples, plus a pure arm"
            }
            Family::Noise => "label noise on the training set",
            Family::MultiStrong => "label determined by a disjunction of strong features",
            Family::Vocab => "vocabulary size",
            Family::Control => "extra non-adversarial examples instead of counterexamples",
            Family::FixedSize => "counterexamples replace base examples at constant training size",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config(format!("unknown experiment family {s:?}")))
    }
}

/// Scale profile. `Desk` shrinks vocab, base size, model width and the budget grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl Profile {
    pub fn vocab_size(&self) -> usize {
        match self {
            Profile::Desk => 5_000,
            Profile::Paper => 50_000,
        }
    }

    pub fn base_size(&self) -> usize {
        match self {
            Profile::Desk => 50_000,
            Profile::Paper => 200_000,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Profile::Desk => 64,
            Profile::Paper => 250,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Profile::Desk => vec![42, 43, 44],
            Profile::Paper => vec![42, 43, 44, 45, 46],
        }
    }

    /// Counterexample budgets. The desk grid keeps the smallest point at 10 and
    /// divides the rest by four.
    pub fn ce_grid(&self) -> Vec<usize> {
        match self {
            Profile::Desk => vec![10, 25, 250, 2_500, 12_500, 25_000],
            Profile::Paper => vec![10, 100, 1_000, 10_000, 50_000, 100_000],
        }
    }

    /// Base sizes for the training-size family; the last one is the expensive cell.
    pub fn train_sizes(&self) -> Vec<usize> {
        match self {
            Profile::Desk => vec![25_000, 50_000, 250_000, 2_500_000],
            Profile::Paper => vec![100_000, 200_000, 1_000_000, 10_000_000],
        }
    }

    /// Fixed budget used by the multi-weak family.
    pub fn mid_budget(&self) -> usize {
        match self {
            Profile::Desk => 2_500,
            Profile::Paper => 10_000,
        }
    }

    /// Probe training-set size for the hardness probe.
    pub fn probe_size(&self) -> usize {
        match self {
            Profile::Desk => 50_000,
            Profile::Paper => 200_000,
        }
    }
}

/// Dataset defaults at the profile's scale.
pub fn dataset_defaults(p: Profile) -> DatasetConfig {
    DatasetConfig {
        vocab_size: p.vocab_size(),
        base_size: p.base_size(),
        ..DatasetConfig::default()
    }
}

/// Hardness probe at the profile's scale: three seeds, validation set a tenth
/// of the training set.
pub fn probe_config(p: Profile) -> ProbeConfig {
    let n = p.probe_size();
    ProbeConfig {
        vocab_size: p.vocab_size(),
        seq_len: 5,
        n_train: n,
        n_val: n / 10,
        seeds: vec![42, 43, 44],
        model: ModelConfig::new(p.vocab_size(), p.dim(), 5),
        train: TrainConfig::default(),
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::config(format!(
                "unknown profile {s:?} (expected desk or paper)"
            ))),
        }
    }
}

/// One or more strong features; written `a+b` when there are several.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrongSet(pub Vec<FeatureKind>);

impl StrongSet {
    pub fn single(k: FeatureKind) -> Self {
        StrongSet(vec![k])
    }
}

impl fmt::Display for StrongSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for StrongSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<FeatureKind>>>()?;
        Ok(StrongSet(kinds))
    }
}

impl Serialize for StrongSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrongSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Which held-out set drives early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStopSet {
    #[default]
    Validation,
    /// The four-region test set.
    Test,
}

/// Axis overrides; any axis left out takes the family's default for the profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub strong: Option<Vec<StrongSet>>,
    pub n_ce: Option<Vec<usize>>,
    pub base_size: Option<Vec<usize>>,
    pub k: Option<Vec<usize>>,
    pub noise: Option<Vec<f64>>,
    pub vocab: Option<Vec<usize>>,
    pub purity: Option<Vec<Purity>>,
    pub ce_mix: Option<Vec<String>>,
    pub n_extra: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr: Option<f64>,
}

/// Declarative sweep definition, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub family: Family,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub grid: GridOverrides,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub test_per_region: Option<usize>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub early_stop_set: EarlyStopSet,
    /// Keeps the largest training-size cell, which is skipped by default.
    #[serde(default)]
    pub include_expensive: bool,
}

impl SweepSpec {
    pub fn new(family: Family, profile: Profile) -> Self {
        SweepSpec {
            family,
            profile,
            seeds: None,
            grid: GridOverrides::default(),
            dim: None,
            train: TrainOverrides::default(),
            test_per_region: None,
            precision: Precision::F32,
            early_stop_set: EarlyStopSet::Validation,
            include_expensive: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("sweep spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep spec serializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| self.profile.seeds())
    }
}

/// Fully resolved axis values of one grid cell.
#[derive(Debug, Clone, PartialEq)]
struct Cell {
    strong: StrongSet,
    base_size: usize,
    vocab: usize,
    k: usize,
    noise: f64,
    purity: Purity,
    ce_mix: CeMix,
    n_ce: usize,
    n_extra: usize,
}

struct Axes {
    strong: Vec<StrongSet>,
    n_ce: Vec<usize>,
    base_size: Vec<usize>,
    k: Vec<usize>,
    noise: Vec<f64>,
    vocab: Vec<usize>,
    purity: Vec<Purity>,
    ce_mix: Vec<CeMix>,
    n_extra: Vec<usize>,
}

fn standard_sets() -> Vec<StrongSet> {
    FeatureKind::STANDARD
        .into_iter()
        .map(StrongSet::single)
        .collect()
}

fn default_axes(family: Family, p: Profile, include_expensive: bool) -> Axes {
    let mut a = Axes {
        strong: standard_sets(),
        n_ce: p.ce_grid(),
        base_size: vec![p.base_size()],
        k: vec![1],
        noise: vec![0.0],
        vocab: vec![p.vocab_size()],
        purity: vec![Purity::Pure],
        ce_mix: vec![CeMix::EVEN],
        n_extra: vec![0],
    };
    match family {
        Family::Hardness | Family::FixedSize => {}
        Family::CeType => a.ce_mix = vec![CeMix::WEAK_ONLY, CeMix::STRONG_ONLY],
        Family::TrainSize => {
            a.strong.retain(|s| s.0 != [FeatureKind::ContainsSymbol(1)]);
            a.base_size = p.train_sizes();
            if !include_expensive {
                a.base_size.pop();
            }
        }
        Family::MultiWeak => {
            a.strong = vec![StrongSet::single(FeatureKind::ContainsFirst)];
            a.n_ce = vec![p.mid_budget()];
            a.k = vec![1, 2, 3];
            a.purity = vec![Purity::RemoveAtMostOne, Purity::Pure];
        }
        Family::Noise => a.noise = vec![0.01, 0.05, 0.1],
        Family::MultiStrong => {
            use FeatureKind::*;
            a.strong = vec![
                StrongSet(vec![PrefixDuplicate, FirstLastDuplicate]),
                StrongSet(vec![AdjacentDuplicate, ContainsFirst]),
                StrongSet(vec![PrefixDuplicate, ContainsFirst]),
            ];
        }
        Family::Vocab => a.vocab = vec![500, 5_000, 50_000],
        Family::Control => {
            a.strong = vec![StrongSet::single(FeatureKind::FirstLastDuplicate)];
            a.n_ce = vec![0];
            a.n_extra = std::iter::once(0).chain(p.ce_grid()).collect();
        }
    }
    a
}

fn resolve_axes(spec: &SweepSpec) -> Result<Axes> {
    let mut a = default_axes(spec.family, spec.profile, spec.include_expensive);
    let g = &spec.grid;
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = &g.$field {
                a.$field = v.clone();
            }
        };
    }
    take!(strong);
    take!(n_ce);
    take!(base_size);
    take!(k);
    take!(noise);
    take!(vocab);
    take!(purity);
    take!(n_extra);
    if let Some(mixes) = &g.ce_mix {
        a.ce_mix = mixes.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    Ok(a)
}

fn cartesian(a: &Axes) -> Vec<Cell> {
    let mut out = Vec::new();
    for strong in &a.strong {
        for &base_size in &a.base_size {
            for &vocab in &a.vocab {
                for &k in &a.k {
                    for &noise in &a.noise {
                        for &purity in &a.purity {
                            for &ce_mix in &a.ce_mix {
                                for &n_extra in &a.n_extra {
                                    for &n_ce in &a.n_ce {
                                        out.push(Cell {
                                            strong: strong.clone(),
                                            base_size,
                                            vocab,
                                            k,
                                            noise,
                                            purity,
                                            ce_mix,
                                            n_ce,
                                            n_extra,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// One (cell, seed) unit of work.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Job {
    pub family: Family,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub precision: Precision,
    pub early_stop_set: EarlyStopSet,
}

impl Job {
    /// Content address of the job: SHA-256 over its canonical JSON form.
    pub fn key(&self) -> String {
        let json = serde_json::to_vec(self).expect("job serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn strong_label(&self) -> String {
        StrongSet(self.dataset.strong_features.clone()).to_string()
    }
}

/// Materializes every grid cell × seed. Fails on the first invalid cell,
/// naming its axis values.
pub fn expand(spec: &SweepSpec) -> Result<Vec<Job>> {
    let seeds = spec.seeds();
    if seeds.is_empty() {
        return Err(Error::config("sweep needs at least one seed"));
    }
    let axes = resolve_axes(spec)?;
    let mut cells = cartesian(&axes);
    if spec.family == Family::MultiWeak && spec.grid.purity.is_none() {
        let k_max = axes.k.iter().copied().max().unwrap_or(1);
        cells.retain(|c| c.purity == Purity::RemoveAtMostOne || c.k == k_max);
    }
    let dim = spec.dim.unwrap_or_else(|| spec.profile.dim());
    let t = spec.train;
    let base_train = TrainConfig::default();
    let mut jobs = Vec::with_capacity(cells.len() * seeds.len());
    for cell in cells {
        for &seed in &seeds {
            let fixed = spec.family == Family::FixedSize;
            let dataset = DatasetConfig {
                vocab_size: cell.vocab,
                base_size: cell.base_size,
                strong_features: cell.strong.0.clone(),
                weak_symbols: default_weak_symbols(cell.k),
                n_counterexamples: cell.n_ce,
                ce_mix: cell.ce_mix,
                ce_purity: cell.purity,
                noise_rate: cell.noise,
                n_default_extra: cell.n_extra,
                fixed_total_size: fixed.then_some(cell.base_size),
                test_per_region: spec
                    .test_per_region
                    .unwrap_or(DatasetConfig::default().test_per_region),
                seed,
                ..DatasetConfig::default()
            };
            let model = ModelConfig::new(cell.vocab, dim, dataset.seq_len);
            let train = TrainConfig {
                batch_size: t.batch_size.unwrap_or(base_train.batch_size),
                max_epochs: t.max_epochs.unwrap_or(base_train.max_epochs),
                patience: t.patience.unwrap_or(base_train.patience),
                lr: t.lr.unwrap_or(base_train.lr),
                seed,
                early_stop_metric: base_train.early_stop_metric,
            };
            let describe = || {
                format!(
                    "cell strong={} base={} vocab={} k={} noise={} purity={} mix={} n_ce={} n_extra={}",
                    cell.strong,
                    cell.base_size,
                    cell.vocab,
                    cell.k,
                    cell.noise,
                    cell.purity,
                    cell.ce_mix.label(),
                    cell.n_ce,
                    cell.n_extra
                )
            };
            dataset
                .validate()
                .map_err(|e| Error::config(format!("{}: {e}", describe())))?;
            model
                .validate()
                .map_err(|e| Error::config(format!("{}: {e}", describe())))?;
            train
                .validate()
                .map_err(|e| Error::config(format!("{}: {e}", describe())))?;
            jobs.push(Job {
                family: spec.family,
                dataset,
                model,
                train,
                precision: spec.precision,
                early_stop_set: spec.early_stop_set,
            });
        }
    }
    Ok(jobs)
}

/// One line of the results CSV. Empty error cells mark empty test regions or failed jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub family: Family,
    pub strong_feature: String,
    pub base_size: usize,
    pub vocab: usize,
    pub k: usize,
    pub epsilon: f64,
    pub purity: Purity,
    pub ce_mix: String,
    pub n_ce: usize,
    pub seed: u64,
    pub weak_only_err: Option<f64>,
    pub strong_only_err: Option<f64>,
    pub both_err: Option<f64>,
    pub neither_err: Option<f64>,
    pub best_epoch: Option<usize>,
    pub wall_s: f64,
    pub n_extra: usize,
    pub key: String,
    pub status: String,
}

impl ResultRow {
    fn skeleton(job: &Job) -> Self {
        let d = &job.dataset;
        ResultRow {
            family: job.family,
            strong_feature: job.strong_label(),
            base_size: d.effective_base_size(),
            vocab: d.vocab_size,
            k: d.k(),
            epsilon: d.noise_rate,
            purity: d.ce_purity,
            ce_mix: d.ce_mix.label(),
            n_ce: d.n_counterexamples,
            seed: d.seed,
            weak_only_err: None,
            strong_only_err: None,
            both_err: None,
            neither_err: None,
            best_epoch: None,
            wall_s: 0.0,
            n_extra: d.n_default_extra,
            key: job.key(),
            status: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn error(&self, r: Region) -> Option<f64> {
        match r {
            Region::WeakOnly => self.weak_only_err,
            Region::StrongOnly => self.strong_only_err,
            Region::Both => self.both_err,
            Region::Neither => self.neither_err,
        }
    }

    /// Everything except the wall-clock time, for reproducibility checks.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            wall_s: 0.0,
            ..self.clone()
        }
    }
}

/// Output of a single trained job.
#[derive(Debug, Clone)]
pub struct JobOutcome {
    pub report: RegionErrorReport,
    pub history: TrainHistory,
}

fn train_and_eval<T: Real>(job: &Job) -> Result<(ModelParams<T>, JobOutcome)> {
    let data = Generator::new(&job.dataset)?.generate_all()?;
    let test_all;
    let stop_set = match job.early_stop_set {
        EarlyStopSet::Validation => &data.validation,
        EarlyStopSet::Test => {
            test_all = data.test.all();
            &test_all
        }
    };
    let (params, history) = train::<T>(job.model, &job.train, &data.train, stop_set)?;
    let report = evaluate_regions(&params, &data.test)?;
    Ok((params, JobOutcome { report, history }))
}

/// Builds the data, trains, and evaluates; returns the f64 copy of the best parameters.
pub fn run_job_detailed(job: &Job) -> Result<(ModelParams<f64>, JobOutcome)> {
    match job.precision {
        Precision::F32 => train_and_eval::<f32>(job).map(|(p, o)| (p.cast(), o)),
        Precision::F64 => train_and_eval::<f64>(job),
    }
}

/// Runs one job; any failure is recorded in the row's status instead of propagating.
pub fn run_job(job: &Job) -> ResultRow {
    let mut row = ResultRow::skeleton(job);
    let start = std::time::Instant::now();
    match run_job_detailed(job) {
        Ok((_, out)) => {
            row.weak_only_err = out.report.rate(Region::WeakOnly);
            row.strong_only_err = out.report.rate(Region::StrongOnly);
            row.both_err = out.report.rate(Region::Both);
            row.neither_err = out.report.rate(Region::Neither);
            row.best_epoch = Some(out.history.best_epoch);
            row.status = "ok".into();
        }
        Err(e) => {
            warn!("job {} failed: {e}", &row.key[..12]);
            row.status = format!("failed: {e}");
        }
    }
    row.wall_s = start.elapsed().as_secs_f64();
    row
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
}

/// Runs every job whose key is not yet in `out`, appending one flushed row
/// per finished job. Rows are written by a single appender; with one worker
/// they appear in job order.
pub fn run<F>(jobs: &[Job], out: &Path, workers: usize, on_row: F) -> Result<RunSummary>
where
    F: Fn(&ResultRow) + Sync,
{
    let done: HashSet<String> = if out.exists() && std::fs::metadata(out)?.len() > 0 {
        read_results(out)?.into_iter().map(|r| r.key).collect()
    } else {
        HashSet::new()
    };
    let pending: Vec<&Job> = jobs.iter().filter(|j| !done.contains(&j.key())).collect();
    let skipped = jobs.len() - pending.len();
    if skipped > 0 {
        info!("skipping {skipped} completed jobs");
    }
    let fresh = !out.exists() || std::fs::metadata(out)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(out)?;
    let writer = Mutex::new(
        csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file),
    );
    let failed = std::sync::atomic::AtomicUsize::new(0);

    let handle = |job: &Job| -> Result<()> {
        let row = run_job(job);
        if !row.is_ok() {
            failed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        let mut w = writer.lock().expect("appender lock");
        w.serialize(&row)?;
        w.flush()?;
        drop(w);
        on_row(&row);
        Ok(())
    };

    if workers <= 1 {
        pending.iter().try_for_each(|j| handle(j))?;
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(|| pending.par_iter().try_for_each(|j| handle(j)))?;
    }
    let failed = failed.into_inner();
    Ok(RunSummary {
        total: jobs.len(),
        skipped,
        completed: pending.len() - failed,
        failed,
    })
}

/// Seed-level summary of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: Family,
    pub strong_feature: String,
    pub base_size: usize,
    pub vocab: usize,
    pub k: usize,
    pub epsilon: f64,
    pub purity: Purity,
    pub ce_mix: String,
    pub n_ce: usize,
    pub n_extra: usize,
    pub n_seeds: usize,
    pub weak_only_mean: Option<f64>,
    pub weak_only_lo: Option<f64>,
    pub weak_only_hi: Option<f64>,
    pub strong_only_mean: Option<f64>,
    pub strong_only_lo: Option<f64>,
    pub strong_only_hi: Option<f64>,
    pub both_mean: Option<f64>,
    pub both_lo: Option<f64>,
    pub both_hi: Option<f64>,
    pub neither_mean: Option<f64>,
    pub neither_lo: Option<f64>,
    pub neither_hi: Option<f64>,
}

impl SummaryRow {
    pub fn mean(&self, r: Region) -> Option<f64> {
        match r {
            Region::WeakOnly => self.weak_only_mean,
            Region::StrongOnly => self.strong_only_mean,
            Region::Both => self.both_mean,
            Region::Neither => self.neither_mean,
        }
    }
}

pub const BOOTSTRAP_ITERATIONS: usize = 1_000;
pub const CONFIDENCE_LEVEL: f64 = 0.95;
const AGGREGATE_SEED: u64 = 0;

fn interval(values: &[f64]) -> Option<IntervalEstimate> {
    (!values.is_empty()).then(|| {
        bootstrap_ci(
            values,
            BOOTSTRAP_ITERATIONS,
            CONFIDENCE_LEVEL,
            AGGREGATE_SEED,
        )
    })
}

/// Groups successful rows by every axis except the seed and bootstraps each
/// error metric over the seeds. Cells keep the order of their first row.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
    let mut index: Vec<(String, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let key = format!(
            "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            r.family,
            r.strong_feature,
            r.base_size,
            r.vocab,
            r.k,
            r.epsilon,
            r.purity,
            r.ce_mix,
            r.n_ce,
            r.n_extra
        );
        let id = match index.iter().find(|(k, _)| *k == key) {
            Some(&(_, id)) => id,
            None => {
                index.push((key, index.len()));
                index.len() - 1
            }
        };
        groups.entry(id).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let ci =
                |reg: Region| interval(&g.iter().filter_map(|r| r.error(reg)).collect::<Vec<_>>());
            let [wo, so, bo, ne] = Region::ALL.map(ci);
            let split = |c: Option<IntervalEstimate>| match c {
                Some(c) => (Some(c.mean), Some(c.lower), Some(c.upper)),
                None => (None, None, None),
            };
            let (weak_only_mean, weak_only_lo, weak_only_hi) = split(wo);
            let (strong_only_mean, strong_only_lo, strong_only_hi) = split(so);
            let (both_mean, both_lo, both_hi) = split(bo);
            let (neither_mean, neither_lo, neither_hi) = split(ne);
            SummaryRow {
                family: first.family,
                strong_feature: first.strong_feature.clone(),
                base_size: first.base_size,
                vocab: first.vocab,
                k: first.k,
                epsilon: first.epsilon,
                purity: first.purity,
                ce_mix: first.ce_mix.clone(),
                n_ce: first.n_ce,
                n_extra: first.n_extra,
                n_seeds: g.len(),
                weak_only_mean,
                weak_only_lo,
                weak_only_hi,
                strong_only_mean,
                strong_only_lo,
                strong_only_hi,
                both_mean,
                both_lo,
                both_hi,
                neither_mean,
                neither_lo,
                neither_hi,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the summary CSV to any sink, used for stdout output.
pub fn write_summary_to<W: Write>(sink: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
