//! Dataset recipes: base sets with perfect strong/weak co-occurrence,
//! counterexamples of both types, label noise, control examples, four-region
//! test sets and the balanced hardness-probe sets.
//!
//! Non-reserved symbols are split into a train pool and a test pool. Strong
//! features are instantiated from the train pool in training and validation
//! data and from the test pool in test data. By default training fillers come
//! from the train pool too, so test-pool symbols are unseen during training;
//! test fillers draw from every non-reserved symbol.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSpec, Sequence, Symbol, SymbolPool};
use crate::metrics::Region;
use crate::rng::{self, purpose};

/// Symbols that never serve as filler or strong-feature pool members.
pub const ALWAYS_RESERVED: Symbol = 1;

/// Weak-feature symbols for k = 1, 2, 3.
pub fn default_weak_symbols(k: usize) -> Vec<Symbol> {
    (2..2 + k as Symbol).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purity {
    /// Strong-only counterexamples carry no weak feature at all.
    Pure,
    /// Strong-only counterexamples drop only their targeted weak feature.
    RemoveAtMostOne,
}

impl fmt::Display for Purity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Purity::Pure => "pure",
            Purity::RemoveAtMostOne => "remove-at-most-one",
        })
    }
}

/// Where filler symbols of training and validation sequences come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillerPolicy {
    /// Train-split fillers come from the train pool only.
    #[default]
    TrainPool,
    /// Every split draws fillers from all non-reserved symbols.
    AllUnreserved,
}

/// Fractions of the counterexample budget spent on each type. Configs may
/// also name a mix by its label (`"even"`, `"weak-only"`, `"weak0.25"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CeMixRepr")]
pub struct CeMix {
    pub weak_only: f64,
    pub strong_only: f64,
}

impl CeMix {
    pub const EVEN: CeMix = CeMix {
        weak_only: 0.5,
        strong_only: 0.5,
    };
    pub const WEAK_ONLY: CeMix = CeMix {
        weak_only: 1.0,
        strong_only: 0.0,
    };
    pub const STRONG_ONLY: CeMix = CeMix {
        weak_only: 0.0,
        strong_only: 1.0,
    };

    pub fn label(&self) -> String {
        if *self == CeMix::EVEN {
            "even".into()
        } else if *self == CeMix::WEAK_ONLY {
            "weak-only".into()
        } else if *self == CeMix::STRONG_ONLY {
            "strong-only".into()
        } else {
            format!("weak{:.3}", self.weak_only)
        }
    }
}

impl FromStr for CeMix {
    type Err = Error;

    /// Inverse of [`CeMix::label`].
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(CeMix::EVEN),
            "weak-only" => Ok(CeMix::WEAK_ONLY),
            "strong-only" => Ok(CeMix::STRONG_ONLY),
            other => {
                let w: f64 = other
                    .strip_prefix("weak")
                    .and_then(|f| f.parse().ok())
                    .filter(|w| (0.0..=1.0).contains(w))
                    .ok_or_else(|| {
                        Error::config(format!("unknown counterexample mix {other:?}"))
                    })?;
                Ok(CeMix {
                    weak_only: w,
                    strong_only: 1.0 - w,
                })
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CeMixFields {
    weak_only: f64,
    strong_only: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CeMixRepr {
    Label(String),
    Fields(CeMixFields),
}

impl TryFrom<CeMixRepr> for CeMix {
    type Error = Error;

    fn try_from(r: CeMixRepr) -> Result<Self> {
        match r {
            CeMixRepr::Label(s) => s.parse(),
            CeMixRepr::Fields(f) => Ok(CeMix {
                weak_only: f.weak_only,
                strong_only: f.strong_only,
            }),
        }
    }
}

impl Default for CeMix {
    fn default() -> Self {
        CeMix::EVEN
    }
}

/// Full recipe for one training/validation/test bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub base_size: usize,
    pub strong_features: Vec<FeatureKind>,
    pub weak_symbols: Vec<Symbol>,
    pub n_counterexamples: usize,
    pub ce_mix: CeMix,
    pub ce_purity: Purity,
    pub noise_rate: f64,
    pub n_default_extra: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_total_size: Option<usize>,
    pub symbol_split_fraction: f64,
    #[serde(default)]
    pub filler_policy: FillerPolicy,
    /// Validation set size relative to the training recipe.
    pub val_fraction: f64,
    pub test_per_region: usize,
    /// Rejection-sampling attempt cap per example.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            vocab_size: 50_000,
            seq_len: 5,
            base_size: 200_000,
            strong_features: vec![FeatureKind::ContainsFirst],
            weak_symbols: default_weak_symbols(1),
            n_counterexamples: 0,
            ce_mix: CeMix::EVEN,
            ce_purity: Purity::Pure,
            noise_rate: 0.0,
            n_default_extra: 0,
            fixed_total_size: None,
            symbol_split_fraction: 0.5,
            filler_policy: FillerPolicy::TrainPool,
            val_fraction: 0.1,
            test_per_region: 2_000,
            max_attempts: 1_000,
            seed: 42,
        }
    }
}

impl DatasetConfig {
    pub fn k(&self) -> usize {
        self.weak_symbols.len()
    }

    pub fn reserved_symbols(&self) -> SymbolPool {
        let mut r = vec![ALWAYS_RESERVED];
        r.extend(&self.weak_symbols);
        r.extend(
            self.strong_features
                .iter()
                .filter_map(|f| f.reserved_symbol()),
        );
        SymbolPool::new(r)
    }

    /// Base size after the fixed-total-size substitution, if any.
    pub fn effective_base_size(&self) -> usize {
        match self.fixed_total_size {
            Some(total) => total.saturating_sub(self.n_counterexamples),
            None => self.base_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.seq_len < 2 {
            return err("seq_len must be >= 2".into());
        }
        if self.strong_features.is_empty() {
            return err("strong_features must not be empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &w in &self.weak_symbols {
            if !seen.insert(w) {
                return err(format!("weak symbol {w} listed twice"));
            }
            if w as usize >= self.vocab_size {
                return err(format!(
                    "weak symbol {w} outside vocab of {}",
                    self.vocab_size
                ));
            }
            if self
                .strong_features
                .contains(&FeatureKind::ContainsSymbol(w))
            {
                return err(format!(
                    "weak symbol {w} is also a strong contains-symbol target"
                ));
            }
            if w == ALWAYS_RESERVED {
                return err(format!(
                    "symbol {ALWAYS_RESERVED} is reserved for the contains-1 feature"
                ));
            }
        }
        for f in &self.strong_features {
            if let Some(s) = f.reserved_symbol() {
                if s as usize >= self.vocab_size {
                    return err(format!("strong feature {f} symbol outside vocab"));
                }
            }
        }
        let footprint = self
            .strong_features
            .iter()
            .map(|f| f.footprint())
            .max()
            .unwrap_or(0);
        if self.k() + footprint > self.seq_len {
            return err(format!(
                "{} weak features plus a {footprint}-symbol strong feature do not fit in length {}",
                self.k(),
                self.seq_len
            ));
        }
        if self.n_counterexamples > 0 && self.k() == 0 {
            return err("counterexamples need at least one weak feature".into());
        }
        let m = self.ce_mix;
        if m.weak_only < 0.0
            || m.strong_only < 0.0
            || (m.weak_only + m.strong_only - 1.0).abs() > 1e-9
        {
            return err(format!(
                "ce_mix fractions must be non-negative and sum to 1 (got {} + {})",
                m.weak_only, m.strong_only
            ));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return err(format!(
                "noise_rate must lie in [0, 1), got {}",
                self.noise_rate
            ));
        }
        if let Some(total) = self.fixed_total_size {
            if self.n_counterexamples > total {
                return err(format!(
                    "n_counterexamples {} exceeds fixed_total_size {total}",
                    self.n_counterexamples
                ));
            }
        }
        if !(self.symbol_split_fraction > 0.0 && self.symbol_split_fraction < 1.0) {
            return err("symbol_split_fraction must lie strictly between 0 and 1".into());
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return err("val_fraction must lie in [0, 1]".into());
        }
        if self.max_attempts == 0 {
            return err("max_attempts must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Base,
    WeakOnlyCe(usize),
    StrongOnlyCe(usize),
    Control,
    TestRegion(Region),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Base => f.write_str("base"),
            Provenance::WeakOnlyCe(i) => write!(f, "weak-only-ce:{i}"),
            Provenance::StrongOnlyCe(i) => write!(f, "strong-only-ce:{i}"),
            Provenance::Control => f.write_str("control"),
            Provenance::TestRegion(r) => write!(f, "test:{}", r.name()),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let index = |n: &str| {
            n.parse::<usize>()
                .map_err(|_| format!("bad provenance index in `{s}`"))
        };
        match s {
            "base" => Ok(Provenance::Base),
            "control" => Ok(Provenance::Control),
            _ => {
                if let Some(n) = s.strip_prefix("weak-only-ce:") {
                    Ok(Provenance::WeakOnlyCe(index(n)?))
                } else if let Some(n) = s.strip_prefix("strong-only-ce:") {
                    Ok(Provenance::StrongOnlyCe(index(n)?))
                } else if let Some(r) = s.strip_prefix("test:") {
                    Region::ALL
                        .into_iter()
                        .find(|x| x.name() == r)
                        .map(Provenance::TestRegion)
                        .ok_or_else(|| format!("unknown region `{r}`"))
                } else {
                    Err(format!("unknown provenance `{s}`"))
                }
            }
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// One labeled sequence with its feature annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub seq: Sequence,
    pub label: u8,
    #[serde(rename = "strong")]
    pub strong_present: bool,
    #[serde(rename = "weak")]
    pub weak_mask: Vec<bool>,
    #[serde(rename = "prov")]
    pub provenance: Provenance,
}

impl Example {
    pub fn any_weak(&self) -> bool {
        self.weak_mask.iter().any(|&w| w)
    }

    pub fn region(&self) -> Region {
        Region::of(self.strong_present, self.any_weak())
    }
}

/// Requested presence pattern for one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub strong: bool,
    pub weak: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Counterexample counts per type and per weak feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CeCounts {
    pub weak_only: Vec<usize>,
    pub strong_only: Vec<usize>,
}

impl CeCounts {
    pub fn total(&self) -> usize {
        self.weak_only.iter().sum::<usize>() + self.strong_only.iter().sum::<usize>()
    }
}

/// Splits `n` counterexamples by type (weak-only share rounded to nearest) and
/// then evenly across the `k` weak features, residue to the lowest indices.
pub fn split_counterexamples(n: usize, mix: CeMix, k: usize) -> CeCounts {
    let n_weak = ((n as f64) * mix.weak_only).round() as usize;
    let n_weak = n_weak.min(n);
    CeCounts {
        weak_only: split_even(n_weak, k),
        strong_only: split_even(n - n_weak, k),
    }
}

fn split_even(total: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return vec![];
    }
    (0..k)
        .map(|i| total / k + usize::from(i < total % k))
        .collect()
}

/// Seeded split of the non-reserved vocab into `(train_pool, test_pool)`.
pub fn partition_symbols(config: &DatasetConfig) -> Result<(SymbolPool, SymbolPool)> {
    let reserved = config.reserved_symbols();
    let mut free: Vec<Symbol> = (0..config.vocab_size as Symbol)
        .filter(|&s| !reserved.contains(s))
        .collect();
    let n_train = ((free.len() as f64) * config.symbol_split_fraction).floor() as usize;
    if n_train < 2 || free.len() - n_train < 2 {
        return Err(Error::impossible(format!(
            "vocab of {} leaves fewer than 2 symbols in a pool",
            config.vocab_size
        )));
    }
    free.shuffle(&mut rng::stream(config.seed, purpose::SPLIT, 0));
    let test = free.split_off(n_train);
    Ok((SymbolPool::new(free), SymbolPool::new(test)))
}

/// Samples examples for one validated recipe.
#[derive(Debug, Clone)]
pub struct Generator {
    config: DatasetConfig,
    pub train_pool: SymbolPool,
    pub test_pool: SymbolPool,
    fillers: SymbolPool,
    strong_train: Vec<FeatureSpec>,
    strong_test: Vec<FeatureSpec>,
    weak: Vec<FeatureSpec>,
}

impl Generator {
    pub fn new(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let (train_pool, test_pool) = partition_symbols(config)?;
        let mut all: Vec<Symbol> = train_pool.symbols().to_vec();
        all.extend_from_slice(test_pool.symbols());
        let fillers = SymbolPool::new(all);
        let specs = |pool: &SymbolPool| -> Vec<FeatureSpec> {
            config
                .strong_features
                .iter()
                .map(|&k| FeatureSpec::new(k, pool.clone()))
                .collect()
        };
        Ok(Generator {
            strong_train: specs(&train_pool),
            strong_test: specs(&test_pool),
            weak: config
                .weak_symbols
                .iter()
                .map(|&s| {
                    FeatureSpec::new(FeatureKind::ContainsSymbol(s), SymbolPool::singleton(s))
                })
                .collect(),
            config: config.clone(),
            train_pool,
            test_pool,
            fillers,
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.weak.len()
    }

    /// Rejection-samples filler symbols until every strong and weak feature
    /// evaluates exactly to `target`. A realized strong feature must have a
    /// single instance, built from the split's pool; unrealized ones must be absent.
    pub fn sample_example<R: Rng + ?Sized>(
        &self,
        target: &Target,
        split: Split,
        provenance: Provenance,
        rng: &mut R,
    ) -> Result<Example> {
        assert_eq!(
            target.weak.len(),
            self.k(),
            "weak target length must equal k"
        );
        let strong_specs = match split {
            Split::Train => &self.strong_train,
            Split::Test => &self.strong_test,
        };
        let n = self.config.seq_len;
        let mut seq = vec![0; n];
        let mut occupied = vec![false; n];
        for _ in 0..self.config.max_attempts {
            occupied.iter_mut().for_each(|o| *o = false);
            let chosen = target
                .strong
                .then(|| rng.random_range(0..strong_specs.len()));
            if let Some(i) = chosen {
                strong_specs[i].plant_into(&mut seq, &mut occupied, rng)?;
            }
            for (spec, _) in self.weak.iter().zip(&target.weak).filter(|(_, &on)| on) {
                spec.plant_into(&mut seq, &mut occupied, rng)?;
            }
            let fill = match (split, self.config.filler_policy) {
                (Split::Train, FillerPolicy::TrainPool) => &self.train_pool,
                _ => &self.fillers,
            };
            for (s, _) in seq.iter_mut().zip(&occupied).filter(|(_, &o)| !o) {
                *s = fill.sample(rng).expect("partition guarantees fillers");
            }
            if self.matches_target(&seq, chosen, target, strong_specs) {
                return Ok(Example {
                    seq: Sequence(seq),
                    label: u8::from(target.strong),
                    strong_present: target.strong,
                    weak_mask: target.weak.clone(),
                    provenance,
                });
            }
        }
        Err(Error::UnsatisfiableTarget {
            target: format!("strong={} weak={:?}", target.strong, target.weak),
            attempts: self.config.max_attempts,
        })
    }

    fn matches_target(
        &self,
        seq: &[Symbol],
        chosen: Option<usize>,
        target: &Target,
        strong_specs: &[FeatureSpec],
    ) -> bool {
        let strong_ok = strong_specs.iter().enumerate().all(|(i, spec)| {
            let w = spec.kind.witnesses(seq);
            if chosen == Some(i) {
                w.len() == 1 && spec.pool.contains(w[0])
            } else {
                w.is_empty()
            }
        });
        strong_ok
            && self
                .weak
                .iter()
                .zip(&target.weak)
                .all(|(spec, &on)| spec.kind.holds(seq) == on)
    }

    /// Weak mask for a positive base example: all true for k = 1; for larger k
    /// each feature independently with probability 1/2, resampled when empty.
    fn positive_weak_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        let k = self.k();
        if k <= 1 {
            return vec![true; k];
        }
        loop {
            let mask: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
            if mask.iter().any(|&b| b) {
                return mask;
            }
        }
    }

    fn generate<F>(&self, count: usize, tag: u64, make: F) -> Result<Vec<Example>>
    where
        F: Fn(usize, &mut rng::StreamRng) -> Result<Example> + Sync,
    {
        (0..count)
            .into_par_iter()
            .map(|i| make(i, &mut rng::stream(self.config.seed, tag, i as u64)))
            .collect()
    }

    /// Balanced base set: the first half positive (strong plus weak
    /// features), the rest negative (no features).
    pub fn build_base(
        &self,
        size: usize,
        tag: u64,
        provenance: Provenance,
    ) -> Result<Vec<Example>> {
        let n_pos = size / 2;
        let k = self.k();
        self.generate(size, tag, |i, rng| {
            let target = if i < n_pos {
                Target {
                    strong: true,
                    weak: self.positive_weak_mask(rng),
                }
            } else {
                Target {
                    strong: false,
                    weak: vec![false; k],
                }
            };
            self.sample_example(&target, Split::Train, provenance, rng)
        })
    }

    /// Weak feature `i` present, everything else absent, label 0.
    pub fn gen_weak_only_ce(&self, count: usize, i: usize, tag: u64) -> Result<Vec<Example>> {
        let k = self.k();
        self.generate(count, tag, |_, rng| {
            let mut weak = vec![false; k];
            weak[i] = true;
            self.sample_example(
                &Target {
                    strong: false,
                    weak,
                },
                Split::Train,
                Provenance::WeakOnlyCe(i),
                rng,
            )
        })
    }

    /// Strong feature present, label 1. Under `Pure` no weak features; under
    /// `RemoveAtMostOne` weak `i` absent and each other weak `j` present with
    /// probability `weak_given_strong[j]`.
    pub fn gen_strong_only_ce(
        &self,
        count: usize,
        i: usize,
        weak_given_strong: &[f64],
        tag: u64,
    ) -> Result<Vec<Example>> {
        let k = self.k();
        assert_eq!(weak_given_strong.len(), k);
        let purity = self.config.ce_purity;
        self.generate(count, tag, |_, rng| {
            let weak: Vec<bool> = (0..k)
                .map(|j| match purity {
                    Purity::Pure => false,
                    Purity::RemoveAtMostOne => {
                        j != i && rng.random_bool(weak_given_strong[j].clamp(0.0, 1.0))
                    }
                })
                .collect();
            self.sample_example(
                &Target { strong: true, weak },
                Split::Train,
                Provenance::StrongOnlyCe(i),
                rng,
            )
        })
    }

    /// Non-adversarial examples drawn like the base set.
    pub fn gen_default_extra(&self, count: usize, tag: u64) -> Result<Vec<Example>> {
        self.build_base(count, tag, Provenance::Control)
    }

    /// Four labeled test regions of `n_per_region` examples each, strong
    /// features instantiated from the test pool only.
    pub fn build_test_regions(&self, n_per_region: usize) -> Result<TestRegions> {
        let k = self.k();
        let region = |r: Region| -> Result<Vec<Example>> {
            self.generate(n_per_region, purpose::TEST + r as u64, |_, rng| {
                let (strong, weak) = match r {
                    Region::WeakOnly => (false, self.positive_weak_mask(rng)),
                    Region::StrongOnly => (true, vec![false; k]),
                    Region::Both => (true, self.positive_weak_mask(rng)),
                    Region::Neither => (false, vec![false; k]),
                };
                self.sample_example(
                    &Target { strong, weak },
                    Split::Test,
                    Provenance::TestRegion(r),
                    rng,
                )
            })
        };
        if k == 0 {
            return Err(Error::impossible(
                "test regions need at least one weak feature",
            ));
        }
        Ok(TestRegions {
            weak_only: region(Region::WeakOnly)?,
            strong_only: region(Region::StrongOnly)?,
            both: region(Region::Both)?,
            neither: region(Region::Neither)?,
        })
    }

    /// Composes one training-style set: base, counterexamples, then control
    /// examples, with label noise applied last. `scale` shrinks every count
    /// (used for the validation set).
    fn compose(&self, scale: f64, offset: u64) -> Result<Vec<Example>> {
        let c = &self.config;
        let scaled = |n: usize| ((n as f64) * scale).round() as usize;
        let mut out = self.build_base(
            scaled(c.effective_base_size()),
            purpose::BASE + offset,
            Provenance::Base,
        )?;
        let p_weak = weak_given_strong(&out, self.k());
        let counts = split_counterexamples(scaled(c.n_counterexamples), c.ce_mix, self.k());
        for (i, &n) in counts.weak_only.iter().enumerate() {
            out.extend(self.gen_weak_only_ce(
                n,
                i,
                purpose::WEAK_ONLY + offset + (i as u64) * 0x100,
            )?);
        }
        for (i, &n) in counts.strong_only.iter().enumerate() {
            out.extend(self.gen_strong_only_ce(
                n,
                i,
                &p_weak,
                purpose::STRONG_ONLY + offset + (i as u64) * 0x100,
            )?);
        }
        out.extend(self.gen_default_extra(scaled(c.n_default_extra), purpose::CONTROL + offset)?);
        apply_noise(
            &mut out,
            c.noise_rate,
            &mut rng::stream(c.seed, purpose::NOISE + offset, 0),
        );
        Ok(out)
    }

    pub fn build_training_set(&self) -> Result<Vec<Example>> {
        self.compose(1.0, 0)
    }

    pub fn build_validation_set(&self) -> Result<Vec<Example>> {
        self.compose(self.config.val_fraction, purpose::VALIDATION)
    }

    pub fn generate_all(&self) -> Result<GeneratedData> {
        Ok(GeneratedData {
            train: self.build_training_set()?,
            validation: self.build_validation_set()?,
            test: self.build_test_regions(self.config.test_per_region)?,
        })
    }
}

/// Empirical `P(weak_j | strong)` over the positives of `examples`.
pub fn weak_given_strong(examples: &[Example], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    let mut n = 0usize;
    for e in examples.iter().filter(|e| e.strong_present) {
        n += 1;
        for (c, &w) in counts.iter_mut().zip(&e.weak_mask) {
            *c += usize::from(w);
        }
    }
    counts
        .into_iter()
        .map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect()
}

/// Flips each label independently with probability `rate`. Feature flags are untouched.
pub fn apply_noise<R: Rng + ?Sized>(examples: &mut [Example], rate: f64, rng: &mut R) {
    assert!((0.0..1.0).contains(&rate), "noise rate must lie in [0, 1)");
    if rate == 0.0 {
        return;
    }
    for e in examples {
        if rng.random_bool(rate) {
            e.label = 1 - e.label;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TestRegions {
    pub weak_only: Vec<Example>,
    pub strong_only: Vec<Example>,
    pub both: Vec<Example>,
    pub neither: Vec<Example>,
}

impl TestRegions {
    pub fn get(&self, r: Region) -> &[Example] {
        match r {
            Region::WeakOnly => &self.weak_only,
            Region::StrongOnly => &self.strong_only,
            Region::Both => &self.both,
            Region::Neither => &self.neither,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Region, &[Example])> {
        Region::ALL.into_iter().map(move |r| (r, self.get(r)))
    }

    pub fn all(&self) -> Vec<Example> {
        self.iter().flat_map(|(_, v)| v.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: TestRegions,
}

/// Balanced feature-presence data for the hardness probe: labels are 1 iff
/// `feature` holds. `split` picks which pool instantiates the feature.
pub fn build_hardness_dataset(
    feature: FeatureKind,
    n: usize,
    vocab_size: usize,
    seq_len: usize,
    split: Split,
    seed: u64,
) -> Result<Vec<Example>> {
    let config = DatasetConfig {
        vocab_size,
        seq_len,
        base_size: n,
        strong_features: vec![feature],
        weak_symbols: vec![],
        seed,
        ..DatasetConfig::default()
    };
    let gen = Generator::new(&config)?;
    let tag = purpose::PROBE
        + if split == Split::Test {
            purpose::VALIDATION
        } else {
            0
        };
    let n_pos = n / 2;
    gen.generate(n, tag, |i, rng| {
        gen.sample_example(
            &Target {
                strong: i < n_pos,
                weak: vec![],
            },
            split,
            Provenance::Base,
            rng,
        )
    })
}

pub fn write_jsonl<W: Write>(mut w: W, examples: &[Example]) -> Result<()> {
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Example = serde_json::from_str(&line).map_err(|err| Error::MalformedRecord {
            line: i + 1,
            reason: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Summary statistics over a dataset file, the verification surface for the
/// generator invariants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n: usize,
    pub k: usize,
    pub class_balance: f64,
    pub strong_rate: f64,
    pub weak_rate: Vec<f64>,
    pub weak_rate_given_strong: Vec<f64>,
    pub label_strong_mismatch: usize,
    pub region_counts: BTreeMap<String, usize>,
    pub provenance_counts: BTreeMap<String, usize>,
    pub distinct_symbols: usize,
    /// Examples whose strong-feature instance uses a symbol from the audited
    /// pool; `None` when no audit was requested.
    pub pool_violations: Option<usize>,
}

impl DatasetStats {
    pub fn compute(examples: &[Example]) -> Self {
        let n = examples.len();
        let k = examples.first().map_or(0, |e| e.weak_mask.len());
        let frac = |c: usize, d: usize| if d == 0 { 0.0 } else { c as f64 / d as f64 };
        let positives = examples.iter().filter(|e| e.label == 1).count();
        let strong = examples.iter().filter(|e| e.strong_present).count();
        let weak_rate = (0..k)
            .map(|i| {
                frac(
                    examples
                        .iter()
                        .filter(|e| e.weak_mask.get(i) == Some(&true))
                        .count(),
                    n,
                )
            })
            .collect();
        let mut region_counts = BTreeMap::new();
        let mut provenance_counts = BTreeMap::new();
        let mut symbols = std::collections::HashSet::new();
        for e in examples {
            *region_counts
                .entry(e.region().name().to_string())
                .or_insert(0) += 1;
            *provenance_counts
                .entry(e.provenance.to_string())
                .or_insert(0) += 1;
            symbols.extend(e.seq.symbols().iter().copied());
        }
        DatasetStats {
            n,
            k,
            class_balance: frac(positives, n),
            strong_rate: frac(strong, n),
            weak_rate,
            weak_rate_given_strong: weak_given_strong(examples, k),
            label_strong_mismatch: examples
                .iter()
                .filter(|e| (e.label == 1) != e.strong_present)
                .count(),
            region_counts,
            provenance_counts,
            distinct_symbols: symbols.len(),
            pool_violations: None,
        }
    }
}

/// Counts examples whose strong-feature instance is built from a symbol in
/// `forbidden`. Symbol-presence features are exempt (their pool is the symbol itself).
pub fn audit_pool(examples: &[Example], strong: &[FeatureKind], forbidden: &SymbolPool) -> usize {
    examples
        .iter()
        .filter(|e| {
            strong.iter().any(|f| {
                f.reserved_symbol().is_none()
                    && f.witnesses(e.seq.symbols())
                        .iter()
                        .any(|&s| forbidden.contains(s))
            })
        })
        .count()
}
