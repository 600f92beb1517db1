//! Mini-batch training with early stopping, four-region evaluation and the
//! hardness probe.

use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{build_hardness_dataset, Example, Split, TestRegions};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::metrics::{region_errors, RegionErrorReport};
use crate::neural::{bce_loss, predict_label, Adam, AdamConfig, ModelConfig, ModelParams, Real};
use crate::rng::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStopMetric {
    ValidationError,
    ValidationLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
    pub early_stop_metric: EarlyStopMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            lr: 1e-3,
            seed: 42,
            early_stop_metric: EarlyStopMetric::ValidationError,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("train.patience must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Validation error and loss of the untrained model.
    pub initial_val_error: f64,
    pub initial_val_loss: f64,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub wall_time_s: f64,
    pub hit_epoch_cap: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// Validation error curve including the untrained model as epoch 0.
    pub fn error_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_val_error)
            .chain(self.epochs.iter().map(|r| r.val_error))
            .collect()
    }

    pub fn loss_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_val_loss)
            .chain(self.epochs.iter().map(|r| r.val_loss))
            .collect()
    }

    /// One record per line: `epoch, train_loss, val_error, val_loss`; epoch 0
    /// is the untrained model and has a null training loss.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line {
            epoch: usize,
            train_loss: Option<f64>,
            val_error: f64,
            val_loss: f64,
        }
        let first = Line {
            epoch: 0,
            train_loss: None,
            val_error: self.initial_val_error,
            val_loss: self.initial_val_loss,
        };
        serde_json::to_writer(&mut w, &first)?;
        w.write_all(b"\n")?;
        for r in &self.epochs {
            let line = Line {
                epoch: r.epoch,
                train_loss: Some(r.train_loss),
                val_error: r.val_error,
                val_loss: r.val_loss,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Patience-based stopping rule: a strictly lower metric is an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        self.epoch += 1;
        if metric < self.best {
            self.best = metric;
            self.best_epoch = self.epoch;
            StopDecision::Improved
        } else if self.epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

const EVAL_BATCH: usize = 1024;

pub fn predict_all<T: Real>(params: &ModelParams<T>, examples: &[Example]) -> Result<Vec<u8>> {
    Ok(logits_all(params, examples)?
        .into_iter()
        .map(predict_label)
        .collect())
}

fn logits_all<T: Real>(params: &ModelParams<T>, examples: &[Example]) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|e| e.seq.symbols()).collect();
        out.extend(params.logits(&seqs)?);
    }
    Ok(out)
}

/// `(error rate, mean loss)` against the examples' labels.
pub fn evaluate<T: Real>(params: &ModelParams<T>, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let logits = logits_all(params, examples)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let wrong = logits
        .iter()
        .zip(&labels)
        .filter(|(&z, &y)| predict_label(z) != y)
        .count();
    Ok((
        wrong as f64 / examples.len() as f64,
        bce_loss(&logits, &labels),
    ))
}

pub fn evaluate_regions<T: Real>(
    params: &ModelParams<T>,
    regions: &TestRegions,
) -> Result<RegionErrorReport> {
    let all = regions.all();
    let preds = predict_all(params, &all)?;
    Ok(region_errors(&preds, &all))
}

/// Trains from a seeded initialization and returns the parameters of the best epoch.
pub fn train<T: Real>(
    model: ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Example],
    validation: &[Example],
) -> Result<(ModelParams<T>, TrainHistory)> {
    model.validate()?;
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::config(
            "training and validation sets must be nonempty",
        ));
    }
    let start = Instant::now();
    let mut params = ModelParams::<T>::init(model, &mut rng::stream(cfg.seed, purpose::INIT, 0));
    let mut grads = ModelParams::<T>::zeros(model);
    let mut adam = Adam::new(
        params.len(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );

    let (initial_val_error, initial_val_loss) = evaluate(&params, validation)?;
    let mut best_params = params.clone();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut hit_epoch_cap = true;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng::stream(cfg.seed, purpose::SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[u32]> = idx.iter().map(|&i| train_set[i].seq.symbols()).collect();
            let labels: Vec<u8> = idx.iter().map(|&i| train_set[i].label).collect();
            let cache = params.forward(&seqs)?;
            loss_sum += bce_loss(&cache.logits, &labels) * idx.len() as f64;
            params.backward(&cache, &labels, &mut grads);
            adam.step(&mut params.values, &grads.values);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() || !params.all_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        let (val_error, val_loss) = evaluate(&params, validation)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_error,
            val_loss,
        });
        let metric = match cfg.early_stop_metric {
            EarlyStopMetric::ValidationError => val_error,
            EarlyStopMetric::ValidationLoss => val_loss,
        };
        match stopper.observe(metric) {
            StopDecision::Improved => best_params.clone_from(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                hit_epoch_cap = false;
                break;
            }
        }
        info!("epoch {epoch}: train_loss {train_loss:.5} val_error {val_error:.4} val_loss {val_loss:.5}");
    }
    if hit_epoch_cap {
        warn!(
            "epoch cap of {} reached before early stopping triggered",
            cfg.max_epochs
        );
    }
    let history = TrainHistory {
        epochs,
        initial_val_error,
        initial_val_loss,
        best_epoch: stopper.best_epoch(),
        wall_time_s: start.elapsed().as_secs_f64(),
        hit_epoch_cap,
    };
    Ok((best_params, history))
}

/// Replaces every entry after the first attainment of the minimum with that minimum.
pub fn flatline(curve: &[f64]) -> Vec<f64> {
    let Some(argmin) = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
    else {
        return vec![];
    };
    let min = curve[argmin];
    curve
        .iter()
        .enumerate()
        .map(|(i, &v)| if i > argmin { min } else { v })
        .collect()
}

/// Area under the flat-lined curve: the sum of its entries.
pub fn curve_auc(curve: &[f64]) -> f64 {
    flatline(curve).iter().sum()
}

/// Settings for the feature-hardness probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub seed: u64,
    pub error_auc: f64,
    pub loss_auc: f64,
    pub error_curve: Vec<f64>,
    pub loss_curve: Vec<f64>,
    pub best_epoch: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessResult {
    pub feature: FeatureKind,
    /// AUC of the seed-averaged validation error curve.
    pub error_auc: f64,
    pub loss_auc: f64,
    /// Seed-averaged curves before flat-lining.
    pub mean_error_curve: Vec<f64>,
    pub mean_loss_curve: Vec<f64>,
    pub runs: Vec<ProbeRun>,
}

/// Pointwise mean of curves of unequal length. Each curve is flat-lined
/// first and extended with its minimum, since a run that stopped early keeps
/// its best parameters for the remaining epochs.
pub fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut sum = vec![0.0; len];
    for c in curves {
        let flat = flatline(c);
        let tail = flat.last().copied().unwrap_or(0.0);
        for (i, s) in sum.iter_mut().enumerate() {
            *s += flat.get(i).copied().unwrap_or(tail);
        }
    }
    let n = curves.len().max(1) as f64;
    sum.into_iter().map(|v| v / n).collect()
}

/// Trains the standard model to detect `feature` once per seed, averages the
/// validation error curves (epoch 0 included), flat-lines the average at its
/// minimum and returns its sum. Validation positives are built from the
/// held-out symbol pool.
pub fn hardness_auc<T: Real>(feature: FeatureKind, cfg: &ProbeConfig) -> Result<HardnessResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::config("probe needs at least one seed"));
    }
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let train_set = build_hardness_dataset(
            feature,
            cfg.n_train,
            cfg.vocab_size,
            cfg.seq_len,
            Split::Train,
            seed,
        )?;
        let val = build_hardness_dataset(
            feature,
            cfg.n_val,
            cfg.vocab_size,
            cfg.seq_len,
            Split::Test,
            seed,
        )?;
        let tc = TrainConfig { seed, ..cfg.train };
        let (_, history) = train::<T>(cfg.model, &tc, &train_set, &val)?;
        let error_curve = history.error_curve();
        let loss_curve = history.loss_curve();
        runs.push(ProbeRun {
            seed,
            error_auc: curve_auc(&error_curve),
            loss_auc: curve_auc(&loss_curve),
            error_curve,
            loss_curve,
            best_epoch: history.best_epoch,
            wall_time_s: history.wall_time_s,
        });
    }
    let mean_error_curve = mean_curve(
        &runs
            .iter()
            .map(|r| r.error_curve.clone())
            .collect::<Vec<_>>(),
    );
    let mean_loss_curve = mean_curve(
        &runs
            .iter()
            .map(|r| r.loss_curve.clone())
            .collect::<Vec<_>>(),
    );
    Ok(HardnessResult {
        feature,
        error_auc: curve_auc(&mean_error_curve),
        loss_auc: curve_auc(&mean_loss_curve),
        mean_error_curve,
        mean_loss_curve,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Provenance;
    use crate::features::Sequence;
    use proptest::prelude::*;

    #[test]
    fn flatline_example() {
        assert_eq!(flatline(&[0.5, 0.0, 0.1]), vec![0.5, 0.0, 0.0]);
        assert_eq!(curve_auc(&[0.5, 0.0, 0.1]), 0.5);
        assert_eq!(flatline(&[0.4, 0.2, 0.2, 0.3]), vec![0.4, 0.2, 0.2, 0.2]);
        assert!(flatline(&[]).is_empty());
    }

    #[test]
    fn stopper_patience_one_stops_on_second_epoch() {
        let mut s = EarlyStopper::new(1);
        assert_eq!(s.observe(0.3), StopDecision::Improved);
        assert_eq!(s.observe(0.4), StopDecision::Stop);
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn stopper_counts_since_last_improvement() {
        let mut s = EarlyStopper::new(3);
        let seq = [0.5, 0.4, 0.45, 0.41, 0.39, 0.4, 0.4, 0.4];
        let d: Vec<StopDecision> = seq.iter().map(|&m| s.observe(m)).collect();
        use StopDecision::*;
        assert_eq!(
            d,
            vec![Improved, Improved, Continue, Continue, Improved, Continue, Continue, Stop]
        );
        assert_eq!(s.best_epoch(), 5);
    }

    proptest! {
        // Flat-lining at the global minimum is monotone under domination when
        // the dominating curve attains its minimum at the same epoch.
        #[test]
        fn auc_monotone_under_domination(
            base in prop::collection::vec(0.05f64..1.0, 1..30),
            bump in prop::collection::vec(0.0f64..0.5, 30),
            at in 0usize..30,
        ) {
            let argmin = at % base.len();
            let mut base = base;
            base[argmin] = 0.0;
            let mut upper: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            upper[argmin] = bump[argmin] * 0.1;
            prop_assume!(upper.iter().all(|&u| u >= upper[argmin]));
            prop_assert!(curve_auc(&upper) >= curve_auc(&base) - 1e-12);
        }
    }

    #[test]
    fn seed_curves_are_padded_with_their_minimum_before_averaging() {
        let m = mean_curve(&[vec![0.5, 0.1, 0.3], vec![0.4, 0.2]]);
        let want = [0.45, 0.15, 0.15];
        assert_eq!(m.len(), 3);
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{m:?}");
        }
        assert!((curve_auc(&m) - 0.75).abs() < 1e-12);
        assert!(mean_curve(&[]).is_empty());
    }

    #[test]
    fn global_minimum_flatline_is_not_a_running_minimum() {
        // A later, lower minimum keeps the earlier peak in the sum.
        assert!((curve_auc(&[0.1, 1.0, 0.05]) - 1.15).abs() < 1e-12);
        assert!((curve_auc(&[0.1, 1.0, 0.2]) - 0.3).abs() < 1e-12);
    }

    fn constant_set(n: usize, label: u8) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                seq: Sequence(vec![(i % 7) as u32 + 3, 4, 5]),
                label,
                strong_present: label == 1,
                weak_mask: vec![],
                provenance: Provenance::Base,
            })
            .collect()
    }

    #[test]
    fn constant_labels_converge_in_one_epoch() {
        let model = ModelConfig::new(12, 8, 3);
        let cfg = TrainConfig {
            max_epochs: 10,
            patience: 2,
            ..TrainConfig::default()
        };
        let (params, h) =
            train::<f64>(model, &cfg, &constant_set(640, 1), &constant_set(64, 1)).unwrap();
        assert_eq!(h.best_epoch, 1);
        assert_eq!(h.epochs[0].val_error, 0.0);
        assert_eq!(h.epochs.len(), 3);
        assert!(!h.hit_epoch_cap);
        assert_eq!(evaluate(&params, &constant_set(64, 1)).unwrap().0, 0.0);
    }

    #[test]
    fn empty_sets_rejected() {
        let model = ModelConfig::new(12, 4, 3);
        assert!(train::<f64>(model, &TrainConfig::default(), &[], &constant_set(4, 1)).is_err());
    }

    #[test]
    fn history_jsonl_has_epoch_zero() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.2,
                val_error: 0.1,
                val_loss: 0.3,
            }],
            initial_val_error: 0.5,
            initial_val_loss: 0.69,
            best_epoch: 1,
            wall_time_s: 0.0,
            hit_epoch_cap: false,
        };
        let mut buf = Vec::new();
        h.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"train_loss\":null"));
        assert_eq!(h.error_curve(), vec![0.5, 0.1]);
    }
}
