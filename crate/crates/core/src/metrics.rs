//! Four-region conditional error rates and percentile bootstrap intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Example;
use crate::rng::{self, purpose};

/// Test partition by presence of the strong feature and of any weak feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    WeakOnly = 0,
    StrongOnly = 1,
    Both = 2,
    Neither = 3,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::WeakOnly,
        Region::StrongOnly,
        Region::Both,
        Region::Neither,
    ];

    pub fn of(strong: bool, any_weak: bool) -> Region {
        match (strong, any_weak) {
            (false, true) => Region::WeakOnly,
            (true, false) => Region::StrongOnly,
            (true, true) => Region::Both,
            (false, false) => Region::Neither,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Region::WeakOnly => "weak-only",
            Region::StrongOnly => "strong-only",
            Region::Both => "both",
            Region::Neither => "neither",
        }
    }

    /// The prediction that counts as an error in this region.
    pub fn wrong_prediction(&self) -> u8 {
        match self {
            Region::WeakOnly | Region::Neither => 1,
            Region::StrongOnly | Region::Both => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegionCount {
    pub errors: usize,
    pub count: usize,
}

impl RegionCount {
    /// `None` marks an empty region; an empty region never reads as zero error.
    pub fn rate(&self) -> Option<f64> {
        (self.count > 0).then(|| self.errors as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegionErrorReport {
    pub weak_only: RegionCount,
    pub strong_only: RegionCount,
    pub both: RegionCount,
    pub neither: RegionCount,
}

impl RegionErrorReport {
    pub fn get(&self, r: Region) -> &RegionCount {
        match r {
            Region::WeakOnly => &self.weak_only,
            Region::StrongOnly => &self.strong_only,
            Region::Both => &self.both,
            Region::Neither => &self.neither,
        }
    }

    fn get_mut(&mut self, r: Region) -> &mut RegionCount {
        match r {
            Region::WeakOnly => &mut self.weak_only,
            Region::StrongOnly => &mut self.strong_only,
            Region::Both => &mut self.both,
            Region::Neither => &mut self.neither,
        }
    }

    pub fn rate(&self, r: Region) -> Option<f64> {
        self.get(r).rate()
    }

    pub fn total(&self) -> usize {
        Region::ALL.iter().map(|&r| self.get(r).count).sum()
    }
}

/// Assigns every example to its region and counts region-specific errors.
pub fn region_errors(predictions: &[u8], examples: &[Example]) -> RegionErrorReport {
    assert_eq!(
        predictions.len(),
        examples.len(),
        "predictions must align with examples"
    );
    let mut report = RegionErrorReport::default();
    for (&p, e) in predictions.iter().zip(examples) {
        let r = e.region();
        let slot = report.get_mut(r);
        slot.count += 1;
        slot.errors += usize::from(p == r.wrong_prediction());
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub iterations: usize,
}

/// Smallest value whose empirical CDF reaches `q` in an ascending slice.
pub fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Bootstrap distribution of the mean: `iterations` resamples with replacement, sorted.
pub fn bootstrap_means<R: Rng + ?Sized>(
    values: &[f64],
    iterations: usize,
    rng: &mut R,
) -> Vec<f64> {
    let n = values.len();
    let mut means: Vec<f64> = (0..iterations)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    means
}

/// Percentile bootstrap interval for the mean of `values`; endpoints are the
/// `(1 - level) / 2` and `(1 + level) / 2` quantiles of the resampled means.
pub fn bootstrap_ci(values: &[f64], iterations: usize, level: f64, seed: u64) -> IntervalEstimate {
    assert!(!values.is_empty(), "bootstrap needs at least one value");
    assert!(iterations > 0 && level > 0.0 && level < 1.0);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let means = bootstrap_means(
        values,
        iterations,
        &mut rng::stream(seed, purpose::BOOTSTRAP, 0),
    );
    let alpha = (1.0 - level) / 2.0;
    IntervalEstimate {
        mean,
        lower: lower_quantile(&means, alpha),
        upper: lower_quantile(&means, 1.0 - alpha),
        level,
        iterations,
    }
}
