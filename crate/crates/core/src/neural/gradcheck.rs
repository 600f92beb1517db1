//! Central finite-difference verification of the analytic gradient.

use rand::Rng;

use super::lstm::bce_loss;
use super::params::{ModelParams, ParamGroup};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub group: ParamGroup,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordCheck {
    /// `|a - n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from dividing by zero.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

fn batch_loss<S: AsRef<[u32]>>(
    params: &ModelParams<f64>,
    batch: &[S],
    labels: &[u8],
) -> Result<f64> {
    Ok(bce_loss(&params.logits(batch)?, labels))
}

/// Compares backward against `(L(θ + h) - L(θ - h)) / 2h` at each index.
pub fn check_coords<S: AsRef<[u32]>>(
    params: &ModelParams<f64>,
    batch: &[S],
    labels: &[u8],
    indices: &[usize],
    h: f64,
) -> Result<Vec<CoordCheck>> {
    let cache = params.forward(batch)?;
    let mut grads = ModelParams::zeros(params.config);
    params.backward(&cache, labels, &mut grads);
    let layout = params.layout().clone();
    let mut probe = params.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.values[i];
            probe.values[i] = orig + h;
            let up = batch_loss(&probe, batch, labels)?;
            probe.values[i] = orig - h;
            let down = batch_loss(&probe, batch, labels)?;
            probe.values[i] = orig;
            Ok(CoordCheck {
                index: i,
                group: layout.group_of(i).expect("index inside layout"),
                analytic: grads.values[i],
                numeric: (up - down) / (2.0 * h),
            })
        })
        .collect()
}

/// Up to `per_group` random indices from every parameter group. Embedding
/// indices are restricted to rows of symbols that occur in `batch`, since all
/// other rows have an exactly zero gradient.
pub fn sample_coords<S: AsRef<[u32]>, R: Rng + ?Sized>(
    params: &ModelParams<f64>,
    batch: &[S],
    per_group: usize,
    rng: &mut R,
) -> Vec<usize> {
    let layout = params.layout();
    let d = params.config.embed_dim;
    let mut present: Vec<u32> = batch
        .iter()
        .flat_map(|s| s.as_ref().iter().copied())
        .collect();
    present.sort_unstable();
    present.dedup();
    let mut out = Vec::new();
    for g in ParamGroup::ALL {
        let r = layout.range(g);
        for _ in 0..per_group.min(r.len()) {
            let i = if g == ParamGroup::Embedding {
                let s = present[rng.random_range(0..present.len())] as usize;
                r.start + s * d + rng.random_range(0..d)
            } else {
                rng.random_range(r.clone())
            };
            out.push(i);
        }
    }
    out
}
