//! Forward and backward passes of the embedding → LSTM → MLP → logit classifier.
//!
//! Activations are stored time-major: block `t` of a per-step buffer holds the
//! `batch × width` matrix for step `t`.

use super::params::{Gradients, ModelParams, ParamGroup};
use super::real::{matmul, Real};
use crate::error::{Error, Result};

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    tokens: Vec<u32>,
    inputs: Vec<T>,
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hiddens: Vec<T>,
    mlp_pre: Vec<T>,
    mlp_act: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> ModelParams<T> {
    /// Runs the network on a batch of sequences, each of length `config.seq_len`.
    pub fn forward<S: AsRef<[u32]>>(&self, batch: &[S]) -> Result<ForwardCache<T>> {
        let c = self.config;
        let (bsz, steps) = (batch.len(), c.seq_len);
        let (d, h, m) = (c.embed_dim, c.hidden_dim, c.mlp_hidden);
        let g4 = 4 * h;

        let mut tokens = Vec::with_capacity(bsz * steps);
        for seq in batch {
            let seq = seq.as_ref();
            if seq.len() != steps {
                return Err(Error::config(format!(
                    "sequence length {} does not match model seq_len {steps}",
                    seq.len()
                )));
            }
            for &s in seq {
                if s as usize >= c.vocab_size {
                    return Err(Error::SymbolOutOfRange {
                        symbol: s,
                        vocab: c.vocab_size,
                    });
                }
            }
            tokens.extend_from_slice(seq);
        }

        let emb = self.group(ParamGroup::Embedding);
        let wx = self.group(ParamGroup::LstmInput);
        let wh = self.group(ParamGroup::LstmRecurrent);
        let bias = self.group(ParamGroup::LstmBias);

        let mut inputs = vec![T::zero(); steps * bsz * d];
        let mut gates = vec![T::zero(); steps * bsz * g4];
        let mut cells = vec![T::zero(); (steps + 1) * bsz * h];
        let mut tanh_cells = vec![T::zero(); steps * bsz * h];
        let mut hiddens = vec![T::zero(); (steps + 1) * bsz * h];

        for t in 0..steps {
            let x = &mut inputs[t * bsz * d..(t + 1) * bsz * d];
            for b in 0..bsz {
                let s = tokens[b * steps + t] as usize;
                x[b * d..(b + 1) * d].copy_from_slice(&emb[s * d..(s + 1) * d]);
            }
            let z = &mut gates[t * bsz * g4..(t + 1) * bsz * g4];
            for row in z.chunks_exact_mut(g4) {
                row.copy_from_slice(bias);
            }
            matmul(bsz, d, g4, x, false, wx, false, z, true);
            let (h_prev_all, h_next_all) = hiddens.split_at_mut((t + 1) * bsz * h);
            let h_prev = &h_prev_all[t * bsz * h..];
            matmul(bsz, h, g4, h_prev, false, wh, false, z, true);

            let (c_prev_all, c_next_all) = cells.split_at_mut((t + 1) * bsz * h);
            let c_prev = &c_prev_all[t * bsz * h..];
            let c_next = &mut c_next_all[..bsz * h];
            let h_next = &mut h_next_all[..bsz * h];
            let tc = &mut tanh_cells[t * bsz * h..(t + 1) * bsz * h];
            for b in 0..bsz {
                let zr = &mut z[b * g4..(b + 1) * g4];
                for j in 0..h {
                    let i_g = sigmoid(zr[j]);
                    let f_g = sigmoid(zr[h + j]);
                    let c_g = zr[2 * h + j].tanh();
                    let o_g = sigmoid(zr[3 * h + j]);
                    zr[j] = i_g;
                    zr[h + j] = f_g;
                    zr[2 * h + j] = c_g;
                    zr[3 * h + j] = o_g;
                    let k = b * h + j;
                    let cell = f_g * c_prev[k] + i_g * c_g;
                    c_next[k] = cell;
                    let tcell = cell.tanh();
                    tc[k] = tcell;
                    h_next[k] = o_g * tcell;
                }
            }
        }

        let h_last = &hiddens[steps * bsz * h..];
        let mut mlp_pre = vec![T::zero(); bsz * m];
        let b1 = self.group(ParamGroup::MlpBias);
        for row in mlp_pre.chunks_exact_mut(m) {
            row.copy_from_slice(b1);
        }
        matmul(
            bsz,
            h,
            m,
            h_last,
            false,
            self.group(ParamGroup::MlpWeight),
            false,
            &mut mlp_pre,
            true,
        );
        let mlp_act: Vec<T> = mlp_pre.iter().map(|&v| v.max(T::zero())).collect();
        let b2 = self.group(ParamGroup::OutBias)[0];
        let mut logits = vec![b2; bsz];
        matmul(
            bsz,
            m,
            1,
            &mlp_act,
            false,
            self.group(ParamGroup::OutWeight),
            false,
            &mut logits,
            true,
        );

        Ok(ForwardCache {
            batch: bsz,
            tokens,
            inputs,
            gates,
            cells,
            tanh_cells,
            hiddens,
            mlp_pre,
            mlp_act,
            logits,
        })
    }

    pub fn logits<S: AsRef<[u32]>>(&self, batch: &[S]) -> Result<Vec<T>> {
        Ok(self.forward(batch)?.logits)
    }

    /// Label 1 iff the logit is strictly positive.
    pub fn predict<S: AsRef<[u32]>>(&self, batch: &[S]) -> Result<Vec<u8>> {
        Ok(self.logits(batch)?.into_iter().map(predict_label).collect())
    }

    /// Gradient of mean binary cross-entropy w.r.t. every parameter, written into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: &[u8], grads: &mut Gradients<T>) {
        let c = self.config;
        let (bsz, steps) = (cache.batch, c.seq_len);
        let (d, h, m) = (c.embed_dim, c.hidden_dim, c.mlp_hidden);
        let g4 = 4 * h;
        assert_eq!(labels.len(), bsz, "one label per example");
        assert_eq!(grads.config, c, "gradient shape mismatch");
        grads.fill_zero();
        if bsz == 0 {
            return;
        }
        let scale = T::of(1.0 / bsz as f64);

        let dlogit: Vec<T> = cache
            .logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| (sigmoid(z) - T::of(y as f64)) * scale)
            .collect();

        grads.group_mut(ParamGroup::OutBias)[0] = dlogit.iter().copied().sum();
        matmul(
            m,
            bsz,
            1,
            &cache.mlp_act,
            true,
            &dlogit,
            false,
            grads.group_mut(ParamGroup::OutWeight),
            false,
        );

        let w2 = self.group(ParamGroup::OutWeight);
        let mut d_pre = vec![T::zero(); bsz * m];
        for b in 0..bsz {
            for j in 0..m {
                let k = b * m + j;
                if cache.mlp_pre[k] > T::zero() {
                    d_pre[k] = dlogit[b] * w2[j];
                }
            }
        }
        let h_last = &cache.hiddens[steps * bsz * h..];
        matmul(
            h,
            bsz,
            m,
            h_last,
            true,
            &d_pre,
            false,
            grads.group_mut(ParamGroup::MlpWeight),
            false,
        );
        {
            let db1 = grads.group_mut(ParamGroup::MlpBias);
            for row in d_pre.chunks_exact(m) {
                for (acc, &v) in db1.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
        }
        let mut dh = vec![T::zero(); bsz * h];
        matmul(
            bsz,
            m,
            h,
            &d_pre,
            false,
            self.group(ParamGroup::MlpWeight),
            true,
            &mut dh,
            false,
        );

        let wx = self.group(ParamGroup::LstmInput);
        let wh = self.group(ParamGroup::LstmRecurrent);
        let mut dc = vec![T::zero(); bsz * h];
        let mut dz = vec![T::zero(); bsz * g4];
        let mut dx = vec![T::zero(); bsz * d];
        let mut d_wx = vec![T::zero(); d * g4];
        let mut d_wh = vec![T::zero(); h * g4];
        let mut d_bias = vec![T::zero(); g4];
        let one = T::one();

        for t in (0..steps).rev() {
            let gates = &cache.gates[t * bsz * g4..(t + 1) * bsz * g4];
            let c_prev = &cache.cells[t * bsz * h..(t + 1) * bsz * h];
            let tc = &cache.tanh_cells[t * bsz * h..(t + 1) * bsz * h];
            for b in 0..bsz {
                let gr = &gates[b * g4..(b + 1) * g4];
                let dzr = &mut dz[b * g4..(b + 1) * g4];
                for j in 0..h {
                    let k = b * h + j;
                    let (i_g, f_g, c_g, o_g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let dcell = dc[k] + dh[k] * o_g * (one - tc[k] * tc[k]);
                    dzr[j] = dcell * c_g * i_g * (one - i_g);
                    dzr[h + j] = dcell * c_prev[k] * f_g * (one - f_g);
                    dzr[2 * h + j] = dcell * i_g * (one - c_g * c_g);
                    dzr[3 * h + j] = dh[k] * tc[k] * o_g * (one - o_g);
                    dc[k] = dcell * f_g;
                }
            }
            let x = &cache.inputs[t * bsz * d..(t + 1) * bsz * d];
            let h_prev = &cache.hiddens[t * bsz * h..(t + 1) * bsz * h];
            matmul(d, bsz, g4, x, true, &dz, false, &mut d_wx, true);
            matmul(h, bsz, g4, h_prev, true, &dz, false, &mut d_wh, true);
            for row in dz.chunks_exact(g4) {
                for (acc, &v) in d_bias.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
            matmul(bsz, g4, d, &dz, false, wx, true, &mut dx, false);
            {
                let demb = grads.group_mut(ParamGroup::Embedding);
                for b in 0..bsz {
                    let s = cache.tokens[b * steps + t] as usize;
                    for (acc, &v) in demb[s * d..(s + 1) * d]
                        .iter_mut()
                        .zip(&dx[b * d..(b + 1) * d])
                    {
                        *acc = *acc + v;
                    }
                }
            }
            if t > 0 {
                matmul(bsz, g4, h, &dz, false, wh, true, &mut dh, false);
            }
        }
        grads
            .group_mut(ParamGroup::LstmInput)
            .copy_from_slice(&d_wx);
        grads
            .group_mut(ParamGroup::LstmRecurrent)
            .copy_from_slice(&d_wh);
        grads
            .group_mut(ParamGroup::LstmBias)
            .copy_from_slice(&d_bias);
    }
}

#[inline]
pub fn predict_label<T: Real>(logit: T) -> u8 {
    u8::from(logit > T::zero())
}

/// Mean binary cross-entropy of sigmoid outputs, in the overflow-free form
/// `max(z, 0) - z·y + ln(1 + e^{-|z|})`.
pub fn bce_loss<T: Real>(logits: &[T], labels: &[u8]) -> f64 {
    assert_eq!(logits.len(), labels.len());
    if logits.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z.f64();
            z.max(0.0) - z * y as f64 + (-z.abs()).exp().ln_1p()
        })
        .sum();
    total / logits.len() as f64
}
