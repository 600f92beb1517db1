//! Model configuration, flat parameter storage and the checkpoint format.
//!
//! Every trainable value lives in one contiguous vector. Groups are laid out
//! in this order:
//!
//! | group            | shape                   |
//! |------------------|-------------------------|
//! | embedding        | vocab × embed           |
//! | lstm input       | embed × 4·hidden        |
//! | lstm recurrent   | hidden × 4·hidden       |
//! | lstm bias        | 4·hidden                |
//! | mlp weight       | hidden × mlp            |
//! | mlp bias         | mlp                     |
//! | output weight    | mlp                     |
//! | output bias      | 1                       |
//!
//! Gate blocks inside the LSTM matrices are ordered input, forget, cell, output.
//!
//! Checkpoints are little-endian: the 8-byte magic `FCLSCKPT`, a `u32`
//! version (1), a `u32` scalar width in bytes (4 or 8), five `u64` dims
//! (vocab, embed, hidden, mlp, seq_len), a `u64` value count, then the values
//! in flat-index order.

use std::io::{Read, Write};
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: usize,
    pub seq_len: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, dim: usize, seq_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: dim,
            hidden_dim: dim,
            mlp_hidden: dim,
            seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("seq_len", self.seq_len),
        ] {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embedding,
    LstmInput,
    LstmRecurrent,
    LstmBias,
    MlpWeight,
    MlpBias,
    OutWeight,
    OutBias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Embedding,
        ParamGroup::LstmInput,
        ParamGroup::LstmRecurrent,
        ParamGroup::LstmBias,
        ParamGroup::MlpWeight,
        ParamGroup::MlpBias,
        ParamGroup::OutWeight,
        ParamGroup::OutBias,
    ];

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamGroup::LstmBias | ParamGroup::MlpBias | ParamGroup::OutBias
        )
    }
}

/// Offsets of each parameter group inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    ranges: [Range<usize>; 8],
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let g = 4 * c.hidden_dim;
        let sizes = [
            c.vocab_size * c.embed_dim,
            c.embed_dim * g,
            c.hidden_dim * g,
            g,
            c.hidden_dim * c.mlp_hidden,
            c.mlp_hidden,
            c.mlp_hidden,
            1,
        ];
        let mut start = 0;
        let ranges = sizes.map(|s| {
            let r = start..start + s;
            start += s;
            r
        });
        Layout { ranges }
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        self.ranges[group as usize].clone()
    }

    pub fn total(&self) -> usize {
        self.ranges[7].end
    }

    pub fn group_of(&self, index: usize) -> Option<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .find(|&g| self.range(g).contains(&index))
    }
}

/// All trainable weights, addressable by a single flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub values: Vec<T>,
    layout: Layout,
}

/// Gradients share the parameter layout exactly.
pub type Gradients<T> = ModelParams<T>;

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: ModelConfig) -> Self {
        let layout = config.layout();
        ModelParams {
            config,
            values: vec![T::zero(); layout.total()],
            layout,
        }
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    ///
    /// An embedding lookup is a one-hot product with exactly one active
    /// input, so the embedding uses `fan_in = 1`.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let fan_in = |g: ParamGroup| -> Option<usize> {
            match g {
                ParamGroup::Embedding => Some(1),
                ParamGroup::LstmInput => Some(config.embed_dim),
                ParamGroup::LstmRecurrent => Some(config.hidden_dim),
                ParamGroup::MlpWeight => Some(config.hidden_dim),
                ParamGroup::OutWeight => Some(config.mlp_hidden),
                _ => None,
            }
        };
        for g in ParamGroup::ALL {
            if let Some(f) = fan_in(g) {
                let bound = 1.0 / (f as f64).sqrt();
                for v in p.group_mut(g) {
                    *v = T::of(rng.random_range(-bound..bound));
                }
            }
        }
        p
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group(&self, g: ParamGroup) -> &[T] {
        &self.values[self.layout.range(g)]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [T] {
        let r = self.layout.range(g);
        &mut self.values[r]
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Converts to another precision, e.g. `f64` params to `f32` for training.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        let mut buf = Vec::with_capacity(64 + self.values.len() * T::WIDTH);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(T::WIDTH as u32).to_le_bytes());
        for d in [
            c.vocab_size,
            c.embed_dim,
            c.hidden_dim,
            c.mlp_hidden,
            c.seq_len,
        ] {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for &v in &self.values {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 64 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
        if u32_at(8) != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        if u32_at(12) as usize != T::WIDTH {
            return Err(bad("scalar width does not match requested precision"));
        }
        let config = ModelConfig {
            vocab_size: u64_at(16),
            embed_dim: u64_at(24),
            hidden_dim: u64_at(32),
            mlp_hidden: u64_at(40),
            seq_len: u64_at(48),
        };
        config.validate()?;
        let count = u64_at(56);
        let mut p = Self::zeros(config);
        if count != p.len() || bytes.len() != 64 + count * T::WIDTH {
            return Err(bad("value count does not match dims"));
        }
        for (i, chunk) in bytes[64..].chunks_exact(T::WIDTH).enumerate() {
            p.values[i] = T::read_le(chunk);
        }
        Ok(p)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FCLSCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            embed_dim: 3,
            hidden_dim: 4,
            mlp_hidden: 5,
            seq_len: 5,
        }
    }

    #[test]
    fn layout_covers_every_index_once() {
        let l = cfg().layout();
        let mut next = 0;
        for g in ParamGroup::ALL {
            let r = l.range(g);
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, l.total());
        assert_eq!(l.total(), 11 * 3 + 3 * 16 + 4 * 16 + 16 + 4 * 5 + 5 + 5 + 1);
        assert_eq!(l.group_of(0), Some(ParamGroup::Embedding));
        assert_eq!(l.group_of(l.total() - 1), Some(ParamGroup::OutBias));
        assert_eq!(l.group_of(l.total()), None);
    }

    #[test]
    fn init_zero_biases_bounded_weights_deterministic() {
        let c = cfg();
        let a = ModelParams::<f64>::init(c, &mut ChaCha8Rng::seed_from_u64(42));
        let b = ModelParams::<f64>::init(c, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        for g in ParamGroup::ALL {
            if g.is_bias() {
                assert!(a.group(g).iter().all(|&v| v == 0.0));
            }
        }
        assert!(a
            .group(ParamGroup::LstmInput)
            .iter()
            .all(|v| v.abs() <= 1.0 / 3f64.sqrt()));
        assert!(a
            .group(ParamGroup::LstmRecurrent)
            .iter()
            .all(|v| v.abs() <= 0.5));
        assert!(a
            .group(ParamGroup::OutWeight)
            .iter()
            .all(|v| v.abs() <= 1.0 / 5f64.sqrt()));
        assert!(a
            .group(ParamGroup::Embedding)
            .iter()
            .all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let p = ModelParams::<f32>::init(cfg(), &mut ChaCha8Rng::seed_from_u64(1));
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(buf.len(), 64 + p.len() * 4);
        let q = ModelParams::<f32>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert!(ModelParams::<f64>::read_checkpoint(&buf[..]).is_err());
        assert!(ModelParams::<f32>::read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(ModelParams::<f32>::read_checkpoint(&corrupt[..]).is_err());
    }
}
