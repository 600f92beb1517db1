//! Feature predicates over symbol sequences and the planting routines that
//! realize them under symbol-pool constraints.
//!
//! Detection never looks at pools. Pools only restrict which symbols the
//! generator may use to instantiate a feature, which is how the train/test
//! symbol split is enforced.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Symbol = u32;

/// A fixed-length sequence of symbol ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<Symbol>);

impl Sequence {
    pub fn new(symbols: Vec<Symbol>) -> Self {
        Sequence(symbols)
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks the length and vocab bounds.
    pub fn validate(&self, seq_len: usize, vocab_size: usize) -> Result<()> {
        if self.0.len() != seq_len {
            return Err(Error::config(format!(
                "sequence has length {}, expected {seq_len}",
                self.0.len()
            )));
        }
        if let Some(&s) = self.0.iter().find(|&&s| s as usize >= vocab_size) {
            return Err(Error::SymbolOutOfRange {
                symbol: s,
                vocab: vocab_size,
            });
        }
        Ok(())
    }
}

impl From<Vec<Symbol>> for Sequence {
    fn from(v: Vec<Symbol>) -> Self {
        Sequence(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    /// The symbol occurs at some position.
    ContainsSymbol(Symbol),
    /// `seq[0] == seq[1]`.
    PrefixDuplicate,
    /// `seq[0] == seq[last]`.
    FirstLastDuplicate,
    /// Some `seq[i] == seq[i + 1]`.
    AdjacentDuplicate,
    /// `seq[0]` recurs at a later position.
    ContainsFirst,
}

impl FeatureKind {
    /// The five strong features of the benchmark, ordered from easiest to hardest.
    pub const STANDARD: [FeatureKind; 5] = [
        FeatureKind::ContainsSymbol(1),
        FeatureKind::PrefixDuplicate,
        FeatureKind::FirstLastDuplicate,
        FeatureKind::AdjacentDuplicate,
        FeatureKind::ContainsFirst,
    ];

    pub fn holds(&self, seq: &[Symbol]) -> bool {
        match *self {
            FeatureKind::ContainsSymbol(s) => seq.contains(&s),
            FeatureKind::PrefixDuplicate => seq.len() >= 2 && seq[0] == seq[1],
            FeatureKind::FirstLastDuplicate => seq.len() >= 2 && seq[0] == seq[seq.len() - 1],
            FeatureKind::AdjacentDuplicate => seq.windows(2).any(|w| w[0] == w[1]),
            FeatureKind::ContainsFirst => seq.len() >= 2 && seq[1..].contains(&seq[0]),
        }
    }

    /// The symbol behind every distinct instance of the feature in `seq`, one
    /// entry per instance. Empty iff the feature does not hold.
    pub fn witnesses(&self, seq: &[Symbol]) -> Vec<Symbol> {
        match *self {
            FeatureKind::ContainsSymbol(s) => seq.iter().filter(|&&x| x == s).copied().collect(),
            FeatureKind::PrefixDuplicate => {
                if self.holds(seq) {
                    vec![seq[0]]
                } else {
                    vec![]
                }
            }
            FeatureKind::FirstLastDuplicate => {
                if self.holds(seq) {
                    vec![seq[0]]
                } else {
                    vec![]
                }
            }
            FeatureKind::AdjacentDuplicate => seq
                .windows(2)
                .filter(|w| w[0] == w[1])
                .map(|w| w[0])
                .collect(),
            FeatureKind::ContainsFirst => match seq.split_first() {
                Some((&first, rest)) => rest
                    .iter()
                    .filter(|&&x| x == first)
                    .map(|_| first)
                    .collect(),
                None => vec![],
            },
        }
    }

    /// Number of positions the feature occupies when planted.
    pub fn footprint(&self) -> usize {
        match self {
            FeatureKind::ContainsSymbol(_) => 1,
            _ => 2,
        }
    }

    /// Symbol that must stay out of filler and pool use, if any.
    pub fn reserved_symbol(&self) -> Option<Symbol> {
        match *self {
            FeatureKind::ContainsSymbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::ContainsSymbol(1) => f.write_str("contains-1"),
            FeatureKind::ContainsSymbol(s) => write!(f, "contains-symbol:{s}"),
            FeatureKind::PrefixDuplicate => f.write_str("prefix-duplicate"),
            FeatureKind::FirstLastDuplicate => f.write_str("first-last-duplicate"),
            FeatureKind::AdjacentDuplicate => f.write_str("adjacent-duplicate"),
            FeatureKind::ContainsFirst => f.write_str("contains-first"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "contains-1" => FeatureKind::ContainsSymbol(1),
            "prefix-duplicate" => FeatureKind::PrefixDuplicate,
            "first-last-duplicate" => FeatureKind::FirstLastDuplicate,
            "adjacent-duplicate" => FeatureKind::AdjacentDuplicate,
            "contains-first" => FeatureKind::ContainsFirst,
            other => match other.strip_prefix("contains-symbol:") {
                Some(n) => FeatureKind::ContainsSymbol(
                    n.parse()
                        .map_err(|_| Error::UnknownFeature(other.to_string()))?,
                ),
                None => return Err(Error::UnknownFeature(other.to_string())),
            },
        })
    }
}

impl Serialize for FeatureKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sorted, deduplicated set of symbols.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolPool(Arc<Vec<Symbol>>);

impl SymbolPool {
    pub fn new(mut symbols: Vec<Symbol>) -> Self {
        symbols.sort_unstable();
        symbols.dedup();
        SymbolPool(Arc::new(symbols))
    }

    pub fn singleton(s: Symbol) -> Self {
        SymbolPool(Arc::new(vec![s]))
    }

    pub fn contains(&self, s: Symbol) -> bool {
        self.0.binary_search(&s).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Symbol> {
        if self.0.is_empty() {
            None
        } else {
            Some(self.0[rng.random_range(0..self.0.len())])
        }
    }

    pub fn is_disjoint(&self, other: &SymbolPool) -> bool {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.0.iter().all(|&s| !large.contains(s))
    }
}

/// A feature together with the symbols it may be instantiated with.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub pool: SymbolPool,
}

impl FeatureSpec {
    /// `ContainsSymbol(s)` always gets the pool `{s}`; other kinds use `pool`.
    pub fn new(kind: FeatureKind, pool: SymbolPool) -> Self {
        let pool = match kind {
            FeatureKind::ContainsSymbol(s) => SymbolPool::singleton(s),
            _ => pool,
        };
        FeatureSpec { kind, pool }
    }

    pub fn holds(&self, seq: &Sequence) -> bool {
        self.kind.holds(seq.symbols())
    }

    /// Plants the feature into a fresh copy of `seq`, treating every position as free.
    pub fn plant<R: Rng + ?Sized>(&self, seq: &Sequence, rng: &mut R) -> Result<Sequence> {
        let mut out = seq.clone();
        let mut occupied = vec![false; out.len()];
        self.plant_into(&mut out.0, &mut occupied, rng)?;
        Ok(out)
    }

    /// Writes the feature into free positions of `seq`, marking them occupied.
    /// Placement is uniform over the valid placements given `occupied`.
    pub fn plant_into<R: Rng + ?Sized>(
        &self,
        seq: &mut [Symbol],
        occupied: &mut [bool],
        rng: &mut R,
    ) -> Result<()> {
        debug_assert_eq!(seq.len(), occupied.len());
        let n = seq.len();
        let symbol = self.pool.sample(rng).ok_or_else(|| {
            Error::impossible(format!("empty instantiation pool for {}", self.kind))
        })?;
        let no_room = || Error::impossible(format!("no room to plant {} in length {n}", self.kind));
        let free = |i: usize| !occupied[i];

        let positions: Vec<usize> = match self.kind {
            FeatureKind::ContainsSymbol(_) => {
                let candidates: Vec<usize> = (0..n).filter(|&i| free(i)).collect();
                vec![*pick(&candidates, rng).ok_or_else(no_room)?]
            }
            FeatureKind::PrefixDuplicate => {
                if n < 2 || !free(0) || !free(1) {
                    return Err(no_room());
                }
                vec![0, 1]
            }
            FeatureKind::FirstLastDuplicate => {
                if n < 2 || !free(0) || !free(n - 1) {
                    return Err(no_room());
                }
                vec![0, n - 1]
            }
            FeatureKind::AdjacentDuplicate => {
                let candidates: Vec<usize> = (0..n.saturating_sub(1))
                    .filter(|&i| free(i) && free(i + 1))
                    .collect();
                let i = *pick(&candidates, rng).ok_or_else(no_room)?;
                vec![i, i + 1]
            }
            FeatureKind::ContainsFirst => {
                if n < 2 || !free(0) {
                    return Err(no_room());
                }
                let candidates: Vec<usize> = (1..n).filter(|&i| free(i)).collect();
                vec![0, *pick(&candidates, rng).ok_or_else(no_room)?]
            }
        };
        for p in positions {
            seq[p] = symbol;
            occupied[p] = true;
        }
        Ok(())
    }
}

fn pick<'a, T, R: Rng + ?Sized>(items: &'a [T], rng: &mut R) -> Option<&'a T> {
    if items.is_empty() {
        None
    } else {
        Some(&items[rng.random_range(0..items.len())])
    }
}
