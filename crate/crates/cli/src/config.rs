//! Config files are TOML tables laid over profile defaults; unknown keys are errors.

use std::path::Path;

use featclash_core::experiments::{
    dataset_defaults, probe_config, EarlyStopSet, Precision, Profile,
};
use featclash_core::trainer::ProbeConfig;
use featclash_core::{DatasetConfig, Error, Result, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::Table;

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Serializes `defaults`, overlays `over`, and deserializes the result.
fn overlay<T: Serialize + DeserializeOwned>(
    defaults: &T,
    over: Option<Table>,
    what: &str,
) -> Result<T> {
    let mut base = Table::try_from(defaults).map_err(|e| Error::config(format!("{what}: {e}")))?;
    if let Some(o) = over {
        merge(&mut base, o);
    }
    T::deserialize(toml::Value::Table(base)).map_err(|e| Error::config(format!("{what}: {e}")))
}

pub fn dataset_config(
    path: Option<&Path>,
    profile: Profile,
    seed: Option<u64>,
) -> Result<DatasetConfig> {
    let over = path.map(read_table).transpose()?;
    let mut c = overlay(&dataset_defaults(profile), over, "dataset config")?;
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

/// Settings of the `train` command besides the dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub dim: usize,
    pub precision: Precision,
    pub early_stop_set: EarlyStopSet,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub dataset: DatasetConfig,
    #[serde(flatten)]
    pub settings: TrainSettings,
}

pub fn train_config(
    path: Option<&Path>,
    profile: Profile,
    seed: Option<u64>,
) -> Result<TrainCommandConfig> {
    let defaults = TrainCommandConfig {
        dataset: dataset_defaults(profile),
        settings: TrainSettings {
            dim: profile.dim(),
            precision: Precision::F32,
            early_stop_set: EarlyStopSet::Validation,
            train: TrainConfig::default(),
        },
    };
    let over = path.map(read_table).transpose()?;
    let mut c = overlay(&defaults, over, "train config")?;
    if let Some(s) = seed {
        c.dataset.seed = s;
        c.settings.train.seed = s;
    }
    c.dataset.validate()?;
    c.settings.train.validate()?;
    Ok(c)
}

pub fn probe(path: Option<&Path>, profile: Profile, seed: Option<u64>) -> Result<ProbeConfig> {
    let over = path.map(read_table).transpose()?;
    let mut c = overlay(&probe_config(profile), over, "probe config")?;
    if let Some(s) = seed {
        c.seeds = vec![s];
    }
    c.model.validate()?;
    c.train.validate()?;
    if c.model.vocab_size != c.vocab_size || c.model.seq_len != c.seq_len {
        return Err(Error::config(
            "probe model vocab_size/seq_len must match the probe data",
        ));
    }
    Ok(c)
}
