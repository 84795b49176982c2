use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mrf_accel::hardware::HardwareProfile;
use mrf_accel::mrf::DatasetSpec;
use mrf_accel::network::DEFAULT_WIDTHS;
use mrf_accel::train::TrainConfig;
use mrf_accel::NetworkConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Taken from the dataset when omitted.
    pub input_dim: Option<usize>,
    pub widths: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            input_dim: None,
            widths: DEFAULT_WIDTHS.to_vec(),
        }
    }
}

impl NetworkSection {
    pub fn build(&self, fallback_input_dim: usize) -> Result<NetworkConfig> {
        Ok(NetworkConfig::from_widths(
            self.input_dim.unwrap_or(fallback_input_dim),
            &self.widths,
        )?)
    }
}

/// Resolved configuration. Training defaults are the workstation regime
/// (20 epochs x 200 steps); any key in the file overrides them.
#[derive(Clone, Debug, PartialEq)]
pub struct FileConfig {
    pub network: NetworkSection,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub hardware: HardwareProfile,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            network: NetworkSection::default(),
            dataset: DatasetSpec::default(),
            train: TrainConfig::desk(),
            hardware: HardwareProfile::default(),
        }
    }
}

pub fn parse_value(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)?,
        _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    };
    Ok(value)
}

/// Keys present in `patch` replace those of `base`, recursively.
fn overlay<T: Serialize + DeserializeOwned>(
    base: &T,
    patch: Option<&serde_json::Value>,
) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(p) = patch {
        merge(&mut v, p);
    }
    Ok(serde_json::from_value(v)?)
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let value = parse_value(path)?;
        let Some(obj) = value.as_object() else {
            bail!("{}: expected a table of sections", path.display());
        };
        if let Some(k) = obj
            .keys()
            .find(|k| !["network", "dataset", "train", "hardware"].contains(&k.as_str()))
        {
            bail!("{}: unknown section `{k}`", path.display());
        }
        let d = Self::default();
        let cfg = Self {
            network: overlay(&d.network, obj.get("network")).context("[network]")?,
            dataset: overlay(&d.dataset, obj.get("dataset")).context("[dataset]")?,
            train: overlay(&d.train, obj.get("train")).context("[train]")?,
            hardware: overlay(&d.hardware, obj.get("hardware")).context("[hardware]")?,
        };
        cfg.hardware.validate()?;
        Ok(cfg)
    }
}

pub fn load_profile(path: &Path) -> Result<HardwareProfile> {
    let hp = overlay(&HardwareProfile::default(), Some(&parse_value(path)?))
        .with_context(|| format!("hardware profile {}", path.display()))?;
    hp.validate()?;
    Ok(hp)
}
