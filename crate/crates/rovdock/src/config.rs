//! Scenario files.
//!
//! A scenario file is TOML with a top-level `schema_version`, an optional
//! `layout_file`, an optional `[batch]` table and a `[scenario]` table.
//! Scenario keys left out take the defaults of the chosen `site` profile.
//! Unknown keys anywhere are errors.
//!
//! ```toml
//! schema_version = 1
//! layout_file = "deep_station.toml"
//!
//! [batch]
//! base_seed = 0
//! seeds = 10
//! approaches = ["front", "left", "right"]
//!
//! [scenario]
//! site = "DEEP_90M"
//! mode = "docking"
//! stand_off = 2.0
//!
//! [scenario.fish]
//! enabled = true
//! ```

use std::path::{Path, PathBuf};

use rovdock_core::scenario::{Approach, ScenarioConfig, SiteProfile};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::layout_doc::load_layout_file;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSpec {
    pub base_seed: u64,
    /// Trials per approach.
    pub seeds: usize,
    pub approaches: Vec<Approach>,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            base_seed: 0,
            seeds: 10,
            approaches: Approach::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    /// Layout document, relative to the scenario file. Replaces
    /// `scenario.layout`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_file: Option<PathBuf>,
    #[serde(default)]
    pub batch: BatchSpec,
    pub scenario: ScenarioConfig,
}

impl ScenarioFile {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            layout_file: None,
            batch: BatchSpec::default(),
            scenario,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Overlays `over` onto `base`, recursing into tables.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses scenario-file text. `base_dir` resolves `layout_file`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ScenarioFile> {
    let raw: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    match raw.get("schema_version").and_then(|v| v.as_integer()) {
        Some(v) if v == CONFIG_SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(HarnessError::SchemaMismatch(format!(
                "scenario file version {v}, expected {CONFIG_SCHEMA_VERSION}"
            )))
        }
        None => {
            return Err(HarnessError::Config(
                "missing integer schema_version".into(),
            ))
        }
    }
    let site = match raw.get("scenario").and_then(|s| s.get("site")) {
        Some(v) => {
            SiteProfile::deserialize(v.clone()).map_err(|e| HarnessError::Config(e.to_string()))?
        }
        None => SiteProfile::Deep90m,
    };
    let base = ScenarioConfig::for_profile(site);
    let mut merged = toml::Value::try_from(ScenarioFile::new(base))
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if let toml::Value::Table(t) = &mut merged {
        t.remove("batch");
    }
    merge(&mut merged, toml::Value::Table(raw));
    let mut file: ScenarioFile = merged
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    if let Some(rel) = &file.layout_file {
        file.scenario.layout = load_layout_file(&base_dir.join(rel))?;
        let depth = file.scenario.station_depth();
        file.scenario.set_station_depth(depth);
    }
    file.scenario.validate().map_err(HarnessError::Config)?;
    Ok(file)
}

pub fn load_config(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}
