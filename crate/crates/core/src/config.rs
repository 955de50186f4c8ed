//! The run configuration document: `[train]`, `[model]` and `[rawboost]`
//! tables whose keys mirror [`TrainConfig`], [`ModelConfig`] and
//! [`RawBoostConfig`] field names, plus dotted `section.key=value`
//! overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::RawBoostConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub rawboost: RawBoostConfig,
}

const SECTIONS: [&str; 3] = ["train", "model", "rawboost"];

impl RunConfig {
    /// Parses a document and applies `overrides` (`section.key=value`, the
    /// value in TOML syntax; bare words are taken as strings) in order.
    /// Unknown sections and keys are rejected by name.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        for (section, value) in &doc {
            if !SECTIONS.contains(&section.as_str()) {
                return Err(Error::Config(format!(
                    "unknown key `{section}` (expected one of {})",
                    SECTIONS.join(", ")
                )));
            }
            let Some(table) = value.as_table() else {
                return Err(Error::Config(format!("`{section}` must be a table")));
            };
            check_section(section, table)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.rawboost.validate()
    }

    /// The resolved document, every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("the config types serialize to TOML")
    }
}

/// Names the offending key as `section.key` instead of relying on the
/// deserializer's message, which only knows the bare field name.
fn check_section(section: &str, table: &toml::Table) -> Result<()> {
    let one = |key: &str, value: &toml::Value| -> Result<()> {
        let mut t = toml::Table::new();
        t.insert(key.to_string(), value.clone());
        let v = toml::Value::Table(t);
        let res = match section {
            "train" => v.try_into::<TrainConfig>().map(drop),
            "model" => v.try_into::<ModelConfig>().map(drop),
            _ => v.try_into::<RawBoostConfig>().map(drop),
        };
        res.map_err(|e| {
            let msg = e.message();
            if msg.starts_with("unknown field") {
                Error::Config(format!("unknown key `{section}.{key}`"))
            } else {
                Error::Config(format!("invalid value for `{section}.{key}`: {msg}"))
            }
        })
    };
    table.iter().try_for_each(|(k, v)| one(k, v))
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not KEY=VALUE")))?;
    let parts: Vec<&str> = path.trim().split('.').collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!(
            "override key {path:?} must look like section.key"
        )));
    }
    let value = parse_value(raw.trim());
    let section = doc
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = section
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{}` must be a table", parts[0])))?;
    table.insert(parts[1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
