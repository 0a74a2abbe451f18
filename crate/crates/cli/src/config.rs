//! Layered settings: built-in defaults, then a JSON file with flat dotted keys, then flags.
//!
//! ```json
//! { "train.learning_rate": 0.001, "train.model.hidden": 64, "dbn.min_bpm": 60, "eval.trim_s": null }
//! ```
//!
//! Top-level sections are `train`, `dbn`, `synth` and `eval`. Nested objects are flattened, so
//! `{"dbn": {"min_bpm": 60}}` is accepted too. Unknown keys are rejected.

use std::path::Path;

use beatagg::io::SynthSpec;
use beatagg::metrics::EvalConfig;
use beatagg::{DbnConfig, Error, Result, TrainConfig};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub dbn: DbnConfig,
    pub synth: SynthSpec,
    pub eval: EvalConfig,
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn set_path(root: &mut Value, key: &str, path: &[&str], value: Value) -> Result<()> {
    let unknown = || Error::Config(format!("unknown configuration key {key:?}"));
    let (last, parents) = path.split_last().ok_or_else(unknown)?;
    let mut node = root;
    for p in parents {
        node = node.get_mut(*p).filter(|n| n.is_object()).ok_or_else(unknown)?;
    }
    let slot = node.as_object_mut().and_then(|m| m.get_mut(*last)).ok_or_else(unknown)?;
    *slot = value;
    Ok(())
}

fn section<T>(base: &T, overrides: &[(String, Vec<&str>, Value)], name: &str) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    for (key, path, value) in overrides.iter().filter(|(_, p, _)| p[0] == name) {
        set_path(&mut v, key, &path[1..], value.clone())?;
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("section {name}: {e}")))
}

impl Settings {
    /// Applies a JSON object of dotted keys on top of `self`.
    pub fn apply_json(&self, text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let Value::Object(map) = root else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let mut flat = Vec::new();
        flatten("", &Value::Object(Map::from_iter(map)), &mut flat);
        let parsed: Vec<(String, Vec<&str>, Value)> = flat
            .iter()
            .map(|(k, v)| (k.clone(), k.split('.').collect(), v.clone()))
            .collect();
        for (key, path, _) in &parsed {
            if path.len() < 2 || !["train", "dbn", "synth", "eval"].contains(&path[0]) {
                return Err(Error::Config(format!(
                    "unknown configuration key {key:?} (expected train.*, dbn.*, synth.* or eval.*)"
                )));
            }
        }
        Ok(Self {
            train: section(&self.train, &parsed, "train")?,
            dbn: section(&self.dbn, &parsed, "dbn")?,
            synth: section(&self.synth, &parsed, "synth")?,
            eval: section(&self.eval, &parsed, "eval")?,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let base = Self::default();
        match path {
            None => Ok(base),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                base.apply_json(&text)
            }
        }
    }
}
