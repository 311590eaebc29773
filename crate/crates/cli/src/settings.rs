//! Config files with `KEY=VALUE` overrides applied before deserialization,
//! so overridden keys get the same unknown-key checks as the file.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::ConfigArgs;
use onset_core::RunConfig;

/// Sets `path` (dot-separated) in `root`. Values parse as JSON, falling back
/// to a plain string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not KEY=VALUE"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    bail!("empty override key")
}

/// Loads `file` (or `base` when absent) and applies the overrides.
pub fn load<T: Serialize + DeserializeOwned>(file: Option<&Path>, base: &T, overrides: &[String]) -> Result<T> {
    let mut value = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("{}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}", p.display()))?
        }
        None => serde_json::to_value(base)?,
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).context("invalid configuration")
}

pub fn run_config(args: &ConfigArgs) -> Result<RunConfig> {
    let cfg: RunConfig = load(args.config.as_deref(), &RunConfig::default(), &args.overrides)?;
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let mut v = serde_json::json!({"a": {"b": 1}});
        apply_override(&mut v, "a.b=2.5").unwrap();
        apply_override(&mut v, "a.c=[1,2]").unwrap();
        apply_override(&mut v, "name=STRONG").unwrap();
        assert_eq!(v, serde_json::json!({"a": {"b": 2.5, "c": [1, 2]}, "name": "STRONG"}));
        assert!(apply_override(&mut v, "name.x=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn unknown_override_key_is_rejected() {
        let args = ConfigArgs {
            config: None,
            overrides: vec!["bogus=1".into()],
        };
        assert!(run_config(&args).is_err());
        let args = ConfigArgs {
            config: None,
            overrides: vec!["vocabulary=16".into(), "sgd.epochs=3".into()],
        };
        let cfg = run_config(&args).unwrap();
        assert_eq!((cfg.vocabulary, cfg.sgd.epochs), (16, 3));
    }
}
