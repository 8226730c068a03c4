//! Run configuration: one JSON tree with `data`, `nets`, `em`, `deploy` and
//! `eval` sections. Omitted keys take defaults, unknown keys are rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::deploy::DeployConfig;
use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::seed::config_hash;
use crate::synth::DataConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetsConfig {
    /// Channel widths of the segmenter's encoder levels.
    pub seg_widths: Vec<usize>,
    /// Channel widths of the generator's hourglass levels.
    pub lpg_widths: Vec<usize>,
}

impl Default for NetsConfig {
    fn default() -> Self {
        Self { seg_widths: vec![16, 32, 64], lpg_widths: vec![16, 32] }
    }
}

impl NetsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("seg_widths", &self.seg_widths), ("lpg_widths", &self.lpg_widths)] {
            if w.is_empty() || w.contains(&0) {
                return Err(Error::Config(format!("nets.{name} must be a non-empty list of positive widths")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every component seed is derived from it by label.
    pub seed: u64,
    pub data: DataConfig,
    pub nets: NetsConfig,
    pub em: EmConfig,
    pub deploy: DeployConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            nets: NetsConfig::default(),
            em: EmConfig::default(),
            deploy: DeployConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.nets.validate()?;
        self.em.validate()?;
        self.deploy.validate()?;
        self.eval.validate()
    }

    /// Hash of the fully resolved configuration.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Resolves a configuration from an optional JSON document and a list of
    /// `path=value` overrides, applied in order.
    pub fn resolve(document: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
        Self::resolve_layers(document.as_slice(), overrides)
    }

    /// Like [`RunConfig::resolve`] with several documents merged in order.
    pub fn resolve_layers(documents: &[&str], overrides: &[String]) -> Result<RunConfig> {
        let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        for text in documents {
            let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
            if !user.is_object() {
                return Err(Error::Config("config must be a JSON object".into()));
            }
            merge(&mut tree, user);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Deep-merges `patch` into `base`; objects merge key by key, anything else
/// replaces. A tagged object whose `kind` changes is replaced whole.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if p.get("kind").is_none_or(|k| b.get("kind") == Some(k)) => {
            for (k, v) in p {
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

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form path=value")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{}` is not a section", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("non-empty path")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.em.n_stages, 3);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::resolve(
            Some(r#"{"em": {"n_stages": 2}}"#),
            &["em.n_stages=4".into(), "data.image_size=32".into(), "nets.seg_widths=[4,8]".into()],
        )
        .unwrap();
        assert_eq!(cfg.em.n_stages, 4);
        assert_eq!(cfg.data.image_size, 32);
        assert_eq!(cfg.nets.seg_widths, vec![4, 8]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::resolve(Some(r#"{"em": {"n_stagez": 2}}"#), &[]).unwrap_err().to_string();
        assert!(err.contains("n_stagez"), "{err}");
        let err = RunConfig::resolve(None, &["data.image_size=\"big\"".into()]).unwrap_err().to_string();
        assert!(err.contains("data.image_size"), "{err}");
        assert!(RunConfig::resolve(None, &["bogus".into()]).is_err());
    }

    #[test]
    fn optimizer_kind_can_change() {
        let cfg = RunConfig::resolve(
            Some(r#"{"em": {"m_step": {"optimizer": {"kind": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}}}}"#),
            &[],
        )
        .unwrap();
        assert_eq!(cfg.em.m_step.optimizer, crate::nets::OptimizerKind::adam());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::default().hash());
    }
}
