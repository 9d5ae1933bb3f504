//! Run configuration: a flat JSON object holding the data paths plus every
//! `TrainConfig` field.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rebalcl::corpus::{load_corpus, Dataset};
use rebalcl::trainer::TrainConfig;
use serde_json::{Map, Value};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: PathBuf,
    pub augmented: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub num_classes: usize,
    pub train_config: TrainConfig,
}

fn path_field(map: &mut Map<String, Value>, key: &str, base: &Path) -> Result<Option<PathBuf>> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => {
            let p = PathBuf::from(s);
            Ok(Some(if p.is_absolute() { p } else { base.join(p) }))
        }
        Some(other) => bail!("config key {key:?} must be a path string, got {other}"),
    }
}

impl RunConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_value(value, base, seed_override).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_value(value: Value, base: &Path, seed_override: Option<u64>) -> Result<Self> {
        let Value::Object(mut map) = value else {
            bail!("config must be a JSON object");
        };
        let train = path_field(&mut map, "train", base)?.context("config key \"train\" is required")?;
        let augmented = path_field(&mut map, "augmented", base)?;
        let eval = path_field(&mut map, "eval", base)?;
        let num_classes = match map.remove("num_classes") {
            Some(Value::Number(n)) => n.as_u64().context("num_classes must be a positive integer")? as usize,
            Some(other) => bail!("num_classes must be an integer, got {other}"),
            None => bail!("config key \"num_classes\" is required"),
        };
        let mut train_config: TrainConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        if let Some(seed) = seed_override {
            train_config.seed = seed;
        }
        train_config.validate()?;
        Ok(Self {
            train,
            augmented,
            eval,
            num_classes,
            train_config,
        })
    }

    /// Flat snapshot with absolute paths; loading it reproduces the run.
    pub fn snapshot(&self) -> Result<Value> {
        let Value::Object(mut map) = serde_json::to_value(&self.train_config)? else {
            unreachable!("TrainConfig serializes to an object");
        };
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string();
        map.insert("train".into(), Value::String(abs(&self.train)));
        if let Some(p) = &self.augmented {
            map.insert("augmented".into(), Value::String(abs(p)));
        }
        if let Some(p) = &self.eval {
            map.insert("eval".into(), Value::String(abs(p)));
        }
        map.insert("num_classes".into(), Value::from(self.num_classes));
        Ok(Value::Object(map))
    }

    /// Training pool: originals followed by augmented views when given.
    pub fn load_train(&self) -> Result<Dataset> {
        let train = load_corpus(&self.train, self.num_classes)?;
        Ok(match &self.augmented {
            Some(p) => train.concat(&load_corpus(p, self.num_classes)?)?,
            None => train,
        })
    }

    pub fn load_eval(&self) -> Result<Option<Dataset>> {
        Ok(match &self.eval {
            Some(p) => Some(load_corpus(p, self.num_classes)?),
            None => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn splits_data_and_training_keys() {
        let v = json!({"train": "a.tsv", "eval": "/abs/b.tsv", "num_classes": 3, "epochs": 2, "tau": 0.3});
        let c = RunConfig::from_value(v, Path::new("/base"), Some(9)).unwrap();
        assert_eq!(c.train, PathBuf::from("/base/a.tsv"));
        assert_eq!(c.eval, Some(PathBuf::from("/abs/b.tsv")));
        assert_eq!(c.train_config.epochs, 2);
        assert_eq!(c.train_config.seed, 9);
        let snap = c.snapshot().unwrap();
        let again = RunConfig::from_value(snap, Path::new("/elsewhere"), None).unwrap();
        assert_eq!(again.train_config, c.train_config);
        assert_eq!(again.train, c.train);
    }

    #[test]
    fn unknown_key_is_named() {
        let v = json!({"train": "a.tsv", "num_classes": 2, "epochz": 3});
        let err = RunConfig::from_value(v, Path::new("."), None).unwrap_err();
        assert!(format!("{err:#}").contains("epochz"));
    }

    #[test]
    fn missing_required_keys() {
        assert!(RunConfig::from_value(json!({"num_classes": 2}), Path::new("."), None).is_err());
        assert!(RunConfig::from_value(json!({"train": "x"}), Path::new("."), None).is_err());
        assert!(RunConfig::from_value(json!({"train": "x", "num_classes": 2, "tau": 0}), Path::new("."), None).is_err());
    }
}
