//! Run configuration: training, world and evaluation settings plus paths,
//! read from a JSON file and overridden key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::eval::{AblationVariant, DEFAULT_HISTORY_EDGES};
use crate::reward::TrainConfig;
use crate::simulator::WorldSpec;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory holding the split files and embedding files.
    pub data_dir: Option<PathBuf>,
    /// Checkpoint to evaluate or inspect.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
    /// Per-epoch metrics log; defaults to `metrics.jsonl` in the output directory.
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    pub history_edges: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<AblationVariant>,
    pub sweep_sizes: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            history_edges: DEFAULT_HISTORY_EDGES.to_vec(),
            seeds: vec![0],
            variants: AblationVariant::ALL.to_vec(),
            sweep_sizes: vec![2, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub world: WorldSpec,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.world.validate()?;
        let e = &self.eval;
        if e.history_edges.is_empty() || e.history_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("eval.history_edges must be non-empty and increasing".into()));
        }
        if e.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if e.variants.is_empty() {
            return Err(Error::Config("eval.variants must not be empty".into()));
        }
        if e.sweep_sizes.is_empty() || e.sweep_sizes.contains(&0) {
            return Err(Error::Config("eval.sweep_sizes must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Every leaf key in dotted form, in declaration order.
    pub fn keys() -> Vec<String> {
        let mut out = Vec::new();
        collect_leaves(&serde_json::to_value(Self::default()).expect("config serializes"), "", &mut out);
        out
    }

    /// Sets the dotted `key` from its command-line text.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let slot = key
            .split('.')
            .try_fold(&mut tree, |node, part| node.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        *slot = parse_override(key, slot, raw);
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}

fn collect_leaves(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_leaves(child, &path, out);
            }
        }
        _ => out.push(prefix.to_owned()),
    }
}

fn parse_override(key: &str, current: &Value, raw: &str) -> Value {
    let as_json = || serde_json::from_str::<Value>(raw).ok();
    match current {
        Value::String(_) => Value::String(raw.to_owned()),
        Value::Null if key.starts_with("paths.") => Value::String(raw.to_owned()),
        Value::Array(_) => as_json().filter(Value::is_array).unwrap_or_else(|| {
            Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_owned())))
                    .collect(),
            )
        }),
        _ => as_json().unwrap_or_else(|| Value::String(raw.to_owned())),
    }
}

/// Command-line flag for a dotted config key: `train.commit_weight` becomes
/// `train.commit-weight`.
pub fn flag_for_key(key: &str) -> String {
    key.replace('_', "-")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::PersonaMode;

    #[test]
    fn keys_cover_nested_fields() {
        let keys = RunConfig::keys();
        for k in ["train.commit_weight", "train.window.window_len", "world.num_prototypes", "paths.data_dir", "eval.seeds"] {
            assert!(keys.iter().any(|x| x == k), "{k} missing");
        }
        let mut dedup = keys.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), keys.len());
    }

    #[test]
    fn overrides_parse_by_type() {
        let mut c = RunConfig::default();
        c.apply_override("train.commit_weight", "0.5").unwrap();
        c.apply_override("train.persona_mode", "continuous").unwrap();
        c.apply_override("eval.seeds", "1,2,3").unwrap();
        c.apply_override("eval.variants", "full,no_vq").unwrap();
        c.apply_override("paths.data_dir", "/tmp/x").unwrap();
        c.apply_override("train.window.stride", "2").unwrap();
        assert_eq!(c.train.commit_weight, 0.5);
        assert_eq!(c.train.persona_mode, PersonaMode::Continuous);
        assert_eq!(c.eval.seeds, vec![1, 2, 3]);
        assert_eq!(c.eval.variants, vec![AblationVariant::Full, AblationVariant::NoVq]);
        assert_eq!(c.paths.data_dir, Some(PathBuf::from("/tmp/x")));
        assert_eq!(c.train.window.stride, Some(2));
        assert!(c.apply_override("train.epochs", "many").is_err());
        assert!(c.apply_override("train.nope", "1").is_err());
    }

    #[test]
    fn unknown_file_keys_rejected() {
        let err = RunConfig::from_json(r#"{"train": {"comit_weight": 0.1}}"#, Path::new("c.json")).unwrap_err();
        assert!(err.to_string().contains("comit_weight"), "{err}");
        let ok = RunConfig::from_json(r#"{"world": {"seed": 4}}"#, Path::new("c.json")).unwrap();
        assert_eq!(ok.world.seed, 4);
        assert_eq!(ok.train, TrainConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json(), Path::new("x")).unwrap(), c);
        assert_eq!(flag_for_key("train.commit_weight"), "train.commit-weight");
    }
}
