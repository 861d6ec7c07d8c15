//! Run configuration files: UTF-8 key=value lines, `#` starts a comment.
//! Unknown keys are an error so typos never silently fall back to defaults.

use masformer::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Keys a config file may set. Commands use the subsets they need; an
/// unused-but-recognized key is harmless, an unrecognized one is fatal.
const ALLOWED_KEYS: &[&str] = &[
    // model
    "layers",
    "d_model",
    "n_heads",
    "d_ff",
    "vocab",
    "max_pos",
    "plan",
    "seed",
    // training
    "steps",
    "warmup_steps",
    "batch_size",
    "seq_len",
    "learning_rate",
    // task selection and data
    "task",
    "corpus",
    "text",
    // synthetic retrieval task
    "doc_len",
    "num_keys",
    "num_values",
    "min_gap",
    "max_gap",
    "pairs",
    "train_samples",
    "eval_samples",
    // continual training
    "init_checkpoint",
    "extend_factor",
    // outputs
    "checkpoint",
    "log",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !ALLOWED_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Ok(RunConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical form: sorted key=value lines. parse(serialize(c)) == c.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn parse_with<T, F>(&self, key: &str, raw: &str, f: F) -> Result<T>
    where
        F: FnOnce(&str) -> std::result::Result<T, String>,
    {
        f(raw).map_err(|e| Error::Config(format!("key '{key}': {e}")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => {
                self.parse_with(key, raw, |r| r.parse::<usize>().map_err(|e| e.to_string()))
            }
        }
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        self.parse_with(key, raw, |r| r.parse::<usize>().map_err(|e| e.to_string()))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => {
                self.parse_with(key, raw, |r| r.parse::<u64>().map_err(|e| e.to_string()))
            }
        }
    }

    pub fn f32_or(&self, key: &str, default: f32) -> Result<f32> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => {
                self.parse_with(key, raw, |r| r.parse::<f32>().map_err(|e| e.to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_whitespace() {
        let cfg = RunConfig::parse(
            "# header\n\n  layers = 4  # trailing\nplan=bottom:1@block:64\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.get("layers"), Some("4"));
        assert_eq!(cfg.get("plan"), Some("bottom:1@block:64"));
        assert_eq!(cfg.u64_or("seed", 0).unwrap(), 7);
    }

    #[test]
    fn serialize_parse_round_trips() {
        let text = "steps = 10\nlayers=2\nlearning_rate = 0.001\n# note\nplan = full\n";
        let cfg = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = RunConfig::parse("layerz = 4\n").unwrap_err();
        assert!(err.to_string().contains("layerz"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines_are_errors() {
        assert!(RunConfig::parse("steps = 1\nsteps = 2\n").is_err());
        assert!(RunConfig::parse("steps\n").is_err());
    }

    #[test]
    fn typed_getters_report_the_key() {
        let cfg = RunConfig::parse("steps = soon\n").unwrap();
        let err = cfg.require_usize("steps").unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");
        assert!(cfg.require("checkpoint").is_err());
    }
}
