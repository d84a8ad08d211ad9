//! Run configuration file.
//!
//! ```toml
//! out = "runs/demo"
//!
//! [data]
//! dir = "data"               # corpus directory
//! taxonomy = "data/taxonomy.toml"
//! tune_split = "val"
//! eval_split = "test"
//!
//! [synth]                    # optional: generate the corpus into data.dir
//! seed = 20240917
//!
//! [fusion]
//! weighted_models = true
//! weighted_backbones = true
//!
//! [tune]
//! temperature_grid = [0.5, 1.0, 2.0]
//! temperature_criterion = "nll"
//! [tune.search]
//! objective = "mean"
//! max_iters = 50
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use evdecode_core::fusion::FusionMode;
use evdecode_core::synth::SynthConfig;
use evdecode_core::tuning::TuneOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    /// Defaults to `<dir>/taxonomy.toml`.
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default = "default_tune_split")]
    pub tune_split: String,
    #[serde(default = "default_eval_split")]
    pub eval_split: String,
}

fn default_tune_split() -> String {
    "val".into()
}

fn default_eval_split() -> String {
    "test".into()
}

impl DataConfig {
    pub fn taxonomy_path(&self) -> PathBuf {
        self.taxonomy.clone().unwrap_or_else(|| self.dir.join("taxonomy.toml"))
    }

    pub fn streams(&self, split: &str) -> PathBuf {
        self.dir.join(format!("streams_{split}.jsonl"))
    }

    pub fn gt(&self, split: &str) -> PathBuf {
        self.dir.join(format!("gt_{split}.jsonl"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub fusion: FusionMode,
    #[serde(default)]
    pub tune: TuneOptions,
}

impl RunConfig {
    /// Defaults for a corpus directory.
    pub fn for_data(dir: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            data: DataConfig {
                dir: dir.into(),
                taxonomy: None,
                tune_split: default_tune_split(),
                eval_split: default_eval_split(),
            },
            synth: None,
            fusion: FusionMode::default(),
            tune: TuneOptions::default(),
        }
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("parsing run config")?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        fix(&mut self.data.dir);
        if let Some(t) = &mut self.data.taxonomy {
            fix(t);
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks that every referenced input exists, naming the offending field.
    /// Corpus files may be absent when a `[synth]` section will create them.
    pub fn check_inputs(&self) -> Result<()> {
        if self.synth.is_some() {
            return Ok(());
        }
        let tax = self.data.taxonomy_path();
        if !tax.is_file() {
            bail!("data.taxonomy: file {} does not exist", tax.display());
        }
        for split in [&self.data.tune_split, &self.data.eval_split] {
            for (field, path) in [("streams", self.data.streams(split)), ("gt", self.data.gt(split))] {
                if !path.is_file() {
                    bail!("data.dir: {field} file {} for split {split:?} does not exist", path.display());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml_str("out = \"o\"\n[data]\ndir = \"d\"\n", Path::new("/base")).unwrap();
        assert_eq!(cfg.out, PathBuf::from("/base/o"));
        assert_eq!(cfg.data.taxonomy_path(), PathBuf::from("/base/d/taxonomy.toml"));
        assert_eq!(cfg.tune, TuneOptions::default());
        assert!(cfg.synth.is_none());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let text = "out = \"o\"\n[data]\ndir = \"d\"\n[synth]\nseed = 7\n[tune.search]\nmax_iters = 3\n";
        let cfg = RunConfig::from_toml_str(text, Path::new(".")).unwrap();
        assert_eq!(cfg.synth.as_ref().unwrap().seed, 7);
        assert_eq!(cfg.synth.unwrap().splits, SynthConfig::default().splits);
        assert_eq!(cfg.tune.search.max_iters, 3);
        assert_eq!(cfg.tune.search.delta0, 0.05);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("out = \"o\"\nbogus = 1\n[data]\ndir = \"d\"\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_taxonomy_names_field() {
        let cfg = RunConfig::for_data("/nonexistent/dir", "/tmp/out");
        let err = cfg.check_inputs().unwrap_err().to_string();
        assert!(err.starts_with("data.taxonomy"), "{err}");
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::for_data("/d", "/o");
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, Path::new("/")).unwrap(), cfg);
    }
}
