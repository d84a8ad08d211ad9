//! Run manifest and digest-based stage skipping.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest of a serializable stage configuration.
pub fn digest_config<T: Serialize>(config: &T) -> Result<String> {
    Ok(digest_bytes(&serde_json::to_vec(config)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub config_digest: String,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_ms: u128,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_digest: String,
    /// Stages in execution order.
    pub stages: Vec<(String, StageRecord)>,
}

impl RunManifest {
    pub fn new(seed: Option<u64>, config_digest: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_digest,
            stages: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }
}

fn key(path: &Path) -> String {
    path.display().to_string()
}

fn digest_all(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((key(p), digest_file(p)?))).collect()
}

/// A stage's declared inputs, outputs and configuration.
pub struct Stage<'a> {
    pub name: &'a str,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config_digest: String,
}

impl Stage<'_> {
    /// Whether `previous` already holds this stage with identical inputs,
    /// configuration and still-intact outputs.
    fn up_to_date(&self, previous: Option<&StageRecord>, inputs: &BTreeMap<String, String>) -> Result<bool> {
        let Some(prev) = previous else { return Ok(false) };
        if prev.config_digest != self.config_digest || &prev.inputs != inputs {
            return Ok(false);
        }
        if prev.outputs.len() != self.outputs.len() {
            return Ok(false);
        }
        for out in &self.outputs {
            match prev.outputs.get(&key(out)) {
                Some(d) if out.is_file() && digest_file(out)? == *d => {}
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    /// Runs `body` unless the previous manifest shows the stage up to date,
    /// then records the stage in `manifest`.
    pub fn run(
        self,
        previous: Option<&RunManifest>,
        manifest: &mut RunManifest,
        body: impl FnOnce() -> Result<()>,
    ) -> Result<bool> {
        let name = self.name.to_string();
        let inputs = digest_all(&self.inputs).with_context(|| format!("stage {name}: hashing inputs"))?;
        let prev = previous.and_then(|m| m.stage(&name));
        let start = Instant::now();
        let skipped = self.up_to_date(prev, &inputs)?;
        if skipped {
            log::info!("stage {name}: up to date, skipped");
        } else {
            log::info!("stage {name}: running");
            body().with_context(|| format!("stage {name} failed"))?;
        }
        let outputs = digest_all(&self.outputs).with_context(|| format!("stage {name}: hashing outputs"))?;
        manifest.stages.push((
            name,
            StageRecord {
                inputs,
                config_digest: self.config_digest,
                outputs,
                wall_clock_ms: start.elapsed().as_millis(),
                skipped,
            },
        ));
        Ok(skipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn stage_skips_only_when_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        std::fs::write(&input, "1").unwrap();
        let stage = || Stage {
            name: "copy",
            inputs: vec![input.clone()],
            outputs: vec![output.clone()],
            config_digest: "c".into(),
        };
        let body = || {
            std::fs::copy(&input, &output)?;
            Ok(())
        };
        let mut first = RunManifest::new(None, "x".into());
        assert!(!stage().run(None, &mut first, body).unwrap());
        let mut second = RunManifest::new(None, "x".into());
        assert!(stage().run(Some(&first), &mut second, body).unwrap());
        assert_eq!(first.stages[0].1.outputs, second.stages[0].1.outputs);

        std::fs::write(&input, "2").unwrap();
        let mut third = RunManifest::new(None, "x".into());
        assert!(!stage().run(Some(&second), &mut third, body).unwrap());

        std::fs::write(&output, "tampered").unwrap();
        let mut fourth = RunManifest::new(None, "x".into());
        assert!(!stage().run(Some(&third), &mut fourth, body).unwrap());
    }
}
