//! Run manifests and CSV metric files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// `git describe` of the build, or "unknown".
    pub build: String,
    pub crate_version: String,
    /// Canonical config text; `ExperimentConfig::parse` restores the run.
    pub config: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, build: &str, outputs: Vec<String>) -> Self {
        Self {
            command: command.to_owned(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            build: build.to_owned(),
            crate_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: cfg.to_text(),
            outputs,
        }
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&self.config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Writes `rows` with a header derived from the row type's field names.
pub fn write_csv<S: Serialize>(path: impl AsRef<Path>, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<S: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<S>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        epoch: usize,
        loss: f64,
    }

    #[test]
    fn manifest_restores_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("seed=42").unwrap();
        let m = Manifest::new("gen-data", &cfg, "v0-test", vec!["frames.jsonl".into()]);
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config().unwrap(), cfg);
        assert_eq!(back.config_hash, cfg.hash());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![Row { epoch: 0, loss: 0.5 }, Row { epoch: 1, loss: 0.125 }];
        write_csv(&p, &rows).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("epoch,loss\n"));
        assert_eq!(read_csv::<Row>(&p).unwrap(), rows);
    }
}
