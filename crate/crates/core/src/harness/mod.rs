//! Experiment orchestration: configuration, batched runs, CSV/JSON output and
//! run manifests.

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{
    ExperimentConfig, MapSource, DESK_N0_BATCHES, DESK_REPLICATES, PAPER_N0_BATCHES, PAPER_REPLICATES,
};
pub use experiments::*;

/// 17 significant digits, so that values round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub name: String,
    pub seconds: f64,
}

/// Bookkeeping of one run, written after every other output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub phases: Vec<PhaseTime>,
    /// Euler-step units spent on sampling.
    pub cost_units: u64,
    /// Wall time spent building maps; not part of `cost_units`.
    pub map_build_seconds: f64,
    pub files: Vec<String>,
}

/// Single writer for the files of one run.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    manifest: RunManifest,
}

impl RunOutput {
    pub fn create(dir: &Path, command: &str, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: config.hash(),
                seeds: vec![config.seed],
                phases: Vec::new(),
                cost_units: 0,
                map_build_seconds: 0.0,
                files: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }

    /// Runs `f` and records its wall time under `name`.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.manifest.phases.push(PhaseTime {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
        w.write_record(header).map_err(csv_error)?;
        for row in rows {
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.files.push("manifest.json".into());
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.manifest)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 12345.678901234567, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            assert_eq!(s.split('e').next().unwrap().trim_start_matches('-').replace('.', "").len(), 17);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn manifest_is_written_last() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let mut out = RunOutput::create(dir.path(), "test", &cfg).unwrap();
        out.write_csv("a.csv", &["x"], &[vec!["1".into()]]).unwrap();
        let m = out.finish().unwrap();
        assert_eq!(m.files, vec!["a.csv", "manifest.json"]);
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(std::fs::read_to_string(dir.path().join("a.csv")).unwrap(), "x\n1\n");
    }
}
