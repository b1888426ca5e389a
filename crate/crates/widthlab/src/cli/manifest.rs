//! Run manifests: the resolved config, the seed, and a hash of every file
//! a command read or wrote. Feeding the embedded config back through the
//! same command reproduces the run bit for bit on one platform.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LabConfig, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Name as configured in the `io` section, or a literal path.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub command: String,
    pub seed: u64,
    /// Fully resolved config as TOML; saving it to a file and re-running
    /// the command against it reproduces every output hash below.
    pub config: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Human-readable summary lines (parameter counts, check results).
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &LabConfig) -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            seed: cfg.seed,
            config: cfg.to_toml(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn record_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.push(Artifact {
            name: name.to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn record_output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.push(Artifact {
            name: name.to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    /// Writes `manifest_<command>.json` into the output directory.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        let mut f = File::create(&path)?;
        serde_json::to_writer_pretty(&mut f, self)
            .map_err(|e| super::CliError::Run(format!("encode manifest: {e}")))?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let f = File::open(path)?;
    serde_json::from_reader(f).map_err(|e| super::CliError::Data(format!("manifest: {e}")))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher)?;
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_match_known_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifests_round_trip_with_artifacts_and_notes() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.json");
        std::fs::write(&input, b"[]").unwrap();

        let cfg = LabConfig::default();
        let mut m = Manifest::new("gen", &cfg);
        m.record_input("in.json", &input).unwrap();
        m.note("4 corpora");
        let path = m.write(dir.path()).unwrap();
        assert!(path.ends_with("manifest_gen.json"));

        let back = read_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.schema, MANIFEST_SCHEMA_VERSION);
        let parsed: toml::Table = back.config.parse().unwrap();
        assert!(parsed.contains_key("model"));
    }
}
