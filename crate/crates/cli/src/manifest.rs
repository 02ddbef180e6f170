//! Run manifests: a JSON record written next to each primary output, holding
//! the argv needed to replay the run and digests of what it read and wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "kpbench";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    /// Absent for files that embed wall-clock measurements.
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<output>.manifest.json`, kept beside the output it describes.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Collects inputs and outputs while a subcommand runs.
#[derive(Debug)]
pub struct Recorder {
    manifest: RunManifest,
}

impl Recorder {
    pub fn new(subcommand: &str, argv: &[String]) -> Self {
        Recorder {
            manifest: RunManifest {
                tool: TOOL.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                subcommand: subcommand.to_string(),
                argv: argv.to_vec(),
                seeds: Vec::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }

    pub fn seed(&mut self, seed: u64) {
        if !self.manifest.seeds.contains(&seed) {
            self.manifest.seeds.push(seed);
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha = sha256_file(path)?;
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: Some(sha),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let sha = sha256_file(path)?;
        self.manifest.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: Some(sha),
        });
        Ok(())
    }

    pub fn timed_output(&mut self, path: &Path) {
        self.manifest.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: None,
        });
    }

    /// Writes the manifest beside `primary` and returns its path.
    pub fn finish(self, primary: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    if m.tool != TOOL {
        bail!("{} was not written by {TOOL} (tool = {:?})", path.display(), m.tool);
    }
    Ok(m)
}

/// Compares the recorded output digests of two runs, skipping timed files.
pub fn digest_mismatches(expected: &RunManifest, actual: &RunManifest) -> Vec<String> {
    let mut bad = Vec::new();
    for e in &expected.outputs {
        let Some(want) = &e.sha256 else { continue };
        match actual.outputs.iter().find(|a| a.path == e.path) {
            Some(FileDigest { sha256: Some(got), .. }) if got == want => {}
            Some(_) => bad.push(e.path.clone()),
            None => bad.push(format!("{} (not produced)", e.path)),
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_beside_output() {
        assert_eq!(
            manifest_path(Path::new("out/r.csv")),
            PathBuf::from("out/r.csv.manifest.json")
        );
    }

    #[test]
    fn timed_outputs_are_not_compared() {
        let mut a = Recorder::new("bench", &[]).manifest;
        a.outputs = vec![
            FileDigest {
                path: "r.csv".into(),
                sha256: None,
            },
            FileDigest {
                path: "w.bin".into(),
                sha256: Some("aa".into()),
            },
        ];
        let mut b = a.clone();
        assert!(digest_mismatches(&a, &b).is_empty());
        b.outputs[1].sha256 = Some("bb".into());
        assert_eq!(digest_mismatches(&a, &b), vec!["w.bin".to_string()]);
        b.outputs.pop();
        assert_eq!(digest_mismatches(&a, &b).len(), 1);
    }
}
