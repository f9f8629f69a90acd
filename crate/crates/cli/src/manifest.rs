use crate::error::{Classify, CliResult};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Record of a run, written next to the primary output before the work starts.
/// It holds no timestamps, so identical invocations write identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub serial: bool,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, serial: bool) -> Self {
        Self {
            tool: "octsplat",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            seed,
            serial,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(mut self, config: &impl Serialize) -> Self {
        self.config = serde_json::to_value(config).expect("configs serialize");
        self
    }

    /// Hashes a file, or every file under a directory.
    pub fn input(mut self, path: &Path) -> CliResult<Self> {
        for file in files_under(path).invalid(&format!("reading {}", path.display()))? {
            let bytes = std::fs::read(&file).invalid(&format!("reading {}", file.display()))?;
            self.inputs.insert(file.display().to_string(), hex(&Sha256::digest(&bytes)));
        }
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> CliResult {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(path, text).failed(&format!("writing {}", path.display()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if !path.is_dir() {
        std::fs::metadata(path)?;
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for e in entries {
        out.extend(files_under(&e)?);
    }
    Ok(out)
}

/// `dir/name.ext` → `dir/name.<suffix>`; used for logs and manifests.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecars_share_the_stem() {
        assert_eq!(sidecar(Path::new("runs/model.degd"), "manifest.json"), PathBuf::from("runs/model.manifest.json"));
        assert_eq!(sidecar(Path::new("runs/model"), "log.csv"), PathBuf::from("runs/model.log.csv"));
    }

    #[test]
    fn hashes_are_sha256() {
        assert_eq!(hex(&Sha256::digest(b"abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
