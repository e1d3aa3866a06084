//! Run manifests: enough to re-execute a command and check that it
//! reproduces its outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "tofflow";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Stable name of the file within one run, independent of the prefix.
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub args: Vec<String>,
    /// Every parameter after defaults were applied.
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn output(&self, role: &str) -> Option<&Artifact> {
        self.outputs.iter().find(|a| a.role == role)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Collects the files a command reads and writes under one output prefix.
#[derive(Debug)]
pub struct Run {
    command: String,
    args: Vec<String>,
    prefix: PathBuf,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

impl Run {
    pub fn new(command: &str, args: &[String], prefix: &Path) -> CliResult<Self> {
        if let Some(parent) = prefix.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
        }
        Ok(Self {
            command: command.into(),
            args: args.to_vec(),
            prefix: prefix.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// `prefix.role`.
    pub fn path(&self, role: &str) -> PathBuf {
        let mut s = self.prefix.clone().into_os_string();
        s.push(".");
        s.push(role);
        PathBuf::from(s)
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let sha256 = hash_file(path)?;
        self.inputs.push(Artifact {
            role: role.into(),
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    /// Writes `bytes` to `prefix.role` and records it.
    pub fn write(&mut self, role: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(role);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(Artifact {
            role: role.into(),
            path: path.clone(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Writes a raster as `prefix.name.raw` plus `prefix.name.json`.
    pub fn write_raster(&mut self, name: &str, raster: &crate::format::RasterFile) -> CliResult<PathBuf> {
        let raw = self.write(&format!("{name}.raw"), &raster.to_bytes())?;
        self.write(&format!("{name}.json"), raster.sidecar_json().as_bytes())?;
        Ok(raw)
    }

    pub fn write_csv<T: Serialize>(&mut self, role: &str, rows: &[T]) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)
                .map_err(|e| CliError::Input(format!("csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Input(format!("csv: {e}")))?;
        self.write(role, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, role: &str, value: &T) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).expect("value serializes");
        s.push('\n');
        self.write(role, s.as_bytes())
    }

    /// Writes `prefix.manifest.json` and returns the manifest.
    pub fn finish<P: Serialize>(self, parameters: &P, seed: Option<u64>) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            args: self.args,
            parameters: serde_json::to_value(parameters).expect("parameters serialize"),
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = {
            let mut s = self.prefix.into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Manifest path of an output prefix.
pub fn manifest_path(prefix: &Path) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
