//! Output directory bookkeeping and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Files written by one command, in creation order.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    inputs: Vec<PathBuf>,
}

impl Outputs {
    pub fn create(dir: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::output(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs {
            dir,
            files: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Records a data file read by the command.
    pub fn add_input(&mut self, path: PathBuf) {
        self.inputs.push(path);
    }

    /// Creates `name` in the output directory and hands a buffered writer to `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let path = self.dir.join(name);
        let err = |e: std::io::Error| CliError::output(format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(&path).map_err(err)?);
        f(&mut w)?;
        w.flush().map_err(err)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        self.write(name, |w| {
            w.write_all(text.as_bytes())
                .map_err(|e| CliError::output(e.to_string()))
        })
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    vsp_version: &'a str,
    core_version: &'a str,
    species: &'a str,
    config_path: String,
    config_sha256: String,
    threads: usize,
    runtime_s: f64,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

/// Everything the manifest records besides the file lists.
pub struct RunInfo<'a> {
    pub command: &'a str,
    pub species: &'a str,
    pub config_path: &'a Path,
    pub config_text: &'a str,
    pub threads: usize,
    pub runtime: Duration,
}

fn record(path: &Path, label: String) -> CliResult<FileRecord> {
    let bytes = std::fs::read(path).map_err(|e| CliError::output(format!("{}: {e}", path.display())))?;
    Ok(FileRecord {
        path: label,
        sha256: sha256_hex(&bytes),
    })
}

impl Outputs {
    /// Writes `manifest.toml` with hashes of every input and output file.
    pub fn finish(mut self, info: &RunInfo) -> CliResult<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| record(p, p.display().to_string()))
            .collect::<CliResult<Vec<_>>>()?;
        let outputs = self
            .files
            .iter()
            .map(|f| record(&self.dir.join(f), f.clone()))
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = Manifest {
            command: info.command,
            vsp_version: env!("CARGO_PKG_VERSION"),
            core_version: vsp_core::VERSION,
            species: info.species,
            config_path: info.config_path.display().to_string(),
            config_sha256: sha256_hex(info.config_text.as_bytes()),
            threads: info.threads,
            runtime_s: info.runtime.as_secs_f64(),
            inputs,
            outputs,
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::output(format!("manifest: {e}")))?;
        self.write_text("manifest.toml", &text)
    }
}
