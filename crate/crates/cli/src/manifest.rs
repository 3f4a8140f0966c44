//! Per-command run manifests: resolved config plus content hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use itemgraph_core::io::{sha256_file, write_atomic};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Recorder<'a> {
    cfg: &'a RunConfig,
    command: &'a str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Recorder<'a> {
    pub fn new(cfg: &'a RunConfig, command: &'a str) -> Self {
        Self { cfg, command, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Paths under the output directory are recorded relative to it.
    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.cfg.out_dir).unwrap_or(path).display().to_string()
    }

    fn hashes(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        paths.iter().map(|p| Ok((self.key(p), sha256_file(p)?))).collect()
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = Manifest {
            command: self.command,
            config: self.cfg,
            inputs: self.hashes(&self.inputs)?,
            outputs: self.hashes(&self.outputs)?,
        };
        let path = self.cfg.out(&format!("manifests/{}.json", self.command));
        let json = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&path, |w| writeln!(w, "{json}"))?;
        Ok(path)
    }
}
