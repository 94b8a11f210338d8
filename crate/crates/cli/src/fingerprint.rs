use std::fmt::Display;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// SHA-256 over a command's name, its options and the contents of its input
/// files. Output locations and thread counts are left out: they do not
/// change results.
#[derive(Debug, Clone)]
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new(command: &str) -> Self {
        let mut f = Fingerprint(Sha256::new());
        f.option("command", command);
        f
    }

    pub fn option(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.update(format!("{key}={value}\n"));
        self
    }

    pub fn file(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let digest = Sha256::digest(&bytes);
        self.option(key, format!("{digest:x}"));
        Ok(self)
    }

    pub fn optional_file(&mut self, key: &str, path: Option<&Path>) -> Result<&mut Self> {
        match path {
            Some(p) => self.file(key, p),
            None => Ok(self.option(key, "-")),
        }
    }

    pub fn finish(&self) -> String {
        format!("{:x}", self.0.clone().finalize())
    }
}
