use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory.
    pub path: String,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub complete: bool,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes artifacts under one directory and rewrites the manifest after each one,
/// so an interrupted run leaves an accurate, incomplete manifest behind.
#[derive(Debug)]
pub struct ArtifactWriter {
    out_dir: PathBuf,
    manifest: Manifest,
}

impl ArtifactWriter {
    pub fn create(out_dir: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let w = Self {
            out_dir: out_dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                complete: false,
                failed_stage: None,
                error: None,
                artifacts: Vec::new(),
            },
        };
        w.flush_manifest()?;
        Ok(w)
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn write_with<F>(&mut self, rel: &str, stage: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut buf = BufWriter::new(file);
        body(&mut buf)?;
        buf.flush().map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.push(ArtifactEntry {
            path: rel.to_string(),
            stage: stage.to_string(),
        });
        self.flush_manifest()?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, stage: &str, value: &T) -> Result<PathBuf> {
        self.write_with(rel, stage, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w).map_err(|e| Error::io(rel, e))
        })
    }

    pub fn write_text(&mut self, rel: &str, stage: &str, text: &str) -> Result<PathBuf> {
        self.write_with(rel, stage, |w| {
            w.write_all(text.as_bytes()).map_err(|e| Error::io(rel, e))
        })
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.complete = true;
        self.flush_manifest()?;
        Ok(self.manifest)
    }

    pub fn fail(mut self, stage: &str, error: &Error) -> Result<Manifest> {
        self.manifest.failed_stage = Some(stage.to_string());
        self.manifest.error = Some(error.to_string());
        self.flush_manifest()?;
        Ok(self.manifest)
    }

    fn flush_manifest(&self) -> Result<()> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}
