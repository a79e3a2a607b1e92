//! Reproducible run artifacts: CSV files plus a manifest that names the
//! config hash, effective seed and solver versions. Nothing in an artifact
//! depends on wall-clock time, file paths or thread count, so re-running a
//! command with the same config and seed reproduces every byte.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::Experiment;

pub const CLI_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output directory of one run.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> io::Result<OutDir> {
        fs::create_dir_all(root)?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> io::Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents)?;
        Ok(path)
    }

    /// Write the run manifest. `status` is `complete` or a flagged partial
    /// state; `extra` carries command-specific key/value lines.
    pub fn write_manifest(
        &self,
        command: &str,
        experiment: &Experiment,
        status: &str,
        extra: &[(String, String)],
    ) -> io::Result<PathBuf> {
        let mut text = String::new();
        let _ = writeln!(text, "command = \"{command}\"");
        let _ = writeln!(text, "status = \"{status}\"");
        let _ = writeln!(text, "config_file = \"{}\"", experiment.file_name);
        let _ = writeln!(text, "config_sha256 = \"{}\"", sha256_hex(experiment.raw.as_bytes()));
        let _ = writeln!(text, "seed = {}", experiment.seed);
        let _ = writeln!(text, "core_version = \"{}\"", mfglab::VERSION);
        let _ = writeln!(text, "cli_version = \"{CLI_VERSION}\"");
        for (key, value) in extra {
            let _ = writeln!(text, "{key} = {value}");
        }
        let _ = writeln!(text, "\n# --- config echo ---");
        for line in experiment.raw.lines() {
            let _ = writeln!(text, "# {line}");
        }
        self.write("manifest.txt", text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Assemble a CSV from a header and rows of already-formatted fields.
/// Floats must be formatted with `{}` (shortest round-trip) by the caller.
pub fn csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
