//! Atomic file output with a provenance preamble.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Config hash, resolved seed and artifact version, plus the resolved config.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub config: String,
}

impl Provenance {
    /// `#` comment lines for CSV outputs.
    pub fn csv_header(&self) -> String {
        let mut s = format!(
            "# {} {}\n# command: {}\n# config_hash: {}\n# seed: {}\n# resolved config:\n",
            self.tool, self.version, self.command, self.config_hash, self.seed
        );
        for line in self.config.lines() {
            if line.is_empty() {
                s.push_str("#\n");
            } else {
                s.push_str(&format!("#   {line}\n"));
            }
        }
        s
    }

    pub fn json(&self) -> Value {
        json!({
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "config": self.config,
        })
    }
}

/// Write `contents` to a temporary file beside `path`, then rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Runtime(format!("cannot write `{}`: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// `out` with its extension replaced by `suffix`, e.g. `r.csv` -> `r.summary.json`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn to_json_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/a.csv"), b"x").is_err());
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/r.csv"), "summary.json"), PathBuf::from("out/r.summary.json"));
        assert_eq!(sibling(Path::new("r"), "curves.csv"), PathBuf::from("r.curves.csv"));
    }
}
