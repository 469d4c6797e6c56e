//! Output directory bookkeeping. Every emitted file is recorded; the
//! manifest, with SHA-256 checksums, is written last.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use gp_mass::fielddump;
use gp_mass::grid::{ComplexField, RealField};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
    started_unix: f64,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Outputs> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(path)
    }

    /// Runs a writer into a buffer, then stores it under `name`.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> gp_mass::Result<()>,
    ) -> CliResult<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// CSV preceded by `# key=value` metadata lines.
    pub fn csv(
        &mut self,
        name: &str,
        meta: &[String],
        f: impl FnOnce(&mut Vec<u8>) -> gp_mass::Result<()>,
    ) -> CliResult<PathBuf> {
        self.write_with(name, |buf| {
            for line in meta {
                buf.extend_from_slice(format!("# {line}\n").as_bytes());
            }
            f(buf)
        })
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable record");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn real_field(&mut self, name: &str, f: &RealField) -> CliResult<PathBuf> {
        self.write_with(name, |buf| fielddump::write_real(f, buf))
    }

    pub fn complex_field(&mut self, name: &str, f: &ComplexField) -> CliResult<PathBuf> {
        self.write_with(name, |buf| fielddump::write_complex(f, buf))
    }

    /// Writes `<subcommand>.manifest.json` listing every file emitted so
    /// far with its size and checksum (read back from disk).
    pub fn finish(self, subcommand: &str, argv: &[String], cfg: &RunConfig) -> CliResult<PathBuf> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let path = self.dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
            files.push(json!({
                "path": name,
                "bytes": bytes.len(),
                "sha256": format!("{:x}", Sha256::digest(&bytes)),
            }));
        }
        let manifest = json!({
            "tool": "gp-mass",
            "subcommand": subcommand,
            "argv": argv,
            "versions": {
                "gp-mass": env!("CARGO_PKG_VERSION"),
                "gp-mass-core": gp_mass::VERSION,
            },
            "config": cfg,
            "timing": {
                "started_unix_s": self.started_unix,
                "elapsed_s": self.started.elapsed().as_secs_f64(),
            },
            "files": files,
        });
        let path = self.dir.join(format!("{subcommand}.manifest.json"));
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Output {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::create(&dir.path().join("run")).unwrap();
        out.write("a.txt", b"abc").unwrap();
        out.csv("b.csv", &["seed=1".into()], |buf| {
            buf.extend_from_slice(b"x,y\n");
            Ok(())
        })
        .unwrap();
        out.write("a.txt", b"abc").unwrap();
        let path = out.finish("test", &["gp-mass".into()], &RunConfig::default()).unwrap();
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let files = m["files"].as_array().unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(
            files[0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let csv = std::fs::read_to_string(dir.path().join("run/b.csv")).unwrap();
        assert_eq!(csv, "# seed=1\nx,y\n");
    }
}
