//! Run manifests: metadata and artifact hashes as `# key=value` comments,
//! followed by the full config so a manifest can be replayed with `--config`.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use dermseg::config::Config;
use dermseg::pipeline::manifest_text;
use dermseg::Error;
use sha2::{Digest, Sha256};

pub struct Manifest {
    meta: Vec<(String, String)>,
    cfg: Config,
}

impl Manifest {
    pub fn new(command: &str, cfg: &Config) -> Manifest {
        let meta =
            vec![("command".to_string(), command.to_string()), ("version".into(), env!("CARGO_PKG_VERSION").into())];
        Manifest { meta, cfg: cfg.clone() }
    }

    pub fn meta(&mut self, key: &str, value: impl Display) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    /// Records the SHA-256 of `path`, keyed by its path relative to `root`.
    pub fn artifact(&mut self, root: &Path, path: &Path) -> Result<(), Error> {
        let digest = sha256_file(path)?;
        self.meta.push((format!("sha256:{}", relative(root, path)), digest));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        fs::write(path, manifest_text(&self.meta, &self.cfg))
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }
}

pub fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
