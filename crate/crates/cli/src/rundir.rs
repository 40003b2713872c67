use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use maskedspeech_core::config::ResolvedConfig;
use maskedspeech_core::{Error, Result};

use crate::SNAPSHOT_FILE;

const LOCK_FILE: &str = ".lock";

/// Exclusive ownership of a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{} is in use by another invocation ({})", dir.display(), path.display()),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn write_snapshot(dir: &Path, cfg: &ResolvedConfig) -> Result<()> {
    fs::write(dir.join(SNAPSHOT_FILE), cfg.snapshot()?)?;
    Ok(())
}
