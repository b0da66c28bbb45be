//! Output directory handling: one writer at a time, every artifact replaced
//! atomically.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

const LOCK_NAME: &str = ".ccluster.lock";

/// Exclusive handle on an output directory. The lock file is removed on
/// drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn lock(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(OutputDir {
                    root: root.to_owned(),
                })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(io::Error::new(
                e.kind(),
                format!(
                    "{} is in use by another run (remove {} if that run is gone)",
                    root.display(),
                    lock.display()
                ),
            )),
            Err(e) => Err(e),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through a temporary file in the same directory and
    /// renames it into place.
    pub fn write_atomic(
        &self,
        name: &str,
        fill: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        let tmp = self.root.join(format!(".{name}.tmp"));
        let result = (|| {
            let mut file = io::BufWriter::new(File::create(&tmp)?);
            fill(&mut file)?;
            let file = file.into_inner().map_err(|e| e.into_error())?;
            file.sync_all()?;
            fs::rename(&tmp, self.root.join(name))?;
            Ok(())
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result
    }

    pub fn remove(&self, name: &str) -> io::Result<()> {
        match fs::remove_file(self.root.join(name)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_NAME));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_lock_is_refused_until_release() {
        let dir = tempfile::tempdir().unwrap();
        let first = OutputDir::lock(dir.path()).unwrap();
        assert!(OutputDir::lock(dir.path()).is_err());
        drop(first);
        OutputDir::lock(dir.path()).unwrap();
    }

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::lock(dir.path()).unwrap();
        let err = out.write_atomic("x.json", |w| {
            w.write_all(b"{\"partial\":")?;
            anyhow::bail!("boom")
        });
        assert!(err.is_err());
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from(LOCK_NAME)]);
    }
}
