use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Environment variable that overrides the default output root `out`.
pub const OUT_ENV: &str = "EPINIT_OUT";

pub const MANIFEST: &str = "manifest.txt";

pub fn output_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out")),
    }
}

/// Creates `root/<command>/<UTC timestamp>`, with a numeric suffix when a
/// run in the same second already claimed the name.
pub fn create_run_dir(root: &Path, command: &str) -> Result<PathBuf> {
    let parent = root.join(command);
    std::fs::create_dir_all(&parent)
        .with_context(|| format!("output: cannot create {}", parent.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    for n in 0.. {
        let name = if n == 0 {
            stamp.clone()
        } else {
            format!("{stamp}-{n}")
        };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(e).with_context(|| format!("output: cannot create {}", dir.display()))
            }
        }
    }
    unreachable!()
}

/// Run output directory; records every file written.
pub struct RunDir {
    pub path: PathBuf,
    pub files: Vec<String>,
}

impl RunDir {
    pub fn new(path: PathBuf) -> Self {
        RunDir {
            path,
            files: Vec::new(),
        }
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.path.join(name);
        let file = File::create(&path)
            .with_context(|| format!("output: cannot create {}", path.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w).with_context(|| format!("output: writing {name}"))?;
        w.flush()
            .with_context(|| format!("output: writing {name}"))?;
        self.files.push(name.to_string());
        Ok(())
    }
}
