use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lankgc::dataset::sha256_hex;

/// Contents of a `run.meta` file: command, resolved settings and input checksums.
pub struct RunMeta {
    command: &'static str,
    settings: Vec<(String, String)>,
    inputs: Vec<(String, String)>,
}

impl RunMeta {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            settings: Vec::new(),
            inputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.push((key.to_string(), value.to_string()));
        self
    }

    /// Records the sha256 of a file, or of every regular file in a directory.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<&mut Self> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .with_context(|| format!("reading {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
                if name == "run.meta" {
                    continue;
                }
                let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
                self.inputs.push((format!("{label}/{name}"), sha256_hex(&bytes)));
            }
        } else {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            self.inputs.push((label.to_string(), sha256_hex(&bytes)));
        }
        Ok(self)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "command = {}\nversion = {}\n",
            self.command,
            env!("CARGO_PKG_VERSION")
        );
        for (k, v) in &self.settings {
            s.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in &self.inputs {
            s.push_str(&format!("input.{k}.sha256 = {v}\n"));
        }
        s
    }

    /// Writes `dir/run.meta`.
    pub fn write_in(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("run.meta");
        fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))
    }

    /// Writes `<file>.run.meta` next to a single-file output.
    pub fn write_beside(&self, file: &Path) -> Result<()> {
        let mut name = file.as_os_str().to_owned();
        name.push(".run.meta");
        let path = PathBuf::from(name);
        fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}
