//! Result files. Every file carries the config hash: JSON as a field, CSV and
//! text as leading `# key: value` lines.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub struct Writer {
    dir: PathBuf,
    hash: String,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output { path: path.display().to_string(), source }
}

impl Writer {
    /// Creates `<output>/<command>`.
    pub fn new(cfg: &ExperimentConfig, command: &str) -> Result<Self, CliError> {
        let dir = cfg.output.join(command);
        std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
        Ok(Self { dir, hash: cfg.hash() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(io_error(&path))?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, command: &str, body: &T) -> Result<PathBuf, CliError> {
        let env = Envelope { config_hash: &self.hash, command, body };
        let mut s = serde_json::to_string_pretty(&env).expect("result serializes");
        s.push('\n');
        self.write(name, &s)
    }

    pub fn csv(&self, name: &str, meta: &[(&str, String)], body: &str) -> Result<PathBuf, CliError> {
        let mut s = format!("# config_hash: {}\n", self.hash);
        for (k, v) in meta {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(body);
        self.write(name, &s)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        self.write(name, &format!("# config_hash: {}\n{body}", self.hash))
    }
}
