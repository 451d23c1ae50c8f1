//! Output files. Every file starts with the version string and the resolved
//! configuration; nothing is written until a command has finished computing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use iwdg::format::{to_json_line, to_json_string};
use iwdg::sampler::SampleBatch;

use crate::config::RunConfig;
use crate::CliError;

pub fn version() -> String {
    format!(
        "iwdg {} ({})",
        env!("CARGO_PKG_VERSION"),
        env!("IWDG_GIT_DESCRIBE")
    )
}

pub enum Contents {
    Text(String),
    /// Binary spool; its provenance header lives in the companion JSON file.
    Spool(SampleBatch),
}

pub struct Artifact {
    pub file: String,
    pub contents: Contents,
}

#[derive(Serialize)]
struct Document<'a, R: Serialize> {
    version: String,
    command: &'a str,
    config: &'a RunConfig,
    result: &'a R,
}

pub struct Header<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
}

impl Header<'_> {
    pub fn json<R: Serialize>(&self, file: &str, result: &R) -> Result<Artifact, CliError> {
        let doc = Document {
            version: version(),
            command: self.command,
            config: self.config,
            result,
        };
        let mut text = to_json_string(&doc).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        Ok(Artifact {
            file: file.into(),
            contents: Contents::Text(text),
        })
    }

    /// `#`-prefixed version and config lines followed by `body`.
    pub fn csv(&self, file: &str, body: Vec<u8>) -> Result<Artifact, CliError> {
        let config = to_json_line(self.config).map_err(|e| CliError::Runtime(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Artifact {
            file: file.into(),
            contents: Contents::Text(format!(
                "# {}\n# {} {config}\n{body}",
                version(),
                self.command
            )),
        })
    }
}

pub fn write_all(dir: &Path, artifacts: Vec<Artifact>) -> Result<Vec<PathBuf>, CliError> {
    let io = |e: std::io::Error| CliError::Runtime(format!("writing output: {e}"));
    fs::create_dir_all(dir).map_err(io)?;
    let mut written = Vec::new();
    for a in artifacts {
        let path = dir.join(&a.file);
        match a.contents {
            Contents::Text(t) => fs::write(&path, t).map_err(io)?,
            Contents::Spool(batch) => batch
                .write_spool(&path)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
        }
        written.push(path);
    }
    Ok(written)
}
