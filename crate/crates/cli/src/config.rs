//! Option merging: every flag may also come from a TOML file, one table per
//! subcommand. Values given on the command line win.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

/// Fills every `None` field of `$cli` from `$file`.
macro_rules! merge {
    ($cli:expr, $file:expr; $($field:ident),+ $(,)?) => {{
        let mut c = $cli;
        let f = $file;
        $( if c.$field.is_none() { c.$field = f.$field; } )+
        c
    }};
}
pub(crate) use merge;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub sequential: Option<bool>,
    #[serde(default)]
    pub generate: Option<toml::Table>,
    #[serde(default)]
    pub fit: Option<toml::Table>,
    #[serde(default)]
    pub eval: Option<toml::Table>,
    #[serde(default)]
    pub anchors: Option<toml::Table>,
    #[serde(default)]
    pub project: Option<toml::Table>,
    #[serde(default)]
    pub render: Option<toml::Table>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// The table for `command`, deserialised into its option struct.
    pub fn section<T: for<'de> Deserialize<'de> + Default>(
        &self,
        command: &str,
    ) -> Result<T, CliError> {
        let table = match command {
            "generate" => &self.generate,
            "fit" => &self.fit,
            "eval" => &self.eval,
            "anchors" => &self.anchors,
            "project" => &self.project,
            "render" => &self.render,
            _ => &None,
        };
        match table {
            None => Ok(T::default()),
            Some(t) => t
                .clone()
                .try_into()
                .map_err(|e| CliError::Usage(format!("config section [{command}]: {e}"))),
        }
    }
}

pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Usage(format!(
            "missing required option --{flag} (flag or config file)"
        ))
    })
}

pub fn path(value: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    required(value, flag)
}
