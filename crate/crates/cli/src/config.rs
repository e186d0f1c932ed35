use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dstpp::events::{load_dataset, DatasetFormat};
use dstpp::train::Checkpoint;
use dstpp::{Dataset, Model};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "DSTPP_OUT_ROOT";

/// Bad invocation: reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads a command config, or its default when no file is given. Unknown
/// fields are rejected.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

/// `--out`, else `$DSTPP_OUT_ROOT/<command>`, else `runs/<command>`.
pub fn out_dir(flag: Option<&Path>, command: &str) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Creates `dir` and echoes the resolved config into it.
pub fn prepare<T: Serialize>(dir: &Path, resolved: &T) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), resolved)
}

pub fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("missing required parameter {what}")))
}

pub fn dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path, DatasetFormat::infer(path)).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn model(path: &Path) -> Result<(Checkpoint, Model)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = ck.to_model()?;
    Ok((ck, model))
}

/// Model and dataset that agree on the space.
pub fn model_and_data(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, Model, Dataset)> {
    let (ck, model) = model(checkpoint)?;
    let d = dataset(data)?;
    if d.space != model.config.space {
        anyhow::bail!(
            "dataset space {:?} does not match the checkpoint's {:?}",
            d.space,
            model.config.space
        );
    }
    Ok((ck, model, d))
}
