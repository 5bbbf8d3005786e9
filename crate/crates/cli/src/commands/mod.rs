pub mod compare;
pub mod evaluate;
pub mod generate;
pub mod graphs;
pub mod pretrain;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use gmop::scene::{load_scenes, Scene};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Writes `{command, version, config, ..fields}` as pretty JSON.
pub fn write_manifest<C: Serialize>(path: &Path, command: &str, config: &C, fields: Value) -> Result<(), CliError> {
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    if let (Value::Object(d), Value::Object(f)) = (&mut doc, fields) {
        d.extend(f);
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Path given by flag or config, or a usage error naming the flag.
pub fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.clone().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

/// Loads a scene file; a missing file is a usage error.
pub fn read_scene_file(path: &Path) -> Result<Vec<Scene>, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("scene file {} not found", path.display())));
    }
    let scenes = load_scenes(path)?;
    if scenes.is_empty() {
        return Err(CliError::Usage(format!("scene file {} holds no scenes", path.display())));
    }
    Ok(scenes)
}

/// Refuses to write over an input file.
pub fn ensure_distinct(output: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if let Some(out) = canon(output) {
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&out)) {
            return Err(CliError::Usage(format!("output {} would overwrite an input", output.display())));
        }
    }
    Ok(())
}
