//! Layered settings: built-in defaults, then the config file section, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::CliError;

/// Parsed config file; each command reads the table named after it.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    table: Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config file {}: {e}", path.display())))?;
        Ok(Self { table })
    }

    fn section(&self, name: &str) -> Result<Table, CliError> {
        match self.table.get(name) {
            None => Ok(Table::new()),
            Some(Value::Table(t)) => Ok(t.clone()),
            Some(_) => Err(CliError::Validation(format!("config section [{name}] must be a table"))),
        }
    }

    /// Effective settings for `command`: flags in `overrides` win over the
    /// file section, which wins over the defaults of `T`.
    ///
    /// Override keys may be dotted (`model.epochs`) to reach nested tables.
    pub fn resolve<T: DeserializeOwned, O: Serialize>(&self, command: &str, overrides: &O) -> Result<T, CliError> {
        let mut table = self.section(command)?;
        let flags = Table::try_from(overrides).map_err(|e| CliError::Usage(e.to_string()))?;
        for (key, value) in flags {
            insert_dotted(&mut table, &key, value)?;
        }
        T::deserialize(Value::Table(table)).map_err(|e| CliError::Validation(format!("[{command}] {e}")))
    }
}

fn insert_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
            Ok(())
        }
        Some((head, rest)) => {
            let entry = table.entry(head.to_string()).or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(inner) => insert_dotted(inner, rest, value),
                _ => Err(CliError::Validation(format!("config key {head} must be a table"))),
            }
        }
    }
}
