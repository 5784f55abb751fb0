//! TOML run documents with `key=value` overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub fn read_table(path: Option<&Path>) -> CliResult<Table> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(CliError::validation(format!("override `{assignment}` is not key=value")));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("bad key in override `{assignment}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::validation(format!("`{p}` in `{key}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn decode<T: DeserializeOwned>(table: Table) -> CliResult<T> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::validation(e.to_string().trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_type() {
        let mut t = Table::new();
        apply_override(&mut t, "rho=0.5").unwrap();
        apply_override(&mut t, "trainer.model=xphinet").unwrap();
        apply_override(&mut t, "psi_range=[-0.1, 0.2]").unwrap();
        assert_eq!(t["rho"].as_float(), Some(0.5));
        assert_eq!(t["trainer"]["model"].as_str(), Some("xphinet"));
        assert_eq!(t["psi_range"].as_array().unwrap().len(), 2);
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "rho.x=1").is_err());
    }
}
