//! Optional TOML run configuration. A file holds exactly one table, named
//! after the subcommand, whose keys mirror that subcommand's flags. Flags
//! given on the command line win over the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

/// Overlays the set fields of `flags` on the `[command]` table of `path`.
pub fn merge<T>(command: &str, flags: &T, path: Option<&Path>) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Clone,
{
    let flag_table = match toml::Value::try_from(flags) {
        Ok(toml::Value::Table(t)) => t,
        Ok(_) => unreachable!("argument structs serialize to tables"),
        Err(e) => return Err(CliError::Internal(format!("serializing flags: {e}"))),
    };
    let Some(path) = path else {
        return Ok(flags.clone());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    if doc.len() != 1 || !doc.contains_key(command) {
        let keys: Vec<&String> = doc.keys().collect();
        return Err(CliError::Validation(format!(
            "config {}: expected exactly one table [{command}], found {keys:?}",
            path.display()
        )));
    }
    let mut table = match doc.remove(command) {
        Some(toml::Value::Table(t)) => t,
        _ => {
            return Err(CliError::Validation(format!(
                "config {}: [{command}] must be a table",
                path.display()
            )))
        }
    };
    for (k, v) in flag_table {
        table.insert(k, v);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

/// Unwraps a merged option, naming the field when it is absent.
pub fn required<T>(value: Option<T>, field: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Validation(format!("missing required field `{field}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        mode: Option<String>,
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn no_file_returns_flags() {
        let flags = Flags { seed: Some(3), mode: None };
        assert_eq!(merge("x", &flags, None).unwrap(), flags);
    }

    #[test]
    fn flags_override_file() {
        let f = file("[x]\nseed = 1\nmode = \"ols\"\n");
        let got = merge("x", &Flags { seed: Some(9), mode: None }, Some(f.path())).unwrap();
        assert_eq!(got, Flags { seed: Some(9), mode: Some("ols".into()) });
    }

    #[test]
    fn rejects_foreign_tables_and_unknown_keys() {
        for text in ["[y]\nseed = 1\n", "[x]\nseed = 1\n[y]\n", "[x]\nsed = 1\n", "x = 1\n", "[x\n"] {
            let f = file(text);
            assert!(matches!(merge("x", &Flags::default(), Some(f.path())), Err(CliError::Validation(_))), "{text}");
        }
    }

    #[test]
    fn required_names_field() {
        match required::<u8>(None, "out") {
            Err(CliError::Validation(msg)) => assert!(msg.contains("`out`")),
            other => panic!("{other:?}"),
        }
        assert_eq!(required(Some(2), "out").unwrap(), 2);
    }
}
