//! Config files, flag overrides and CLI error mapping.

use std::fmt;
use std::path::{Path, PathBuf};

use conceptlab::io::InputDigest;
use conceptlab::{Error, ErrorClass};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<conceptlab::io::FormatError> for CliError {
    fn from(e: conceptlab::io::FormatError) -> Self {
        CliError::Core(e.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => EXIT_USAGE,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numeric => EXIT_NUMERIC,
            },
        }
    }

    pub fn to_json(&self) -> Value {
        let (code, class) = match self {
            CliError::Usage(_) => ("usage", "usage"),
            CliError::Core(e) => (
                e.code(),
                match e.class() {
                    ErrorClass::Usage => "usage",
                    ErrorClass::Data => "data",
                    ErrorClass::Numeric => "numeric",
                },
            ),
        };
        let mut body = json!({
            "code": code,
            "class": class,
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Core(Error::MissingKeys(keys)) = self {
            body["missing"] = json!(keys);
        }
        json!({ "error": body })
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parses a config file strictly; unknown keys are a usage error.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), load)
}

/// Overwrites `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

pub fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> CliResult<&'a PathBuf> {
    path.as_ref().ok_or_else(|| CliError::Usage(format!("missing {what} (flag or config key)")))
}

/// Collects input digests in the order files were read.
#[derive(Debug, Default)]
pub struct Inputs(pub Vec<InputDigest>);

impl Inputs {
    pub fn add(&mut self, path: &Path) -> CliResult<()> {
        if !self.0.iter().any(|d| d.path == path.display().to_string()) {
            self.0.push(InputDigest::of(path)?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, Default, PartialEq)]
    #[serde(deny_unknown_fields, default)]
    struct Toy {
        a: u32,
        b: Option<String>,
    }

    #[test]
    fn flags_override_config_values() {
        let mut t = Toy { a: 1, b: Some("cfg".into()) };
        set(&mut t.a, None);
        set_opt(&mut t.b, None);
        assert_eq!(t, Toy { a: 1, b: Some("cfg".into()) });
        set(&mut t.a, Some(2));
        set_opt(&mut t.b, Some("flag".into()));
        assert_eq!(t, Toy { a: 2, b: Some("flag".into()) });
    }

    #[test]
    fn strict_configs() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.json");
        std::fs::write(&good, r#"{"a": 5}"#).unwrap();
        assert_eq!(load::<Toy>(&good).unwrap(), Toy { a: 5, b: None });
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, r#"{"c": 5}"#).unwrap();
        assert_eq!(load::<Toy>(&bad).unwrap_err().exit_code(), EXIT_USAGE);
        assert_eq!(load_or_default::<Toy>(None).unwrap(), Toy::default());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        let missing = CliError::from(Error::MissingKeys(vec!["q1".into()]));
        assert_eq!(missing.exit_code(), EXIT_DATA);
        assert_eq!(missing.to_json()["error"]["missing"], json!(["q1"]));
        assert_eq!(CliError::from(Error::Numeric("svd".into())).exit_code(), EXIT_NUMERIC);
        let u = CliError::Usage("x".into()).to_json();
        assert_eq!(u["error"]["exit_code"], EXIT_USAGE);
        assert!(u["error"].get("missing").is_none());
    }

    #[test]
    fn inputs_are_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f");
        std::fs::write(&f, b"abc").unwrap();
        let mut inputs = Inputs::default();
        inputs.add(&f).unwrap();
        inputs.add(&f).unwrap();
        assert_eq!(inputs.0.len(), 1);
        assert_eq!(inputs.0[0].crc32, "352441c2");
    }
}
