//! JSON run reports with provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::io::tensor::{file_crc32, write_bytes_atomic};

pub const TOOL_NAME: &str = "conceptlab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub crc32: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(InputDigest { path: path.display().to_string(), crc32: format!("{:08x}", file_crc32(path)?) })
    }
}

/// Every subcommand emits one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
    #[serde(default)]
    pub notices: Vec<String>,
    pub results: Value,
}

impl Report {
    pub fn new(command: &str, seed: Option<u64>, config: Value, results: Value) -> Self {
        Report {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            notices: Vec::new(),
            results,
        }
    }
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes_atomic(path, &bytes)
}
