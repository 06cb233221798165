use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pretrend_core::Result;
use serde::Serialize;

/// Run record written next to the outputs of every command.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub command_line: Vec<String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub settings: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, command_line: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            command_line,
            seed: None,
            config: BTreeMap::new(),
            settings: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.to_string(), value.to_string());
    }

    /// Written last, so its presence means every listed output is complete.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        self.outputs.push("manifest.json".to_string());
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| pretrend_core::Error::InvalidConfig(e.to_string()))?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
