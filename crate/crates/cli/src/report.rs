//! JSON run report. `results` holds everything that must be reproducible;
//! wall-clock measurements live apart in `timing`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use sde_core::{Result, SanityCheck, TOOL_VERSION};

use crate::Cli;

#[derive(Debug, Serialize)]
pub struct Report {
    pub tool_version: &'static str,
    pub command: String,
    pub config_echo: serde_json::Value,
    pub seed: u64,
    pub results: serde_json::Value,
    pub timing: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(cli: &Cli) -> Result<Self> {
        let config_echo = serde_json::to_value(cli)?;
        let command = config_echo
            .get("command")
            .and_then(|c| c.as_object())
            .and_then(|c| c.keys().next().cloned())
            .unwrap_or_default();
        Ok(Self {
            tool_version: TOOL_VERSION,
            command,
            config_echo,
            seed: cli.common.seed,
            results: serde_json::Value::Null,
            timing: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn set_results(&mut self, v: serde_json::Value) {
        self.results = v;
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.timing.insert(stage.to_string(), seconds);
    }

    pub fn warn_if_gate_failed(&mut self, s: &SanityCheck) {
        if !s.passed {
            let msg = format!(
                "reference sets are not separable: U-test p = {:.3e} >= alpha = {}; verdicts are unreliable",
                s.p_value, s.alpha
            );
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
    }

    pub fn emit(&self, out: Option<&Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        if let Some(path) = out {
            std::fs::write(path, &text)?;
        }
        println!("{text}");
        Ok(())
    }
}
