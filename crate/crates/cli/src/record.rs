use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::failure::{CliError, CliResult};
use crate::settings::Settings;
use crate::Common;

/// Writes `run.json`: the subcommand, the resolved settings and the files
/// produced. Nothing machine- or time-dependent goes in, so identical runs
/// give identical records.
pub fn write(
    out: &Path,
    command: &str,
    common: &Common,
    settings: &Settings,
    inputs: Value,
    outputs: &[String],
    error: Option<&CliError>,
) -> CliResult<()> {
    let record = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_file": common.config.as_ref().map(|p| p.display().to_string()),
        "seed": settings.raw("seed").parse::<u64>().ok(),
        "settings": settings.to_json(),
        "inputs": inputs,
        "outputs": outputs,
        "status": if error.is_some() { "failed" } else { "ok" },
        "error": error.map(|e| e.message.clone()),
    });
    let path = out.join("run.json");
    let text = serde_json::to_string_pretty(&record).expect("record serializes") + "\n";
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}
