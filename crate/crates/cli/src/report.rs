//! Runs an experiment and writes `report.json` plus its data files.

use std::path::Path;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::experiments;

pub const SCHEMA: u32 = 1;

/// The report without its timestamp; identical configurations give identical values.
pub fn report_body(cfg: &ExperimentConfig, status: &str, result: Value, files: &[String]) -> Value {
    json!({
        "schema": SCHEMA,
        "command": cfg.command.name(),
        "config": cfg,
        "status": status,
        "result": result,
        "files": files,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    std::fs::write(dir.join(name), contents)
}

pub fn execute(cfg: &ExperimentConfig) -> ExitCode {
    let dir = &cfg.output_dir;
    if let Err(e) = std::fs::create_dir_all(dir) {
        eprintln!(
            "invalid config: field `output_dir`: cannot create {}: {e}",
            dir.display()
        );
        return ExitCode::from(1);
    }
    let (status, result, files, code) = match experiments::run(cfg) {
        Ok(out) => {
            let mut names = Vec::with_capacity(out.files.len());
            for (name, contents) in &out.files {
                if let Err(e) = write(dir, name, contents) {
                    eprintln!("error: writing {name}: {e}");
                    return ExitCode::from(1);
                }
                names.push(name.clone());
            }
            let (status, code) = if out.pass { ("pass", 0) } else { ("fail", 2) };
            (status, out.result, names, code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ("error", json!({ "error": e.to_string() }), Vec::new(), 1)
        }
    };
    let mut body = report_body(cfg, status, result, &files);
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    body["timestamp"] = json!(stamp);
    let text = match serde_json::to_string_pretty(&body) {
        Ok(t) => t + "\n",
        Err(e) => {
            eprintln!("error: serializing report: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write(dir, "report.json", &text) {
        eprintln!("error: writing report.json: {e}");
        return ExitCode::from(1);
    }
    println!(
        "{}: {status} ({})",
        cfg.command.name(),
        dir.join("report.json").display()
    );
    ExitCode::from(code)
}
