//! Structured diagnostics on standard error.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

#[derive(Serialize)]
struct Record<'a> {
    file: Option<String>,
    stage: &'a str,
    message: String,
}

/// Emit one single-line JSON record `{file, stage, message}`.
pub fn emit(file: Option<&Path>, stage: &str, message: impl std::fmt::Display) {
    let record = Record {
        file: file.map(|p| p.display().to_string()),
        stage,
        message: message.to_string(),
    };
    if let Ok(line) = serde_json::to_string(&record) {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }
}
