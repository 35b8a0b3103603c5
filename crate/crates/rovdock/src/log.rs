//! JSONL trial logs: one [`LogRecord`] per line, a header first and the
//! trial result last.

use std::io::{BufRead, Write};
use std::path::Path;

use rovdock_core::mission::{run_mission_logged, LogRecord, LOG_SCHEMA_VERSION};
use rovdock_core::scenario::{ScenarioConfig, TrialResult};

use crate::error::{HarnessError, Result};

/// Serialises records into a byte buffer, one JSON object per line.
#[derive(Debug, Default)]
pub struct JsonlBuffer {
    pub bytes: Vec<u8>,
    pub records: usize,
}

impl JsonlBuffer {
    pub fn push(&mut self, rec: &LogRecord) {
        serde_json::to_writer(&mut self.bytes, rec).expect("log records always serialise");
        self.bytes.push(b'\n');
        self.records += 1;
    }
}

/// Runs one trial and returns its result together with the encoded log.
pub fn run_logged(cfg: &ScenarioConfig, seed: u64) -> Result<(TrialResult, Vec<u8>)> {
    let mut buf = JsonlBuffer::default();
    let result = run_mission_logged(cfg, seed, &mut |rec| buf.push(&rec))?;
    Ok((result, buf.bytes))
}

/// Decodes a log, checking the header's schema version.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if out.is_empty() {
            check_header(&line, i + 1)?;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| HarnessError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(HarnessError::Log {
            line: 0,
            message: "empty log".into(),
        });
    }
    Ok(out)
}

/// Checks the record kind and schema version of the first line.
fn check_header(line: &str, n: usize) -> Result<()> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| HarnessError::Log {
        line: n,
        message: e.to_string(),
    })?;
    if v.get("record").and_then(|r| r.as_str()) != Some("header") {
        return Err(HarnessError::Log {
            line: n,
            message: "first record is not a header".into(),
        });
    }
    match v.get("schema_version").and_then(|s| s.as_u64()) {
        Some(s) if s == LOG_SCHEMA_VERSION as u64 => Ok(()),
        other => Err(HarnessError::SchemaMismatch(format!(
            "log version {:?}, expected {LOG_SCHEMA_VERSION}",
            other
        ))),
    }
}

pub fn read_log_file(path: &Path) -> Result<Vec<LogRecord>> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_log(std::io::BufReader::new(f))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(path, e))
}

/// The result record of a decoded log, if the trial finished.
pub fn log_result(records: &[LogRecord]) -> Option<&TrialResult> {
    records.iter().rev().find_map(|r| match r {
        LogRecord::Result(res) => Some(res),
        _ => None,
    })
}
