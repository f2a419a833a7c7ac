//! JSON-lines log files under `<workspace>/logs`, one per stage.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde_json::json;

struct JsonlLogger {
    file: Mutex<Option<File>>,
    stderr_level: Level,
}

static LOGGER: OnceLock<JsonlLogger> = OnceLock::new();

impl Log for JsonlLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Info || metadata.target().starts_with("megadoc")
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        if record.level() <= self.stderr_level {
            eprintln!("[{}] {}", record.level(), record.args());
        }
        let mut guard = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = guard.as_mut() {
            let t = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64());
            let line = json!({
                "t": t,
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            let _ = writeln!(f, "{line}");
        }
    }

    fn flush(&self) {
        if let Some(f) = self.file.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            let _ = f.flush();
        }
    }
}

/// Installs the logger once per process. Messages at `stderr_level` or
/// more severe are echoed to stderr.
pub fn init(stderr_level: Level) {
    let logger = LOGGER.get_or_init(|| JsonlLogger {
        file: Mutex::new(None),
        stderr_level,
    });
    if log::set_logger(logger).is_ok() {
        log::set_max_level(LevelFilter::Debug);
    }
}

/// Points the log at `<root>/logs/<stage>.jsonl`. A no-op before `init`.
pub fn set_stage(root: &Path, stage: &str) {
    let Some(logger) = LOGGER.get() else { return };
    let dir = root.join("logs");
    let file = fs::create_dir_all(&dir).ok().and_then(|()| {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{stage}.jsonl")))
            .ok()
    });
    *logger.file.lock().unwrap_or_else(|e| e.into_inner()) = file;
}
