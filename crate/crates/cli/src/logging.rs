use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{LevelFilter, Log, Metadata, Record};

/// Writes log records to stderr, as plain text or one JSON object per line.
struct StderrLogger {
    json: bool,
    level: LevelFilter,
}

impl Log for StderrLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = if self.json {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64);
            serde_json::json!({
                "ts_ms": ts,
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            })
            .to_string()
        } else {
            format!(
                "[{}] {}",
                record.level().as_str().to_lowercase(),
                record.args()
            )
        };
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {
        let _ = std::io::stderr().flush();
    }
}

pub fn init(json: bool, level: LevelFilter) {
    if log::set_boxed_logger(Box::new(StderrLogger { json, level })).is_ok() {
        log::set_max_level(level);
    }
}
