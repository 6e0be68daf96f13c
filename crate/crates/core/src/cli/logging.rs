//! Run log: timestamped lines appended to `run.log`, mirrored to stderr.
//!
//! Every other artifact is byte-deterministic; wall-clock time is confined
//! to this file.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use log::{LevelFilter, Log, Metadata, Record};

use crate::error::{Error, Result};

static SINK: Mutex<Option<File>> = Mutex::new(None);
static LOGGER: RunLogger = RunLogger;

struct RunLogger;

impl Log for RunLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format!(
            "{} {:5} {}",
            chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ"),
            record.level(),
            record.args()
        );
        eprintln!("{line}");
        if let Ok(mut sink) = SINK.lock() {
            if let Some(file) = sink.as_mut() {
                let _ = writeln!(file, "{line}");
            }
        }
    }

    fn flush(&self) {
        if let Ok(mut sink) = SINK.lock() {
            if let Some(file) = sink.as_mut() {
                let _ = file.flush();
            }
        }
    }
}

/// Point the run log at `path`. The global logger is installed on first
/// use; later calls only swap the file, so in-process callers can run
/// several commands with separate logs.
pub(super) fn init(path: &Path) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    *SINK.lock().expect("log sink poisoned") = Some(file);
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(LevelFilter::Info);
    }
    Ok(())
}

/// Drop the current file sink. Called at the start of every invocation so
/// a failure before `init` cannot land in a previous run's log.
pub(super) fn detach() {
    if let Ok(mut sink) = SINK.lock() {
        *sink = None;
    }
}

/// Report an error through the run log when one is attached, directly to
/// stderr otherwise (e.g. the config failed before any log existed).
pub(super) fn error(message: &str) {
    let attached = SINK.lock().map(|s| s.is_some()).unwrap_or(false);
    if attached {
        log::error!("{message}");
    } else {
        eprintln!("error: {message}");
    }
}
