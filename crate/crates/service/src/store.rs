//! One JSONL log per session. Appends are flushed to disk before returning.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Result, ServiceError};
use crate::session::Event;

pub const LOG_EXTENSION: &str = "jsonl";

pub fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{LOG_EXTENSION}"))
}

fn storage(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Storage {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parse a log. A torn final line (no newline, or unparsable last line) is
/// reported through the returned byte length of the valid prefix.
pub fn decode(path: &Path, text: &str) -> Result<(Vec<Event>, usize)> {
    let mut events = Vec::new();
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    while let Some((n, line)) = lines.next() {
        let last = lines.peek().is_none();
        if !line.ends_with('\n') {
            break;
        }
        if line.trim().is_empty() {
            offset += line.len();
            continue;
        }
        match serde_json::from_str::<Event>(line) {
            Ok(e) => events.push(e),
            Err(_) if last => break,
            Err(e) => {
                return Err(ServiceError::CorruptLog {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: e.to_string(),
                })
            }
        }
        offset += line.len();
    }
    Ok((events, offset))
}

/// Read a log, cutting off a torn tail on disk.
pub fn load(path: &Path) -> Result<Vec<Event>> {
    let text = fs::read_to_string(path).map_err(storage(path))?;
    let (events, valid) = decode(path, &text)?;
    if valid < text.len() {
        tracing::warn!(path = %path.display(), dropped = text.len() - valid, "truncating torn log tail");
        let f = OpenOptions::new().write(true).open(path).map_err(storage(path))?;
        f.set_len(valid as u64).map_err(storage(path))?;
        f.sync_all().map_err(storage(path))?;
    }
    Ok(events)
}

/// Open handle on an existing log.
#[derive(Debug)]
pub struct LogFile {
    path: PathBuf,
    file: File,
}

impl LogFile {
    /// Create a new log holding `events`; fails if the file exists.
    pub fn create(path: &Path, events: &[Event]) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(path)
            .map_err(storage(path))?;
        let mut log = LogFile {
            path: path.to_path_buf(),
            file,
        };
        log.append(events)?;
        if let Some(dir) = path.parent() {
            // make the new directory entry durable too
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(log)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path).map_err(storage(path))?;
        Ok(LogFile {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, events: &[Event]) -> Result<()> {
        self.file
            .write_all(encode(events).as_bytes())
            .map_err(storage(&self.path))?;
        self.file.sync_data().map_err(storage(&self.path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(at: u64) -> Event {
        Event::Undone { at }
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let mut text = encode(&[ev(1), ev(2)]);
        let good = text.len();
        text.push_str("{\"event\":\"und");
        fs::write(&path, &text).unwrap();
        assert_eq!(load(&path).unwrap(), vec![ev(1), ev(2)]);
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, good);
    }

    #[test]
    fn garbage_last_line_is_dropped_but_middle_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, format!("{}garbage\n", encode(&[ev(1)]))).unwrap();
        assert_eq!(load(&path).unwrap(), vec![ev(1)]);
        fs::write(&path, format!("garbage\n{}", encode(&[ev(1)]))).unwrap();
        assert!(matches!(load(&path), Err(ServiceError::CorruptLog { line: 1, .. })));
    }

    #[test]
    fn create_refuses_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let mut log = LogFile::create(&path, &[ev(1)]).unwrap();
        log.append(&[ev(2)]).unwrap();
        assert_eq!(load(&path).unwrap(), vec![ev(1), ev(2)]);
        assert!(LogFile::create(&path, &[ev(1)]).is_err());
    }
}
