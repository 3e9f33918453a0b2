//! Append-only judgment log.
//!
//! One record per line: `item_id \t rater \t choice \t unix_ts \t crc32`, where
//! the checksum is eight lowercase hex digits over the first four fields joined
//! by tabs. Each append is flushed and fsynced before it is acknowledged. On
//! open, lines that fail to parse or verify (for example a half-written tail
//! after a crash) are skipped and counted.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use stormloc::stats::Choice;

use crate::error::StudyError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub item_id: String,
    pub rater: String,
    pub choice: Choice,
    pub timestamp: i64,
}

impl LogEntry {
    fn body(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.item_id, self.rater, self.choice.as_str(), self.timestamp)
    }

    pub fn to_line(&self) -> String {
        let body = self.body();
        format!("{body}\t{:08x}\n", crc32fast::hash(body.as_bytes()))
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let (body, crc) = line.rsplit_once('\t')?;
        if crc.len() != 8 || u32::from_str_radix(crc, 16).ok()? != crc32fast::hash(body.as_bytes()) {
            return None;
        }
        let mut f = body.split('\t');
        let entry = LogEntry {
            item_id: f.next()?.to_string(),
            rater: f.next()?.to_string(),
            choice: f.next()?.parse().ok()?,
            timestamp: f.next()?.parse().ok()?,
        };
        f.next().is_none().then_some(entry)
    }
}

/// Field text may not contain separators or control characters.
pub fn check_field(name: &str, value: &str) -> Result<(), StudyError> {
    if value.is_empty() || value.len() > 128 || value.chars().any(char::is_control) {
        return Err(StudyError::BadRequest(format!("{name} must be 1-128 printable characters")));
    }
    Ok(())
}

pub enum Appended {
    New(LogEntry),
    Replayed(LogEntry),
}

pub struct RecordLog {
    path: PathBuf,
    writer: Mutex<File>,
    entries: RwLock<Vec<LogEntry>>,
    index: RwLock<HashMap<(String, String), usize>>,
    skipped: usize,
}

impl RecordLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StudyError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        let mut skipped = 0;
        for line in text.split_terminator('\n') {
            match LogEntry::parse_line(line) {
                Some(e) => {
                    // First answer wins, as it does for live submissions.
                    let key = (e.item_id.clone(), e.rater.clone());
                    if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(key) {
                        slot.insert(entries.len());
                        entries.push(e);
                    }
                }
                None => skipped += 1,
            }
        }
        if !text.is_empty() && !text.ends_with('\n') {
            // Terminate a torn final line so the next record starts cleanly.
            file.seek(SeekFrom::End(0))?;
            file.write_all(b"\n")?;
            file.sync_data()?;
        }
        Ok(Self {
            path,
            writer: Mutex::new(file),
            entries: RwLock::new(entries),
            index: RwLock::new(index),
            skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Lines dropped as unreadable when the log was opened.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.entries.read().clone()
    }

    pub fn get(&self, item_id: &str, rater: &str) -> Option<LogEntry> {
        let i = *self.index.read().get(&(item_id.to_string(), rater.to_string()))?;
        Some(self.entries.read()[i].clone())
    }

    /// Durably appends `entry` unless this rater already answered the item.
    /// Repeating the same choice returns the stored record; a different
    /// choice is a conflict.
    pub fn append(&self, entry: LogEntry) -> Result<Appended, StudyError> {
        check_field("item_id", &entry.item_id)?;
        check_field("rater", &entry.rater)?;
        let mut file = self.writer.lock();
        if let Some(prev) = self.get(&entry.item_id, &entry.rater) {
            if prev.choice == entry.choice {
                return Ok(Appended::Replayed(prev));
            }
            return Err(StudyError::Conflict {
                item_id: prev.item_id,
                rater: prev.rater,
                previous: prev.choice.as_str().to_string(),
            });
        }
        file.write_all(entry.to_line().as_bytes())?;
        file.flush()?;
        file.sync_data()?;
        let key = (entry.item_id.clone(), entry.rater.clone());
        let mut entries = self.entries.write();
        self.index.write().insert(key, entries.len());
        entries.push(entry.clone());
        Ok(Appended::New(entry))
    }
}
