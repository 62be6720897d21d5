//! Append-only event log.
//!
//! On disk the log is UTF-8 text: a header line `cm-log v1`, then one record
//! per line. A record is the canonical JSON of
//! `{"body","kind","recorded_at","seq"}` with a final `"crc32"` member
//! appended after the sorted keys:
//!
//! ```text
//! cm-log v1
//! {"body":{...},"kind":"ParticipantRegistered","recorded_at":0,"seq":1,"crc32":"1c291ca3"}
//! ```
//!
//! The CRC-32 covers every byte of the line before `,"crc32"`. A record is
//! only complete once its newline is written, so a crash mid-append leaves a
//! trailing fragment that [`EventLog::open`] cuts off; a complete line that
//! fails its checksum is reported as corrupt instead.
//!
//! Advisory snapshots of the materialized state are written beside the log
//! (`<log>.snapshot`); nothing requires them to replay.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::Value;

use crate::canonical;
use crate::error::StoreError;
use crate::event::{DomainEvent, EventBody};

pub const LOG_HEADER: &str = "cm-log v1";
pub const SNAPSHOT_HEADER: &str = "cm-snapshot v1";
/// A snapshot is written each time the head crosses a multiple of this.
pub const SNAPSHOT_EVERY: u64 = 1000;

const CRC_KEY: &str = ",\"crc32\":\"";
// `,"crc32":"` + 8 hex digits + `"}`
const CRC_SUFFIX_LEN: usize = CRC_KEY.len() + 8 + 2;

/// Source of `recorded_at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    /// Always 0, so identical command sequences give byte-identical logs.
    Logical,
}

impl Clock {
    pub fn now_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Logical => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    /// `fsync` after each append.
    #[default]
    Fsync,
    /// Flush to the OS only.
    Flush,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogOptions {
    pub clock: Clock,
    pub durability: Durability,
}

/// Frames a JSON object as one line body (without the newline).
pub fn frame(value: &Value) -> String {
    let canon = canonical::value_to_string(value);
    debug_assert!(canon.starts_with('{') && canon.ends_with('}'));
    let prefix = if canon == "{}" {
        "{".to_owned()
    } else {
        canon[..canon.len() - 1].to_owned()
    };
    let crc = crc32fast::hash(prefix.as_bytes());
    format!("{prefix}{CRC_KEY}{crc:08x}\"}}")
}

/// Inverse of [`frame`]: checks the CRC and that the line is canonical.
pub fn unframe(line: &str) -> Result<Value, String> {
    if line.len() < CRC_SUFFIX_LEN + 1 {
        return Err("record too short".into());
    }
    let split = line.len() - CRC_SUFFIX_LEN;
    let (prefix, suffix) = line.split_at(split);
    let hex = suffix
        .strip_prefix(CRC_KEY)
        .and_then(|s| s.strip_suffix("\"}"))
        .ok_or("missing trailing crc32 member")?;
    let stored = u32::from_str_radix(hex, 16).map_err(|_| "malformed crc32")?;
    let actual = crc32fast::hash(prefix.as_bytes());
    if stored != actual {
        return Err(format!("crc32 mismatch: stored {stored:08x}, computed {actual:08x}"));
    }
    let body = format!("{prefix}}}");
    let value: Value = serde_json::from_str(&body).map_err(|e| e.to_string())?;
    if canonical::value_to_string(&value) != body {
        return Err("record is not in canonical form".into());
    }
    Ok(value)
}

pub fn encode_record(event: &DomainEvent) -> Result<String, StoreError> {
    Ok(frame(&event.to_value()?))
}

pub fn decode_record(line: &str, expected_seq: u64) -> Result<DomainEvent, StoreError> {
    let value = unframe(line).map_err(|r| StoreError::corrupt(expected_seq, r))?;
    let event = DomainEvent::from_value(value).map_err(|r| StoreError::corrupt(expected_seq, r))?;
    if event.seq != expected_seq {
        return Err(StoreError::corrupt(
            expected_seq,
            format!("found seq {} out of order", event.seq),
        ));
    }
    Ok(event)
}

/// SHA-256 over the clock-independent content of each record, one canonical
/// `{"body","kind","seq"}` line per event. Two logs with the same events have
/// the same digest whatever their timestamps.
pub fn content_digest(events: &[DomainEvent]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for e in events {
        let v = e.content_value().expect("events always encode");
        h.update(canonical::value_to_string(&v).as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

struct LogFile {
    path: PathBuf,
    file: File,
    len: u64,
    durability: Durability,
}

impl LogFile {
    fn write(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        let result = (|| {
            self.file.write_all(bytes)?;
            match self.durability {
                Durability::Fsync => self.file.sync_data(),
                Durability::Flush => self.file.flush(),
            }
        })();
        match result {
            Ok(()) => {
                self.len += bytes.len() as u64;
                Ok(())
            }
            Err(e) => {
                // Leave no torn record behind for the next append.
                let _ = self.file.set_len(self.len);
                let _ = self.file.seek(SeekFrom::Start(self.len));
                Err(e)
            }
        }
    }
}

pub struct EventLog {
    events: Vec<DomainEvent>,
    file: Option<LogFile>,
    clock: Clock,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("head", &self.head())
            .field("path", &self.path())
            .finish()
    }
}

impl EventLog {
    pub fn in_memory(clock: Clock) -> Self {
        Self {
            events: Vec::new(),
            file: None,
            clock,
        }
    }

    /// Opens (creating if needed) the log at `path` and loads every complete
    /// record. A torn trailing record is truncated away.
    pub fn open(path: impl AsRef<Path>, options: LogOptions) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;

        let header = format!("{LOG_HEADER}\n");
        let mut events = Vec::new();
        let valid_len;
        if raw.len() < header.len() && header.as_bytes().starts_with(&raw) {
            // empty file, or a crash while writing the header
            file.set_len(0)?;
            file.seek(SeekFrom::Start(0))?;
            file.write_all(header.as_bytes())?;
            file.sync_data()?;
            valid_len = header.len() as u64;
        } else {
            if !raw.starts_with(header.as_bytes()) {
                let first = raw.split(|b| *b == b'\n').next().unwrap_or_default();
                return Err(StoreError::BadHeader(
                    String::from_utf8_lossy(first).into_owned(),
                ));
            }
            let mut offset = header.len();
            loop {
                let rest = &raw[offset..];
                if rest.is_empty() {
                    break;
                }
                let expected = events.len() as u64 + 1;
                let Some(nl) = rest.iter().position(|b| *b == b'\n') else {
                    tracing::warn!(
                        path = %path.display(),
                        seq = expected,
                        bytes = rest.len(),
                        "dropping torn trailing record"
                    );
                    break;
                };
                let line = std::str::from_utf8(&rest[..nl])
                    .map_err(|_| StoreError::corrupt(expected, "record is not UTF-8"))?;
                events.push(decode_record(line, expected)?);
                offset += nl + 1;
            }
            valid_len = offset as u64;
            if valid_len < raw.len() as u64 {
                file.set_len(valid_len)?;
                file.sync_data()?;
            }
        }
        file.seek(SeekFrom::Start(valid_len))?;

        Ok(Self {
            events,
            file: Some(LogFile {
                path,
                file,
                len: valid_len,
                durability: options.durability,
            }),
            clock: options.clock,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|f| f.path.as_path())
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn head(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[DomainEvent] {
        &self.events
    }

    /// Events with `seq >= from`, in order. Empty past the head.
    pub fn read_from(&self, from: u64) -> &[DomainEvent] {
        let start = (from.max(1) - 1) as usize;
        self.events.get(start..).unwrap_or(&[])
    }

    /// Appends the events of one command. Either every record becomes durable
    /// or none is kept. Returns the last assigned seq.
    pub fn append(&mut self, bodies: Vec<EventBody>) -> Result<u64, StoreError> {
        if bodies.is_empty() {
            return Ok(self.head());
        }
        let recorded_at = self.clock.now_ms();
        let first = self.head() + 1;
        let batch: Vec<DomainEvent> = bodies
            .into_iter()
            .enumerate()
            .map(|(i, body)| DomainEvent {
                seq: first + i as u64,
                recorded_at,
                body,
            })
            .collect();
        if let Some(file) = &mut self.file {
            let mut buf = String::new();
            for e in &batch {
                buf.push_str(&encode_record(e)?);
                buf.push('\n');
            }
            file.write(buf.as_bytes())?;
        }
        self.events.extend(batch);
        Ok(self.head())
    }

    pub fn digest(&self) -> String {
        content_digest(&self.events)
    }

    /// The exact bytes the log has (or would have) on disk.
    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        let mut out = format!("{LOG_HEADER}\n");
        for e in &self.events {
            out.push_str(&encode_record(e)?);
            out.push('\n');
        }
        Ok(out.into_bytes())
    }
}

pub fn snapshot_path(log_path: &Path) -> PathBuf {
    let mut name = log_path.as_os_str().to_owned();
    name.push(".snapshot");
    PathBuf::from(name)
}

/// Writes `{"seq","state"}` atomically via a temporary file.
pub fn write_snapshot(log_path: &Path, seq: u64, state: &Value) -> std::io::Result<()> {
    let path = snapshot_path(log_path);
    let tmp = path.with_extension("snapshot.tmp");
    let record = serde_json::json!({ "seq": seq, "state": state });
    let mut f = File::create(&tmp)?;
    writeln!(f, "{SNAPSHOT_HEADER}")?;
    writeln!(f, "{}", frame(&record))?;
    f.sync_data()?;
    std::fs::rename(tmp, path)
}

/// Reads the snapshot next to `log_path`. `None` if missing or unreadable;
/// snapshots are never trusted over the log.
pub fn read_snapshot(log_path: &Path) -> Option<(u64, Value)> {
    let text = std::fs::read_to_string(snapshot_path(log_path)).ok()?;
    let mut lines = text.lines();
    if lines.next()? != SNAPSHOT_HEADER {
        return None;
    }
    let mut value = unframe(lines.next()?).ok()?;
    let seq = value.get("seq")?.as_u64()?;
    let state = value.get_mut("state")?.take();
    Some((seq, state))
}
