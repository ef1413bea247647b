//! Durable state: an append-only write-ahead log of change sets plus
//! content-addressed blobs.
//!
//! Each log line is `<16 hex digits of SHA-256(json)> <json>\n`, flushed to
//! disk before the change set is applied in memory. On open the log is
//! replayed; a torn or corrupt final line (a crash mid-append) is truncated,
//! corruption anywhere else is an error.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock, RwLockReadGuard};

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};
use crate::state::{Change, ChangeSet, State};

const WAL: &str = "wal.log";
const LOCK: &str = "LOCK";
const BLOBS: &str = "blobs";

fn line_tag(json: &[u8]) -> String {
    hex::encode(&Sha256::digest(json)[..8])
}

fn corrupt(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Replay outcome for a log file.
#[derive(Debug)]
pub struct Replay {
    pub state: State,
    pub records: usize,
    /// Bytes dropped from a torn tail.
    pub truncated: u64,
}

/// Read `path` and rebuild the state. Returns the replay and the length of
/// the valid prefix.
fn replay_bytes(bytes: &[u8]) -> io::Result<(Replay, u64)> {
    let mut state = State::default();
    let mut records = 0;
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let (line, complete) = match rest.iter().position(|b| *b == b'\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let parsed = parse_line(line);
        match parsed {
            Some(cs) if complete => {
                if cs.seq != state.seq + 1 {
                    return Err(corrupt(format!("log sequence jumps from {} to {}", state.seq, cs.seq)));
                }
                state.apply(&cs);
                records += 1;
                offset += line.len() + 1;
            }
            _ => {
                let is_tail = !complete || offset + line.len() + 1 == bytes.len();
                if !is_tail {
                    return Err(corrupt(format!("corrupt log record at byte {offset}")));
                }
                let valid = offset as u64;
                return Ok((
                    Replay {
                        state,
                        records,
                        truncated: bytes.len() as u64 - valid,
                    },
                    valid,
                ));
            }
        }
    }
    Ok((
        Replay {
            state,
            records,
            truncated: 0,
        },
        bytes.len() as u64,
    ))
}

fn parse_line(line: &[u8]) -> Option<ChangeSet> {
    if line.len() < 18 || line[16] != b' ' {
        return None;
    }
    let (tag, json) = (&line[..16], &line[17..]);
    if tag != line_tag(json).as_bytes() {
        return None;
    }
    serde_json::from_slice(json).ok()
}

pub struct Store {
    dir: PathBuf,
    _lock: File,
    wal: Mutex<File>,
    state: RwLock<State>,
    truncated_on_open: u64,
}

impl Store {
    /// Open or create a store, taking an exclusive lock on the directory.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join(BLOBS))?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(dir.join(LOCK))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => {
                return Err(ServiceError::Storage(io::Error::new(
                    io::ErrorKind::WouldBlock,
                    format!("data directory {} is in use by another process", dir.display()),
                )))
            }
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
        let path = dir.join(WAL);
        let mut wal = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(&path)?;
        let mut bytes = Vec::new();
        wal.read_to_end(&mut bytes)?;
        let (replay, valid) = replay_bytes(&bytes)?;
        if replay.truncated > 0 {
            tracing::warn!(bytes = replay.truncated, "discarding torn write-ahead log tail");
            wal.set_len(valid)?;
            wal.sync_all()?;
        }
        // appends go to the end regardless of the read cursor
        let wal = OpenOptions::new().append(true).open(&path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            _lock: lock,
            wal: Mutex::new(wal),
            state: RwLock::new(replay.state),
            truncated_on_open: replay.truncated,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn truncated_on_open(&self) -> u64 {
        self.truncated_on_open
    }

    /// Consistent snapshot for readers. Commits wait while it is held.
    pub fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Serialize a write: `build` sees the current state and returns the
    /// changes to persist (none means nothing to do). The changes are durable
    /// before this returns `Ok`.
    pub fn commit<T>(&self, at: DateTime<Utc>, build: impl FnOnce(&State) -> Result<(Vec<Change>, T)>) -> Result<T> {
        let mut wal = self.wal.lock().unwrap_or_else(|e| e.into_inner());
        let (changes, out, seq) = {
            let st = self.read();
            let (changes, out) = build(&st)?;
            (changes, out, st.seq + 1)
        };
        if changes.is_empty() {
            return Ok(out);
        }
        let cs = ChangeSet { seq, at, changes };
        let json = serde_json::to_vec(&cs).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mut line = Vec::with_capacity(json.len() + 18);
        line.extend_from_slice(line_tag(&json).as_bytes());
        line.push(b' ');
        line.extend_from_slice(&json);
        line.push(b'\n');
        wal.write_all(&line)?;
        wal.sync_data()?;
        self.state.write().unwrap_or_else(|e| e.into_inner()).apply(&cs);
        Ok(out)
    }

    fn blob_path(&self, checksum: &str) -> PathBuf {
        self.dir.join(BLOBS).join(checksum)
    }

    /// Store bytes under their checksum; durable before returning.
    pub fn put_blob(&self, checksum: &str, bytes: &[u8]) -> Result<()> {
        let path = self.blob_path(checksum);
        if path.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(BLOBS).join(format!("{checksum}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        File::open(self.dir.join(BLOBS))?.sync_all()?;
        Ok(())
    }

    pub fn get_blob(&self, checksum: &str) -> Result<Vec<u8>> {
        Ok(fs::read(self.blob_path(checksum))?)
    }

    /// Replay the log from disk independently of the live state.
    pub fn replay_from_disk(&self) -> Result<Replay> {
        let _writer = self.wal.lock().unwrap_or_else(|e| e.into_inner());
        let bytes = fs::read(self.dir.join(WAL))?;
        Ok(replay_bytes(&bytes)?.0)
    }
}
