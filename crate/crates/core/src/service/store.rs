//! Append-only event log with periodic snapshots.
//!
//! Layout of a store directory:
//!
//! ```text
//! meta.json       format tag and fingerprint of the served data
//! events.jsonl    one {"seq": n, "type": ..., ...} record per line
//! snapshot.json   {"seq": n, "state": ...}, state after event n
//! ```
//!
//! A crash can leave a partial last line; it is dropped on open. Any other
//! malformed line is an error.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Event, State};
use crate::error::{Error, Result};

const FORMAT: &str = "markfeed-store";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    version: u32,
    data_fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: State,
}

pub struct EventLog {
    dir: PathBuf,
    file: File,
    next_seq: u64,
    snapshot_every: u64,
    sync: bool,
}

impl EventLog {
    /// Opens or creates a store for data with the given fingerprint and
    /// returns it with the state rebuilt from snapshot plus log.
    pub fn open(
        dir: &Path,
        data_fingerprint: &str,
        snapshot_every: u64,
        sync: bool,
    ) -> Result<(Self, State)> {
        fs::create_dir_all(dir)?;
        let meta_path = dir.join("meta.json");
        if meta_path.exists() {
            let meta: Meta = serde_json::from_slice(&fs::read(&meta_path)?)?;
            if meta.format != FORMAT || meta.version != VERSION {
                return Err(Error::invalid(format!(
                    "{}: not a version {VERSION} store",
                    dir.display()
                )));
            }
            if meta.data_fingerprint != data_fingerprint {
                return Err(Error::invalid(
                    "store was created for different corpus, plan or agreement data",
                ));
            }
        } else {
            let meta = Meta {
                format: FORMAT.into(),
                version: VERSION,
                data_fingerprint: data_fingerprint.into(),
            };
            write_atomic(&meta_path, &serde_json::to_vec_pretty(&meta)?)?;
        }

        let (mut state, snap_seq) = match fs::read(dir.join("snapshot.json")) {
            Ok(bytes) => {
                let s: Snapshot = serde_json::from_slice(&bytes)?;
                (s.state, s.seq)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (State::default(), 0),
            Err(e) => return Err(e.into()),
        };
        state.rebuild_index();

        let log_path = dir.join("events.jsonl");
        let records = read_log(&log_path)?;
        let mut last = 0;
        for r in records {
            if r.seq != last + 1 {
                return Err(Error::invalid(format!(
                    "event log gap: {} follows {last}",
                    r.seq
                )));
            }
            last = r.seq;
            if r.seq > snap_seq {
                state.apply(&r.event);
            }
        }
        if last < snap_seq {
            return Err(Error::invalid("snapshot is newer than the event log"));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        Ok((
            EventLog {
                dir: dir.to_path_buf(),
                file,
                next_seq: last + 1,
                snapshot_every: snapshot_every.max(1),
                sync,
            },
            state,
        ))
    }

    /// Persists `event`; `state` must already include it when a snapshot is
    /// due, so callers apply first and then append.
    pub fn append(&mut self, event: &Event) -> Result<u64> {
        let rec = LogRecord {
            seq: self.next_seq,
            event: event.clone(),
        };
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.next_seq += 1;
        Ok(rec.seq)
    }

    pub fn maybe_snapshot(&self, state: &State) -> Result<()> {
        let seq = self.next_seq - 1;
        if seq > 0 && seq % self.snapshot_every == 0 {
            let snap = Snapshot {
                seq,
                state: state.clone(),
            };
            write_atomic(&self.dir.join("snapshot.json"), &serde_json::to_vec(&snap)?)?;
        }
        Ok(())
    }

    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads all complete records, truncating a torn final line.
fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(f);
    let mut out = Vec::new();
    let mut good_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            // torn write at the tail
            break;
        }
        let rec: LogRecord = serde_json::from_str(buf.trim_end()).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        out.push(rec);
        good_len += n as u64;
    }
    let actual = fs::metadata(path)?.len();
    if actual != good_len {
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(good_len)?;
    }
    Ok(out)
}
