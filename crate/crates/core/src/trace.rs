//! Text trace format.
//!
//! One event per line, fields separated by spaces:
//!
//! ```text
//! T <delta_ns>
//! A <thread> <site> <bytes>
//! F <obj>
//! R <obj> <offset>
//! W <obj> <offset>
//! ```
//!
//! Lines starting with `#` are comments. The N-th `A` line creates object N.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ObjectId, SiteId, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Time(u64),
    Alloc {
        thread: ThreadId,
        site: SiteId,
        bytes: u64,
    },
    Free(ObjectId),
    Read {
        object: ObjectId,
        offset: u64,
    },
    Write {
        object: ObjectId,
        offset: u64,
    },
}

impl TraceEvent {
    pub fn is_access(&self) -> bool {
        matches!(self, TraceEvent::Read { .. } | TraceEvent::Write { .. })
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown object {object}")]
    UnknownObject { line: usize, object: ObjectId },
    #[error("line {line}: object {object} already freed")]
    DeadObject { line: usize, object: ObjectId },
    #[error("line {line}: offset {offset} outside object {object} of {size} bytes")]
    OffsetOutOfRange {
        line: usize,
        object: ObjectId,
        offset: u64,
        size: u64,
    },
}

/// A parsed, validated trace.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

fn field<T: std::str::FromStr>(
    parts: &[&str],
    idx: usize,
    line: usize,
    what: &str,
) -> Result<T, TraceError> {
    let raw = parts.get(idx).ok_or_else(|| TraceError::Malformed {
        line,
        msg: format!("missing {what}"),
    })?;
    raw.parse().map_err(|_| TraceError::Malformed {
        line,
        msg: format!("bad {what} '{raw}'"),
    })
}

impl Trace {
    pub fn parse(reader: impl BufRead) -> Result<Trace, TraceError> {
        Self::parse_with_path(reader, Path::new("<stream>"))
    }

    pub fn load(path: &Path) -> Result<Trace, TraceError> {
        let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_with_path(io::BufReader::new(file), path)
    }

    fn parse_with_path(reader: impl BufRead, path: &Path) -> Result<Trace, TraceError> {
        // (size, live) per object id - 1
        let mut objects: Vec<(u64, bool)> = Vec::new();
        let mut events = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let n = idx + 1;
            let line = line.map_err(|source| TraceError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let arity = |k: usize| -> Result<(), TraceError> {
                if parts.len() == k + 1 {
                    Ok(())
                } else {
                    Err(TraceError::Malformed {
                        line: n,
                        msg: format!("'{}' takes {k} field(s), got {}", parts[0], parts.len() - 1),
                    })
                }
            };
            let lookup = |objects: &Vec<(u64, bool)>, id: u64| -> Result<u64, TraceError> {
                let object = ObjectId(id);
                match id.checked_sub(1).and_then(|i| objects.get(i as usize)) {
                    None => Err(TraceError::UnknownObject { line: n, object }),
                    Some(&(_, false)) => Err(TraceError::DeadObject { line: n, object }),
                    Some(&(size, true)) => Ok(size),
                }
            };
            let event = match parts[0] {
                "T" => {
                    arity(1)?;
                    TraceEvent::Time(field(&parts, 1, n, "delta_ns")?)
                }
                "A" => {
                    arity(3)?;
                    let bytes: u64 = field(&parts, 3, n, "bytes")?;
                    if bytes == 0 {
                        return Err(TraceError::Malformed {
                            line: n,
                            msg: "zero-byte allocation".into(),
                        });
                    }
                    objects.push((bytes, true));
                    TraceEvent::Alloc {
                        thread: ThreadId(field(&parts, 1, n, "thread")?),
                        site: SiteId(field(&parts, 2, n, "site")?),
                        bytes,
                    }
                }
                "F" => {
                    arity(1)?;
                    let id: u64 = field(&parts, 1, n, "object")?;
                    lookup(&objects, id)?;
                    objects[id as usize - 1].1 = false;
                    TraceEvent::Free(ObjectId(id))
                }
                "R" | "W" => {
                    arity(2)?;
                    let id: u64 = field(&parts, 1, n, "object")?;
                    let offset: u64 = field(&parts, 2, n, "offset")?;
                    let size = lookup(&objects, id)?;
                    if offset >= size {
                        return Err(TraceError::OffsetOutOfRange {
                            line: n,
                            object: ObjectId(id),
                            offset,
                            size,
                        });
                    }
                    let object = ObjectId(id);
                    if parts[0] == "R" {
                        TraceEvent::Read { object, offset }
                    } else {
                        TraceEvent::Write { object, offset }
                    }
                }
                other => {
                    return Err(TraceError::Malformed {
                        line: n,
                        msg: format!("unknown event '{other}'"),
                    });
                }
            };
            events.push(event);
        }
        Ok(Trace { events })
    }

    pub fn from_text(text: &str) -> Result<Trace, TraceError> {
        Self::parse(text.as_bytes())
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        let mut buf = String::new();
        for e in &self.events {
            buf.clear();
            format_event(&mut buf, e);
            w.write_all(buf.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            format_event(&mut out, e);
        }
        out
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = String::new();
        for e in &self.events {
            buf.clear();
            format_event(&mut buf, e);
            hasher.update(buf.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn access_count(&self) -> u64 {
        self.events.iter().filter(|e| e.is_access()).count() as u64
    }
}

fn format_event(out: &mut String, e: &TraceEvent) {
    let _ = match e {
        TraceEvent::Time(d) => writeln!(out, "T {d}"),
        TraceEvent::Alloc {
            thread,
            site,
            bytes,
        } => writeln!(out, "A {thread} {site} {bytes}"),
        TraceEvent::Free(o) => writeln!(out, "F {o}"),
        TraceEvent::Read { object, offset } => writeln!(out, "R {object} {offset}"),
        TraceEvent::Write { object, offset } => writeln!(out, "W {object} {offset}"),
    };
}
